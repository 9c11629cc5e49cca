use ndarray::Array2;

use super::vertex::{expand_query, VertexCache};
use super::{CallCounter, EstimatorCheckpoint, SelectivityEstimator};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::neuralnet::{fit, LossKind, Mlp, MlpCheckpoint, OutputActivation, TrainConfig};
use crate::query::RangeQuery;
use crate::workload::Workload;

/// Selectivity as the signed sum of a learned CDF over the query's vertices.
///
/// Any point function aggregated this way is induced by a signed measure, so
/// estimates are finitely additive by construction. They are not guaranteed
/// to be nonnegative.
#[derive(Clone, Debug)]
pub struct NeuroCdf {
    dims: usize,
    model: Mlp,
    calls: CallCounter,
}

impl NeuroCdf {
    pub fn new(model: Mlp) -> Self {
        NeuroCdf {
            dims: model.input_size(),
            model,
            calls: CallCounter::default(),
        }
    }

    pub(super) fn from_parts(dims: usize, ck: MlpCheckpoint) -> Result<Self> {
        let model = Mlp::from_checkpoint(ck)?;
        if model.input_size() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                actual: model.input_size(),
            });
        }
        Ok(NeuroCdf::new(model))
    }

    pub fn model(&self) -> &Mlp {
        &self.model
    }

    /// Learned `F(v)`.
    pub fn cdf(&self, vertex: &[f64]) -> Result<f64> {
        self.model.forward(vertex)
    }
}

/// `sum_v sgn(v) M(v)` over the surviving vertices of `q`, plus the number of
/// model calls made.
pub fn neurocdf_estimate(model: &Mlp, q: &RangeQuery) -> Result<(f64, usize)> {
    q.check_dims(model.input_size())?;
    let e = expand_query(q);
    if e.terms.is_empty() {
        return Ok((0.0, 0));
    }
    let d = q.dims();
    let mut x = Vec::with_capacity(e.terms.len() * d);
    for t in &e.terms {
        x.extend_from_slice(&t.vertex);
    }
    let x = Array2::from_shape_vec((e.terms.len(), d), x).unwrap();
    let out = model.forward_batch(x.view());
    let s = e.terms.iter().zip(out.iter()).map(|(t, y)| t.sign * y).sum();
    Ok((s, e.terms.len()))
}

impl SelectivityEstimator for NeuroCdf {
    fn name(&self) -> &str {
        "neurocdf"
    }

    fn estimate(&self, q: &RangeQuery) -> f64 {
        let (s, calls) = neurocdf_estimate(&self.model, q).expect("query dimensions match the model");
        self.calls.add(calls as u64);
        s
    }

    fn calls(&self) -> u64 {
        self.calls.get()
    }

    fn checkpoint(&self) -> Option<EstimatorCheckpoint> {
        Some(EstimatorCheckpoint::Neurocdf {
            dims: self.dims,
            model: self.model.to_checkpoint(),
        })
    }
}

pub struct NeuroCdfTraining {
    pub estimator: NeuroCdf,
    pub loss_trace: Vec<f64>,
    /// Query expansions performed during training.
    pub expansions_computed: usize,
}

/// Train the CDF network end to end through the signed vertex aggregation
/// with mean squared error on the aggregated selectivity.
pub fn train_neurocdf(ds: &Dataset, train: &Workload, cfg: &TrainConfig) -> Result<NeuroCdfTraining> {
    if cfg.loss != LossKind::Mse {
        return Err(Error::Config(format!(
            "NeuroCDF trains with mse only: its estimates can be negative, where Qerror/MSLE are undefined (got {:?})",
            cfg.loss
        )));
    }
    let d = ds.dims();
    for q in train.queries() {
        q.check_dims(d)?;
    }
    let mut model = Mlp::new(&cfg.layer_sizes(d), OutputActivation::Sigmoid, cfg.init_seed())?;
    let labels: Vec<f64> = train.items.iter().map(|(_, s)| *s).collect();
    let queries: Vec<&RangeQuery> = train.queries().collect();

    let mut expansions = 0usize;
    let cache = cfg.precompute_vertices.then(|| {
        expansions += queries.len();
        VertexCache::build(d, queries.iter().copied())
    });

    let trace = fit(&mut model, queries.len(), cfg, |model, batch, grads| {
        let local;
        let (cache, rows): (&VertexCache, Vec<usize>) = match &cache {
            Some(c) => (c, batch.to_vec()),
            None => {
                expansions += batch.len();
                local = VertexCache::build(d, batch.iter().map(|&i| queries[i]));
                (&local, (0..batch.len()).collect())
            }
        };
        aggregated_mse_step(model, cache, &rows, batch.iter().map(|&i| labels[i]), grads)
    })?;

    Ok(NeuroCdfTraining {
        estimator: NeuroCdf::new(model),
        loss_trace: trace,
        expansions_computed: expansions,
    })
}

/// One minibatch of the aggregated MSE objective. `rows[k]` indexes the cache
/// entry of the k-th batch query and `labels` yields its true selectivity.
fn aggregated_mse_step(
    model: &Mlp,
    cache: &VertexCache,
    rows: &[usize],
    labels: impl Iterator<Item = f64>,
    grads: &mut [f64],
) -> f64 {
    let d = model.input_size();
    let n_terms: usize = rows.iter().map(|&r| cache.term_range(r).len()).sum();
    let b = rows.len() as f64;
    if n_terms == 0 {
        return labels.map(|w| w * w).sum::<f64>() / b;
    }
    let mut x = Vec::with_capacity(n_terms * d);
    for &r in rows {
        for t in cache.term_range(r) {
            x.extend_from_slice(cache.vertex(t));
        }
    }
    let x = Array2::from_shape_vec((n_terms, d), x).unwrap();
    let fwd = model.forward_cached(x.view());
    let out = fwd.outputs();
    let mut d_out = vec![0.0; n_terms];
    let mut total = 0.0;
    let mut k = 0;
    for (&r, w) in rows.iter().zip(labels) {
        let range = cache.term_range(r);
        let start = k;
        let mut s = 0.0;
        for t in range.clone() {
            s += cache.sign(t) * out[k];
            k += 1;
        }
        let err = s - w;
        total += err * err;
        let g = 2.0 * err / b;
        for (j, t) in range.enumerate() {
            d_out[start + j] = cache.sign(t) * g;
        }
    }
    model.backward(&fwd, &d_out, grads);
    total / b
}
