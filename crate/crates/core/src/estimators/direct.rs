use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vertex::{expand_query, VertexCache};
use super::{CallCounter, EstimatorCheckpoint, SelectivityEstimator};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::neuralnet::{fit, loss, LossKind, Mlp, MlpCheckpoint, OutputActivation, TrainConfig};
use crate::query::RangeQuery;
use crate::workload::{Span, Workload, WorkloadSpec};

/// Candidate values for the two auxiliary loss weights.
pub const OMEGA_GRID: [f64; 4] = [0.1, 1.0, 10.0, 100.0];

/// How the network output maps to a selectivity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectHead {
    /// Identity output read as log-selectivity; used with log losses.
    LogSelectivity,
    /// Sigmoid output read as selectivity; used with mse.
    Sigmoid,
}

impl DirectHead {
    pub fn for_loss(kind: LossKind) -> Self {
        match kind {
            LossKind::Mse => DirectHead::Sigmoid,
            LossKind::Msle | LossKind::Qerror => DirectHead::LogSelectivity,
        }
    }

    fn activation(self) -> OutputActivation {
        match self {
            DirectHead::LogSelectivity => OutputActivation::Identity,
            DirectHead::Sigmoid => OutputActivation::Sigmoid,
        }
    }

    #[inline]
    fn selectivity(self, out: f64) -> f64 {
        match self {
            DirectHead::LogSelectivity => out.exp(),
            DirectHead::Sigmoid => out,
        }
    }

    /// `d selectivity / d out` given the selectivity.
    #[inline]
    fn slope(self, sel: f64) -> f64 {
        match self {
            DirectHead::LogSelectivity => sel,
            DirectHead::Sigmoid => 1.0,
        }
    }
}

/// Regression over the flattened encoding `[lo_1, hi_1, ..., lo_d, hi_d]`.
/// One forward pass per estimate.
#[derive(Clone, Debug)]
pub struct DirectNn {
    name: String,
    dims: usize,
    head: DirectHead,
    model: Mlp,
    calls: CallCounter,
}

impl DirectNn {
    pub fn new(name: &str, head: DirectHead, model: Mlp) -> Result<Self> {
        if model.input_size() % 2 != 0 || model.output_activation() != head.activation() {
            return Err(Error::Config("model shape does not fit a direct estimator".into()));
        }
        Ok(DirectNn {
            name: name.to_owned(),
            dims: model.input_size() / 2,
            head,
            model,
            calls: CallCounter::default(),
        })
    }

    pub(super) fn from_parts(name: &str, dims: usize, head: DirectHead, ck: MlpCheckpoint) -> Result<Self> {
        let nn = DirectNn::new(name, head, Mlp::from_checkpoint(ck)?)?;
        if nn.dims != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                actual: nn.dims,
            });
        }
        Ok(nn)
    }

    pub fn model(&self) -> &Mlp {
        &self.model
    }

    pub fn head(&self) -> DirectHead {
        self.head
    }
}

impl SelectivityEstimator for DirectNn {
    fn name(&self) -> &str {
        &self.name
    }

    fn estimate(&self, q: &RangeQuery) -> f64 {
        self.calls.add(1);
        let out = self.model.forward(&q.encode()).expect("query dimensions match the model");
        self.head.selectivity(out)
    }

    fn calls(&self) -> u64 {
        self.calls.get()
    }

    fn checkpoint(&self) -> Option<EstimatorCheckpoint> {
        let model = self.model.to_checkpoint();
        let (dims, head) = (self.dims, self.head);
        Some(if self.name == "seconcdf" {
            EstimatorCheckpoint::Seconcdf { dims, head, model }
        } else {
            EstimatorCheckpoint::Direct { dims, head, model }
        })
    }
}

/// Weights and query source for the two auxiliary losses of self-consistency
/// training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeconcdfConfig {
    /// Weight of the CDF-prediction loss on training queries.
    pub omega1: f64,
    /// Weight of the direct-vs-CDF consistency loss on sampled queries.
    pub omega2: f64,
    /// Distribution of the unlabeled consistency queries; only its shape and
    /// seed are used, `n_queries` is ignored.
    pub consistency_sampler: WorkloadSpec,
    /// Consistency queries drawn per minibatch.
    pub consistency_batch: usize,
}

impl SeconcdfConfig {
    /// Consistency queries uniform over every center and length, with the
    /// training workload's filter counts.
    pub fn broadened(train: &WorkloadSpec, omega1: f64, omega2: f64, consistency_batch: usize, seed: u64) -> Self {
        let mut sampler = train.clone();
        sampler.center_bounds = Span::new(0.0, 1.0);
        sampler.length_bounds = Span::new(0.0, 1.0);
        sampler.other_columns.center_bounds = Span::new(0.0, 1.0);
        sampler.other_columns.length_bounds = Span::new(0.0, 1.0);
        sampler.seed = seed;
        SeconcdfConfig {
            omega1,
            omega2,
            consistency_sampler: sampler,
            consistency_batch,
        }
    }

    fn validate(&self, dims: usize) -> Result<()> {
        if !(self.omega1 >= 0.0 && self.omega2 >= 0.0) {
            return Err(Error::Config("omega1 and omega2 must be >= 0".into()));
        }
        if self.omega2 > 0.0 {
            if self.consistency_batch == 0 {
                return Err(Error::Config("consistency_batch must be >= 1".into()));
            }
            self.consistency_sampler.validate(dims)?;
        }
        Ok(())
    }
}

/// Train a direct model on the given loss.
pub fn train_direct(ds: &Dataset, train: &Workload, cfg: &TrainConfig) -> Result<(DirectNn, Vec<f64>)> {
    train_direct_model(ds, train, cfg, None)
}

/// Train a direct model with `L_ori + omega1 * L_cdf + omega2 * L_consistent`.
///
/// The CDF-aggregated prediction of a query expands it into vertices, reads
/// each vertex `v` as the one-sided query `(0, v_i]` through the same direct
/// model, and sums with the vertex signs. The architecture and the inference
/// path are those of [`train_direct`]; consistency queries are never labeled.
pub fn train_seconcdf(
    ds: &Dataset,
    train: &Workload,
    cfg: &TrainConfig,
    sc: &SeconcdfConfig,
) -> Result<(DirectNn, Vec<f64>)> {
    sc.validate(ds.dims())?;
    train_direct_model(ds, train, cfg, Some(sc))
}

fn one_sided_encoding(vertex: &[f64], out: &mut Vec<f64>) {
    for &v in vertex {
        out.push(0.0);
        out.push(v);
    }
}

/// Rows of the stacked input matrix that belong to one query's CDF branch.
struct CdfBlock {
    start: usize,
    signs: Vec<f64>,
}

fn push_cdf_rows(cache: &VertexCache, entry: usize, x: &mut Vec<f64>, row: &mut usize) -> CdfBlock {
    let start = *row;
    let signs = cache
        .term_range(entry)
        .map(|t| {
            one_sided_encoding(cache.vertex(t), x);
            *row += 1;
            cache.sign(t)
        })
        .collect();
    CdfBlock { start, signs }
}

fn train_direct_model(
    ds: &Dataset,
    train: &Workload,
    cfg: &TrainConfig,
    sc: Option<&SeconcdfConfig>,
) -> Result<(DirectNn, Vec<f64>)> {
    let d = ds.dims();
    for q in train.queries() {
        q.check_dims(d)?;
    }
    let head = DirectHead::for_loss(cfg.loss);
    let kind = cfg.loss.training_surrogate();
    let floor = cfg.clip_floor_for(ds.n_rows());
    let mut model = Mlp::new(&cfg.layer_sizes(2 * d), head.activation(), cfg.init_seed())?;

    let encodings: Vec<Vec<f64>> = train.queries().map(RangeQuery::encode).collect();
    let labels: Vec<f64> = train.items.iter().map(|(_, s)| *s).collect();

    let (omega1, omega2) = sc.map_or((0.0, 0.0), |s| (s.omega1, s.omega2));
    let train_vertices = (omega1 > 0.0).then(|| VertexCache::build(d, train.queries()));
    let mut sampler_rng = sc.map(|s| ChaCha8Rng::seed_from_u64(s.consistency_sampler.seed));

    let trace = fit(&mut model, encodings.len(), cfg, |model, batch, grads| {
        let mut x: Vec<f64> = Vec::with_capacity(batch.len() * 2 * d);
        for &i in batch {
            x.extend_from_slice(&encodings[i]);
        }
        let mut rows = batch.len();

        let cdf_train: Vec<CdfBlock> = match &train_vertices {
            Some(cache) => batch
                .iter()
                .map(|&i| push_cdf_rows(cache, i, &mut x, &mut rows))
                .collect(),
            None => Vec::new(),
        };

        // Consistency queries: direct row followed by CDF rows.
        let mut consistency: Vec<(usize, CdfBlock)> = Vec::new();
        if let (Some(s), Some(rng)) = (sc, sampler_rng.as_mut()) {
            if s.omega2 > 0.0 {
                let mut local = VertexCache::build(d, std::iter::empty());
                let mut direct_rows = Vec::with_capacity(s.consistency_batch);
                for _ in 0..s.consistency_batch {
                    let q = s.consistency_sampler.sample_query(d, rng);
                    local.push(&expand_query(&q));
                    q.encode_into(&mut x);
                    direct_rows.push(rows);
                    rows += 1;
                }
                for (j, r) in direct_rows.into_iter().enumerate() {
                    consistency.push((r, push_cdf_rows(&local, j, &mut x, &mut rows)));
                }
            }
        }

        let x = Array2::from_shape_vec((rows, 2 * d), x).unwrap();
        let fwd = model.forward_cached(x.view());
        let out = fwd.outputs();
        let sel: Vec<f64> = out.iter().map(|&y| head.selectivity(y)).collect();
        let mut d_out = vec![0.0; rows];
        let b = batch.len() as f64;

        // L_ori on the direct predictions.
        let mut l_ori = 0.0;
        for (k, &i) in batch.iter().enumerate() {
            let w = labels[i];
            let (l, g) = direct_loss(head, kind, out[k], sel[k], w, floor);
            l_ori += l;
            d_out[k] += g / b;
        }
        l_ori /= b;

        let aggregate = |blk: &CdfBlock| -> f64 {
            blk.signs
                .iter()
                .enumerate()
                .map(|(j, s)| s * sel[blk.start + j])
                .sum()
        };
        let spread = |blk: &CdfBlock, g: f64, d_out: &mut [f64]| {
            for (j, s) in blk.signs.iter().enumerate() {
                let r = blk.start + j;
                d_out[r] += s * g * head.slope(sel[r]);
            }
        };

        // L_cdf: RMSE of the CDF-aggregated prediction against the label.
        let mut l_cdf = 0.0;
        if !cdf_train.is_empty() {
            let errs: Vec<f64> = cdf_train
                .iter()
                .zip(batch)
                .map(|(blk, &i)| aggregate(blk) - labels[i])
                .collect();
            l_cdf = (errs.iter().map(|e| e * e).sum::<f64>() / b).sqrt();
            if l_cdf > 0.0 {
                for (blk, e) in cdf_train.iter().zip(&errs) {
                    spread(blk, omega1 * e / (b * l_cdf), &mut d_out);
                }
            }
        }

        // L_consistent: direct vs. CDF-aggregated on unlabeled queries.
        let mut l_cons = 0.0;
        if !consistency.is_empty() {
            let k = consistency.len() as f64;
            for (r, blk) in &consistency {
                let diff = sel[*r] - aggregate(blk);
                l_cons += diff * diff;
                let g = omega2 * 2.0 * diff / k;
                d_out[*r] += g * head.slope(sel[*r]);
                spread(blk, -g, &mut d_out);
            }
            l_cons /= k;
        }

        model.backward(&fwd, &d_out, grads);
        l_ori + omega1 * l_cdf + omega2 * l_cons
    })?;

    let name = if sc.is_some() { "seconcdf" } else { "direct" };
    Ok((DirectNn::new(name, head, model)?, trace))
}

/// Loss on one direct prediction and its derivative with respect to the raw
/// network output.
///
/// With the log head, MSLE is the squared error between the log output and
/// the floored log label; the prediction `exp(out)` is always positive, so
/// only the label needs flooring.
fn direct_loss(head: DirectHead, kind: LossKind, out: f64, sel: f64, label: f64, floor: f64) -> (f64, f64) {
    match (head, kind) {
        (DirectHead::LogSelectivity, LossKind::Msle) => {
            let e = out - label.max(floor).ln();
            (e * e, 2.0 * e)
        }
        _ => {
            let l = loss(kind, sel, label, floor);
            let g = crate::neuralnet::loss_grad(kind, sel, label, floor) * head.slope(sel);
            (l, g)
        }
    }
}
