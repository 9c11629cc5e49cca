//! Selectivity estimators behind one interface.
//!
//! Learned: [`DirectNn`] (flattened-encoding regression, optionally trained
//! with the self-consistency objective) and [`NeuroCdf`] (a learned CDF
//! aggregated over query vertices). Classical: [`GridHistogram`],
//! [`SamplingEstimator`], [`ParametricEstimator`] and [`Leo`].

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::Result;
use crate::neuralnet::MlpCheckpoint;
use crate::query::RangeQuery;

mod direct;
mod histogram;
mod leo;
mod neurocdf;
mod parametric;
mod sampling;
pub mod vertex;

pub use direct::{train_direct, train_seconcdf, DirectHead, DirectNn, SeconcdfConfig, OMEGA_GRID};
pub use histogram::{build_grid_histogram, GridHistogram, DEFAULT_GRID_CELL_CAP};
pub use leo::{build_leo, Leo};
pub use neurocdf::{neurocdf_estimate, train_neurocdf, NeuroCdf, NeuroCdfTraining};
pub use parametric::{fit_parametric, ParametricEstimator};
pub use sampling::{build_sampling_estimator, SamplingEstimator};
pub use vertex::{expand_query, CdfVertexExpansion, VertexCache};

pub trait SelectivityEstimator: Send + Sync {
    fn name(&self) -> &str;

    /// Estimated selectivity. Learned models may return values outside `[0, 1]`.
    fn estimate(&self, q: &RangeQuery) -> f64;

    /// Underlying model invocations so far.
    fn calls(&self) -> u64;

    /// `None` for estimators that cannot be persisted (e.g. the exact oracle).
    fn checkpoint(&self) -> Option<EstimatorCheckpoint>;

    fn estimate_all(&self, queries: &[RangeQuery]) -> Vec<f64> {
        queries.iter().map(|q| self.estimate(q)).collect()
    }
}

/// Observable invocation counter.
#[derive(Debug, Default)]
pub struct CallCounter(AtomicU64);

impl CallCounter {
    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

impl Clone for CallCounter {
    fn clone(&self) -> Self {
        CallCounter(AtomicU64::new(self.get()))
    }
}

/// Exact selectivity by full scan.
pub struct OracleEstimator {
    data: Arc<Dataset>,
    calls: CallCounter,
}

impl OracleEstimator {
    pub fn new(data: Arc<Dataset>) -> Self {
        OracleEstimator {
            data,
            calls: CallCounter::default(),
        }
    }
}

impl SelectivityEstimator for OracleEstimator {
    fn name(&self) -> &str {
        "oracle"
    }

    fn estimate(&self, q: &RangeQuery) -> f64 {
        self.calls.add(1);
        self.data.true_selectivity(q).expect("query dimensions match the dataset")
    }

    fn calls(&self) -> u64 {
        self.calls.get()
    }

    fn checkpoint(&self) -> Option<EstimatorCheckpoint> {
        None
    }
}

/// Persisted estimator: a kind tag plus kind-specific payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorCheckpoint {
    Direct {
        dims: usize,
        head: DirectHead,
        model: MlpCheckpoint,
    },
    Seconcdf {
        dims: usize,
        head: DirectHead,
        model: MlpCheckpoint,
    },
    Neurocdf {
        dims: usize,
        model: MlpCheckpoint,
    },
    Histogram(histogram::GridHistogramState),
    Sampling(sampling::SamplingState),
    Parametric(parametric::ParametricState),
    Leo {
        base: Box<EstimatorCheckpoint>,
        axis: usize,
        keys: Vec<f64>,
        ratios: Vec<f64>,
    },
}

impl EstimatorCheckpoint {
    pub fn kind(&self) -> &'static str {
        match self {
            EstimatorCheckpoint::Direct { .. } => "direct",
            EstimatorCheckpoint::Seconcdf { .. } => "seconcdf",
            EstimatorCheckpoint::Neurocdf { .. } => "neurocdf",
            EstimatorCheckpoint::Histogram(_) => "histogram",
            EstimatorCheckpoint::Sampling(_) => "sampling",
            EstimatorCheckpoint::Parametric(_) => "parametric",
            EstimatorCheckpoint::Leo { .. } => "leo",
        }
    }

    pub fn restore(self) -> Result<Box<dyn SelectivityEstimator>> {
        Ok(match self {
            EstimatorCheckpoint::Direct { dims, head, model } => {
                Box::new(DirectNn::from_parts("direct", dims, head, model)?)
            }
            EstimatorCheckpoint::Seconcdf { dims, head, model } => {
                Box::new(DirectNn::from_parts("seconcdf", dims, head, model)?)
            }
            EstimatorCheckpoint::Neurocdf { dims, model } => Box::new(NeuroCdf::from_parts(dims, model)?),
            EstimatorCheckpoint::Histogram(s) => Box::new(GridHistogram::from_state(s)?),
            EstimatorCheckpoint::Sampling(s) => Box::new(SamplingEstimator::from_state(s)?),
            EstimatorCheckpoint::Parametric(s) => Box::new(ParametricEstimator::from_state(s)?),
            EstimatorCheckpoint::Leo {
                base,
                axis,
                keys,
                ratios,
            } => Box::new(Leo::from_parts(base.restore()?, axis, keys, ratios)?),
        })
    }
}
