//! Query-driven selectivity learning for hyper-rectangle range queries.
//!
//! The crate learns selectivity functions from labeled query workloads and
//! compares estimators that are induced by (signed) measures, such as the
//! CDF-modeling estimator in [`estimators::NeuroCdf`], against direct
//! regression models and classical baselines. It also generates the
//! workload-shift scenarios used to probe out-of-distribution behaviour and
//! checks learned functions for finite additivity and monotonicity.

pub mod data;
pub mod estimators;
pub mod error;
pub mod harness;
pub mod measurecheck;
pub mod metrics;
pub mod neuralnet;
pub mod query;
pub mod workload;

pub use data::{generate_gaussian, load_csv, Dataset, GaussianSpec};
pub use error::{Error, Result};
pub use query::{Interval, RangeQuery};
pub use workload::{Workload, WorkloadSpec, WorkloadTag};
