use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CallCounter, EstimatorCheckpoint, SelectivityEstimator};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::query::RangeQuery;

/// Fraction of a uniform row sample (without replacement) matching the query.
#[derive(Clone, Debug)]
pub struct SamplingEstimator {
    dims: usize,
    rows: Vec<f64>,
    calls: CallCounter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingState {
    pub dims: usize,
    pub rows: Vec<f64>,
}

pub fn build_sampling_estimator(ds: &Dataset, sample_size: usize, seed: u64) -> Result<SamplingEstimator> {
    if sample_size == 0 {
        return Err(Error::Config("sample_size must be >= 1".into()));
    }
    let n = ds.n_rows();
    let mut picked: Vec<usize> = if sample_size >= n {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        index::sample(&mut rng, n, sample_size).into_vec()
    };
    picked.sort_unstable();
    let mut rows = Vec::with_capacity(picked.len() * ds.dims());
    for i in picked {
        rows.extend_from_slice(ds.row(i));
    }
    Ok(SamplingEstimator {
        dims: ds.dims(),
        rows,
        calls: CallCounter::default(),
    })
}

impl SamplingEstimator {
    pub fn sample_size(&self) -> usize {
        self.rows.len() / self.dims
    }

    pub(super) fn from_state(s: SamplingState) -> Result<Self> {
        if s.dims == 0 || s.rows.is_empty() || s.rows.len() % s.dims != 0 {
            return Err(Error::Config("sampling checkpoint has a malformed row buffer".into()));
        }
        Ok(SamplingEstimator {
            dims: s.dims,
            rows: s.rows,
            calls: CallCounter::default(),
        })
    }
}

impl SelectivityEstimator for SamplingEstimator {
    fn name(&self) -> &str {
        "sampling"
    }

    fn estimate(&self, q: &RangeQuery) -> f64 {
        self.calls.add(1);
        let hits = self.rows.chunks_exact(self.dims).filter(|r| q.matches(r)).count();
        hits as f64 / self.sample_size() as f64
    }

    fn calls(&self) -> u64 {
        self.calls.get()
    }

    fn checkpoint(&self) -> Option<EstimatorCheckpoint> {
        Some(EstimatorCheckpoint::Sampling(SamplingState {
            dims: self.dims,
            rows: self.rows.clone(),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_gaussian, GaussianSpec};
    use crate::workload::WorkloadSpec;

    fn ds(rows: usize) -> Dataset {
        generate_gaussian(&GaussianSpec {
            dims: 4,
            rows,
            correlation: 0.7,
            seed: 21,
        })
        .unwrap()
    }

    #[test]
    fn full_sample_is_exact() {
        let ds = ds(1_000);
        let est = build_sampling_estimator(&ds, ds.n_rows(), 0).unwrap();
        for q in WorkloadSpec::uniform(4, 200, 3).sample_queries(4).unwrap() {
            assert_eq!(est.estimate(&q), ds.true_selectivity(&q).unwrap());
        }
        assert_eq!(est.estimate(&RangeQuery::unconstrained(4)), 1.0);
    }

    #[test]
    fn small_sample_is_within_binomial_bound() {
        let ds = ds(49_000);
        let est = build_sampling_estimator(&ds, 1_000, 5).unwrap();
        let queries = WorkloadSpec::uniform(4, 2_000, 8).sample_queries(4).unwrap();
        let within = queries
            .iter()
            .filter(|q| {
                let s = ds.true_selectivity(q).unwrap();
                let bound = 3.0 * (s * (1.0 - s) / 1_000.0).sqrt();
                (est.estimate(q) - s).abs() <= bound + 1e-12
            })
            .count();
        assert!(within as f64 >= 0.99 * queries.len() as f64, "{within}");
    }
}
