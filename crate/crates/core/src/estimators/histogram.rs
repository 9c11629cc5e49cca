use serde::{Deserialize, Serialize};

use super::{CallCounter, EstimatorCheckpoint, SelectivityEstimator};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::query::RangeQuery;

/// Largest `buckets_per_dim^d` accepted by default.
pub const DEFAULT_GRID_CELL_CAP: usize = 1 << 24;

/// Equi-width d-dimensional grid of row fractions.
///
/// Bucket `k` of a column covers `(k/B, (k+1)/B]`, with 0 folded into bucket 0.
/// A query picks up each cell's mass times the product of per-column overlap
/// fractions, i.e. mass is uniform inside a cell. Only occupied cells are stored.
#[derive(Clone, Debug)]
pub struct GridHistogram {
    buckets: usize,
    dims: usize,
    /// Bucket coordinates of occupied cells, `dims` entries per cell.
    cells: Vec<u32>,
    mass: Vec<f64>,
    calls: CallCounter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridHistogramState {
    pub buckets: usize,
    pub dims: usize,
    pub cells: Vec<u32>,
    pub mass: Vec<f64>,
}

fn bucket_of(x: f64, buckets: usize) -> usize {
    let b = buckets as f64;
    let mut k = ((x * b).ceil() as usize).saturating_sub(1).min(buckets - 1);
    while k > 0 && x <= k as f64 / b {
        k -= 1;
    }
    while k + 1 < buckets && x > (k + 1) as f64 / b {
        k += 1;
    }
    k
}

pub fn build_grid_histogram(ds: &Dataset, buckets_per_dim: usize, cell_cap: usize) -> Result<GridHistogram> {
    if buckets_per_dim == 0 {
        return Err(Error::Config("buckets_per_dim must be >= 1".into()));
    }
    let cells = (buckets_per_dim as u128).checked_pow(ds.dims() as u32).unwrap_or(u128::MAX);
    if cells > cell_cap as u128 {
        return Err(Error::GridTooLarge { cells, cap: cell_cap });
    }
    let d = ds.dims();
    let mut keyed: Vec<Vec<u32>> = ds
        .rows()
        .map(|row| row.iter().map(|&x| bucket_of(x, buckets_per_dim) as u32).collect())
        .collect();
    keyed.sort_unstable();
    let n = ds.n_rows() as f64;
    let mut coords = Vec::new();
    let mut mass = Vec::new();
    let mut i = 0;
    while i < keyed.len() {
        let mut j = i;
        while j < keyed.len() && keyed[j] == keyed[i] {
            j += 1;
        }
        coords.extend_from_slice(&keyed[i]);
        mass.push((j - i) as f64 / n);
        i = j;
    }
    debug_assert_eq!(coords.len(), mass.len() * d);
    Ok(GridHistogram {
        buckets: buckets_per_dim,
        dims: d,
        cells: coords,
        mass,
        calls: CallCounter::default(),
    })
}

impl GridHistogram {
    pub fn buckets_per_dim(&self) -> usize {
        self.buckets
    }

    pub fn occupied_cells(&self) -> usize {
        self.mass.len()
    }

    pub(super) fn from_state(s: GridHistogramState) -> Result<Self> {
        if s.buckets == 0 || s.dims == 0 || s.cells.len() != s.mass.len() * s.dims {
            return Err(Error::Config("histogram checkpoint is malformed".into()));
        }
        Ok(GridHistogram {
            buckets: s.buckets,
            dims: s.dims,
            cells: s.cells,
            mass: s.mass,
            calls: CallCounter::default(),
        })
    }

    /// Overlap fraction of each bucket with the query, per column.
    fn coverage(&self, q: &RangeQuery) -> Vec<Option<Vec<f64>>> {
        let b = self.buckets as f64;
        q.bounds()
            .iter()
            .map(|bound| {
                bound.map(|iv| {
                    (0..self.buckets)
                        .map(|k| {
                            let lo = k as f64 / b;
                            let hi = (k + 1) as f64 / b;
                            let overlap = iv.hi.min(hi) - iv.lo.max(lo);
                            if overlap <= 0.0 {
                                0.0
                            } else if iv.lo <= lo && hi <= iv.hi {
                                1.0
                            } else {
                                (overlap * b).min(1.0)
                            }
                        })
                        .collect()
                })
            })
            .collect()
    }
}

impl SelectivityEstimator for GridHistogram {
    fn name(&self) -> &str {
        "histogram"
    }

    fn estimate(&self, q: &RangeQuery) -> f64 {
        self.calls.add(1);
        assert_eq!(q.dims(), self.dims, "query dimensions match the histogram");
        let cov = self.coverage(q);
        let constrained: Vec<(usize, &Vec<f64>)> =
            cov.iter().enumerate().filter_map(|(c, f)| f.as_ref().map(|f| (c, f))).collect();
        self.cells
            .chunks_exact(self.dims)
            .zip(&self.mass)
            .map(|(cell, &m)| {
                constrained
                    .iter()
                    .fold(m, |acc, (c, f)| acc * f[cell[*c] as usize])
            })
            .sum()
    }

    fn calls(&self) -> u64 {
        self.calls.get()
    }

    fn checkpoint(&self) -> Option<EstimatorCheckpoint> {
        Some(EstimatorCheckpoint::Histogram(GridHistogramState {
            buckets: self.buckets,
            dims: self.dims,
            cells: self.cells.clone(),
            mass: self.mass.clone(),
        }))
    }
}
