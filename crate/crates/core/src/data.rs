//! Datasets normalized to the unit cube and the exact selectivity oracle.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::RangeQuery;

/// Per-column affine map from raw values into `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnNorm {
    pub min: f64,
    pub max: f64,
}

impl ColumnNorm {
    pub fn is_constant(&self) -> bool {
        self.max <= self.min
    }

    pub fn normalize(&self, raw: f64) -> f64 {
        if self.is_constant() {
            0.5
        } else {
            ((raw - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        }
    }

    /// Inverse map; `None` for constant columns.
    pub fn denormalize(&self, unit: f64) -> Option<f64> {
        (!self.is_constant()).then(|| self.min + unit * (self.max - self.min))
    }
}

/// Immutable table of points in `[0, 1]^d`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    points: Vec<f64>,
    dims: usize,
    column_names: Vec<String>,
    normalization: Vec<ColumnNorm>,
    seed: Option<u64>,
}

/// Sidecar metadata written next to a persisted dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n_rows: usize,
    pub column_names: Vec<String>,
    pub normalization: Vec<ColumnNorm>,
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl Dataset {
    /// Normalize raw rows by per-column empirical min/max.
    pub fn from_raw_rows(column_names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let dims = column_names.len();
        if dims == 0 {
            return Err(Error::Config("dataset needs at least one column".into()));
        }
        if rows.is_empty() {
            return Err(Error::Config("dataset needs at least one row".into()));
        }
        let mut normalization = vec![
            ColumnNorm {
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
            };
            dims
        ];
        for (r, row) in rows.iter().enumerate() {
            if row.len() != dims {
                return Err(Error::Ragged {
                    row: r,
                    expected: dims,
                    found: row.len(),
                });
            }
            for (norm, &v) in normalization.iter_mut().zip(row) {
                norm.min = norm.min.min(v);
                norm.max = norm.max.max(v);
            }
        }
        let mut points = Vec::with_capacity(rows.len() * dims);
        for row in rows {
            points.extend(row.iter().zip(&normalization).map(|(&v, n)| n.normalize(v)));
        }
        Ok(Dataset {
            points,
            dims,
            column_names,
            normalization,
            seed: None,
        })
    }

    /// Build from coordinates that are already in `[0, 1]`.
    pub fn from_unit_rows(column_names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let dims = column_names.len();
        if dims == 0 || rows.is_empty() {
            return Err(Error::Config("dataset needs at least one row and one column".into()));
        }
        let mut points = Vec::with_capacity(rows.len() * dims);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != dims {
                return Err(Error::Ragged {
                    row: r,
                    expected: dims,
                    found: row.len(),
                });
            }
            for (c, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Parse {
                        row: r,
                        column: c,
                        message: format!("{v} is outside [0, 1]"),
                    });
                }
            }
            points.extend_from_slice(row);
        }
        Ok(Dataset {
            points,
            dims,
            column_names,
            normalization: vec![ColumnNorm { min: 0.0, max: 1.0 }; dims],
            seed: None,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn n_rows(&self) -> usize {
        self.points.len() / self.dims
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn normalization(&self) -> &[ColumnNorm] {
        &self.normalization
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.dims..(i + 1) * self.dims]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.points.chunks_exact(self.dims)
    }

    /// Rows matching `q`, by full scan.
    pub fn count(&self, q: &RangeQuery) -> Result<usize> {
        q.check_dims(self.dims)?;
        Ok(self.rows().filter(|row| q.matches(row)).count())
    }

    /// Exact selectivity `S_D(q)`: matching rows over total rows.
    pub fn true_selectivity(&self, q: &RangeQuery) -> Result<f64> {
        Ok(self.count(q)? as f64 / self.n_rows() as f64)
    }

    /// Label every query with its true selectivity. Order is preserved.
    pub fn label_workload(&self, queries: Vec<RangeQuery>) -> Result<Vec<(RangeQuery, f64)>> {
        queries
            .into_par_iter()
            .map(|q| {
                let s = self.true_selectivity(&q)?;
                Ok((q, s))
            })
            .collect()
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            n_rows: self.n_rows(),
            column_names: self.column_names.clone(),
            normalization: self.normalization.clone(),
            seed: self.seed,
            config_hash: None,
        }
    }

    /// Write the normalized points as CSV (with header) plus a `.meta.json` sidecar.
    pub fn save(&self, path: &Path, config_hash: Option<&str>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.column_names)?;
        for row in self.rows() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let mut meta = self.meta();
        meta.config_hash = config_hash.map(str::to_owned);
        let sidecar = meta_path(path);
        let text = serde_json::to_string_pretty(&meta)?;
        fs::write(&sidecar, text + "\n").map_err(|e| Error::io(&sidecar, e))
    }

    /// Load a dataset written by [`Dataset::save`], restoring its normalization.
    pub fn open(path: &Path) -> Result<Self> {
        let sidecar = meta_path(path);
        let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let meta: DatasetMeta = serde_json::from_str(&text)?;
        let (names, rows) = read_numeric_csv(path, true)?;
        let mut ds = Dataset::from_unit_rows(names, &rows)?;
        if ds.n_rows() != meta.n_rows || meta.normalization.len() != ds.dims {
            return Err(Error::Config(format!(
                "{} does not match its metadata",
                path.display()
            )));
        }
        ds.normalization = meta.normalization;
        ds.seed = meta.seed;
        Ok(ds)
    }
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Ingest a rectangular numeric CSV and normalize each column by min/max.
pub fn load_csv(path: &Path, has_header: bool) -> Result<Dataset> {
    let (names, rows) = read_numeric_csv(path, has_header)?;
    Dataset::from_raw_rows(names, &rows)
}

fn read_numeric_csv(path: &Path, has_header: bool) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut records = reader.records();
    let mut names: Option<Vec<String>> = None;
    if has_header {
        if let Some(header) = records.next() {
            names = Some(header?.iter().map(str::to_owned).collect());
        }
    }
    let mut rows = Vec::new();
    let first_data_row = usize::from(has_header);
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        let row_no = i + first_data_row;
        let expected = names.as_ref().map_or_else(
            || rows.first().map_or(rec.len(), |r: &Vec<f64>| r.len()),
            Vec::len,
        );
        if rec.len() != expected {
            return Err(Error::Ragged {
                row: row_no,
                expected,
                found: rec.len(),
            });
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, cell)| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(v) => Err(Error::Parse {
                    row: row_no,
                    column: c,
                    message: format!("non-finite value {v}"),
                }),
                Err(e) => Err(Error::Parse {
                    row: row_no,
                    column: c,
                    message: format!("{cell:?}: {e}"),
                }),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let dims = names
        .as_ref()
        .map(Vec::len)
        .or_else(|| rows.first().map(Vec::len))
        .unwrap_or(0);
    let names = names.unwrap_or_else(|| (0..dims).map(|i| format!("c{i}")).collect());
    Ok((names, rows))
}

/// Equicorrelated multivariate normal, normalized per column by min/max.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub dims: usize,
    pub rows: usize,
    /// Off-diagonal entry of the covariance matrix, shared by all pairs.
    pub correlation: f64,
    pub seed: u64,
}

impl Default for GaussianSpec {
    fn default() -> Self {
        GaussianSpec {
            dims: 10,
            rows: 49_000,
            correlation: 0.8,
            seed: 0,
        }
    }
}

impl GaussianSpec {
    fn validate(&self) -> Result<()> {
        if self.dims == 0 || self.rows == 0 {
            return Err(Error::Config("gaussian spec needs dims >= 1 and rows >= 1".into()));
        }
        // Equicorrelation is positive definite iff -1/(d-1) < rho < 1.
        let lower = if self.dims > 1 {
            -1.0 / (self.dims as f64 - 1.0)
        } else {
            f64::NEG_INFINITY
        };
        if !(self.correlation > lower && self.correlation < 1.0) || !(self.correlation >= 0.0) {
            return Err(Error::Config(format!(
                "correlation {} does not give a positive definite covariance in [0, 1)",
                self.correlation
            )));
        }
        Ok(())
    }

    /// Raw (unnormalized) samples, one `Vec` per row.
    ///
    /// Uses the one-factor form `x_i = sqrt(rho) z_0 + sqrt(1 - rho) z_i`, which
    /// has unit variances and pairwise covariance `rho`.
    pub fn sample_raw(&self) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let shared = self.correlation.sqrt();
        let own = (1.0 - self.correlation).sqrt();
        Ok((0..self.rows)
            .map(|_| {
                let z0: f64 = StandardNormal.sample(&mut rng);
                (0..self.dims)
                    .map(|_| {
                        let zi: f64 = StandardNormal.sample(&mut rng);
                        shared * z0 + own * zi
                    })
                    .collect()
            })
            .collect())
    }
}

pub fn generate_gaussian(spec: &GaussianSpec) -> Result<Dataset> {
    let raw = spec.sample_raw()?;
    let names = (0..spec.dims).map(|i| format!("x{i}")).collect();
    let mut ds = Dataset::from_raw_rows(names, &raw)?;
    ds.seed = Some(spec.seed);
    Ok(ds)
}
