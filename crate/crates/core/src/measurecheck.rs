//! Empirical checks of whether an estimator behaves like a measure: finite
//! additivity on split ranges and monotonicity of extracted conditional CDFs.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::SelectivityEstimator;
use crate::query::{Interval, RangeQuery};
use crate::workload::WorkloadSpec;

pub const DEFAULT_ADDITIVITY_TOLERANCE: f64 = 1e-5;
pub const DEFAULT_MONOTONICITY_TOLERANCE: f64 = 1e-9;

/// `whole` split on `split_axis` into the disjoint `left` and `right`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdditivityTriple {
    pub whole: RangeQuery,
    pub left: RangeQuery,
    pub right: RangeQuery,
    pub split_axis: usize,
}

impl AdditivityTriple {
    /// Split `(lo, hi]` into `(lo, at]` and `(at, hi]`. A free axis is split
    /// on `(0, 1]`.
    pub fn split(whole: RangeQuery, axis: usize, at: f64) -> Result<Self> {
        if axis >= whole.dims() {
            return Err(Error::DimensionMismatch {
                expected: whole.dims(),
                actual: axis,
            });
        }
        let iv = whole.effective(axis);
        if !(iv.lo <= at && at <= iv.hi) {
            return Err(Error::Config(format!(
                "split point {at} outside ({}, {}]",
                iv.lo, iv.hi
            )));
        }
        let left = whole.with_bound(axis, Some(Interval::new(iv.lo, at)?))?;
        let right = whole.with_bound(axis, Some(Interval::new(at, iv.hi)?))?;
        Ok(AdditivityTriple {
            whole,
            left,
            right,
            split_axis: axis,
        })
    }
}

/// `n` triples: the whole range is drawn from `spec`, the axis uniformly among
/// its constrained columns of positive length, and the split point uniformly
/// strictly inside that interval.
pub fn gen_triples(spec: &WorkloadSpec, dims: usize, n: usize, seed: u64) -> Result<Vec<AdditivityTriple>> {
    spec.validate(dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > 100 * n.max(1) {
            return Err(Error::Config(
                "workload spec yields no constrained interval of positive length".into(),
            ));
        }
        let whole = spec.sample_query(dims, &mut rng);
        let axes: Vec<usize> = whole
            .constrained_columns()
            .filter(|&c| whole.effective(c).length() > 0.0)
            .collect();
        if axes.is_empty() {
            continue;
        }
        let axis = axes[rng.random_range(0..axes.len())];
        let iv = whole.effective(axis);
        let at = rng.random_range(iv.lo..iv.hi);
        if at <= iv.lo {
            continue;
        }
        out.push(AdditivityTriple::split(whole, axis, at)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdditivityReport {
    pub n_triples: usize,
    pub n_violations: usize,
    pub max_abs_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl AdditivityReport {
    pub fn violation_rate(&self) -> f64 {
        if self.n_triples == 0 {
            0.0
        } else {
            self.n_violations as f64 / self.n_triples as f64
        }
    }
}

/// `|S(whole) - S(left) - S(right)|` for one triple.
pub fn additivity_residual(est: &dyn SelectivityEstimator, t: &AdditivityTriple) -> f64 {
    (est.estimate(&t.whole) - est.estimate(&t.left) - est.estimate(&t.right)).abs()
}

pub fn check_additivity(est: &dyn SelectivityEstimator, triples: &[AdditivityTriple], tolerance: f64) -> AdditivityReport {
    let residuals: Vec<f64> = triples.par_iter().map(|t| additivity_residual(est, t)).collect();
    // NaN residuals count as violations.
    let n_violations = residuals.iter().filter(|r| !(**r <= tolerance)).count();
    let max_abs_residual = residuals.iter().copied().fold(0.0, f64::max);
    AdditivityReport {
        n_triples: triples.len(),
        n_violations,
        max_abs_residual,
        tolerance,
        passed: n_violations == 0,
    }
}

/// A conditional CDF along `axis`: the other columns keep their bounds from
/// `conditioning`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdfProbe {
    pub axis: usize,
    pub conditioning: RangeQuery,
}

/// `{1/m, 2/m, ..., 1}`.
pub fn uniform_grid(points: usize) -> Vec<f64> {
    (1..=points).map(|k| k as f64 / points as f64).collect()
}

/// Estimates on `conditioning` with the bound on `axis` replaced by `(0, g]`
/// for each `g` in `grid`.
pub fn extract_cdf_chain(
    est: &dyn SelectivityEstimator,
    axis: usize,
    conditioning: &RangeQuery,
    grid: &[f64],
) -> Result<Vec<f64>> {
    if axis >= conditioning.dims() {
        return Err(Error::DimensionMismatch {
            expected: conditioning.dims(),
            actual: axis,
        });
    }
    grid.iter()
        .map(|&g| {
            let q = conditioning.with_bound(axis, Some(Interval::new(0.0, g)?))?;
            Ok(est.estimate(&q))
        })
        .collect()
}

/// `n` probes with conditioning ranges drawn from `spec` and a uniformly
/// chosen axis.
pub fn gen_cdf_probes(spec: &WorkloadSpec, dims: usize, n: usize, seed: u64) -> Result<Vec<CdfProbe>> {
    spec.validate(dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let conditioning = spec.sample_query(dims, &mut rng);
            let axis = rng.random_range(0..dims);
            CdfProbe { axis, conditioning }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub n_cdf_chains: usize,
    /// Chains with at least one inversion.
    pub n_chains_inverted: usize,
    /// Adjacent pairs that decrease by more than the tolerance.
    pub n_inversions: usize,
    pub max_inversion_magnitude: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl MonotonicityReport {
    pub fn violation_rate(&self) -> f64 {
        if self.n_cdf_chains == 0 {
            0.0
        } else {
            self.n_chains_inverted as f64 / self.n_cdf_chains as f64
        }
    }
}

pub fn check_monotonicity(chains: &[Vec<f64>], tolerance: f64) -> MonotonicityReport {
    let mut n_inversions = 0;
    let mut n_chains_inverted = 0;
    let mut max_inv: f64 = 0.0;
    for chain in chains {
        let mut any = false;
        for w in chain.windows(2) {
            let drop = w[0] - w[1];
            if !(drop <= tolerance) {
                n_inversions += 1;
                any = true;
                max_inv = max_inv.max(drop);
            }
        }
        n_chains_inverted += any as usize;
    }
    MonotonicityReport {
        n_cdf_chains: chains.len(),
        n_chains_inverted,
        n_inversions,
        max_inversion_magnitude: max_inv,
        tolerance,
        passed: n_inversions == 0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasureCheckSettings {
    pub n_triples: usize,
    pub n_chains: usize,
    pub grid_points: usize,
    pub additivity_tolerance: f64,
    pub monotonicity_tolerance: f64,
}

impl Default for MeasureCheckSettings {
    fn default() -> Self {
        MeasureCheckSettings {
            n_triples: 1_000,
            n_chains: 100,
            grid_points: 50,
            additivity_tolerance: DEFAULT_ADDITIVITY_TOLERANCE,
            monotonicity_tolerance: DEFAULT_MONOTONICITY_TOLERANCE,
        }
    }
}

/// Probes shared by every estimator under test, so reports are comparable.
#[derive(Clone, Debug)]
pub struct MeasureProbes {
    pub triples: Vec<AdditivityTriple>,
    pub chains: Vec<CdfProbe>,
    pub grid: Vec<f64>,
}

impl MeasureProbes {
    pub fn generate(spec: &WorkloadSpec, dims: usize, settings: &MeasureCheckSettings, seed: u64) -> Result<Self> {
        if settings.grid_points == 0 {
            return Err(Error::Config("grid_points must be >= 1".into()));
        }
        Ok(MeasureProbes {
            triples: gen_triples(spec, dims, settings.n_triples, seed)?,
            chains: gen_cdf_probes(spec, dims, settings.n_chains, seed ^ 0x6a09_e667_f3bc_c908)?,
            grid: uniform_grid(settings.grid_points),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureCheckReport {
    pub estimator: String,
    pub additivity: AdditivityReport,
    pub monotonicity: MonotonicityReport,
}

pub fn run_measure_check(
    est: &dyn SelectivityEstimator,
    probes: &MeasureProbes,
    settings: &MeasureCheckSettings,
) -> Result<MeasureCheckReport> {
    let additivity = check_additivity(est, &probes.triples, settings.additivity_tolerance);
    let chains = probes
        .chains
        .par_iter()
        .map(|p| extract_cdf_chain(est, p.axis, &p.conditioning, &probes.grid))
        .collect::<Result<Vec<_>>>()?;
    let monotonicity = check_monotonicity(&chains, settings.monotonicity_tolerance);
    Ok(MeasureCheckReport {
        estimator: est.name().to_string(),
        additivity,
        monotonicity,
    })
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "✓"
    } else {
        "✗"
    }
}

/// Text table with one ✓/✗ row per estimator.
pub fn render_measure_table(reports: &[MeasureCheckReport]) -> String {
    let width = reports.iter().map(|r| r.estimator.len()).max().unwrap_or(0).max(9);
    let mut s = format!(
        "{:<width$}  {:^10}  {:^12}  {:>13}  {:>13}\n",
        "estimator", "additivity", "monotonicity", "add. viol.", "mono. inv."
    );
    for r in reports {
        s.push_str(&format!(
            "{:<width$}  {:^10}  {:^12}  {:>13}  {:>13}\n",
            r.estimator,
            mark(r.additivity.passed),
            mark(r.monotonicity.passed),
            format!("{}/{}", r.additivity.n_violations, r.additivity.n_triples),
            format!("{}/{}", r.monotonicity.n_chains_inverted, r.monotonicity.n_cdf_chains),
        ));
    }
    s
}

/// Three atoms `A, B, C` and four tabulated ranges over them. Values are
/// integer tenths so every check is exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TabulatedRangeFunction {
    pub name: &'static str,
    pub abc: i64,
    pub ab: i64,
    pub ac: i64,
    pub bc: i64,
}

pub const FIGURE_FIXTURE: [TabulatedRangeFunction; 4] = [
    TabulatedRangeFunction {
        name: "S1",
        abc: 10,
        ab: 5,
        ac: 7,
        bc: 8,
    },
    TabulatedRangeFunction {
        name: "S2",
        abc: 10,
        ab: 3,
        ac: 3,
        bc: 3,
    },
    TabulatedRangeFunction {
        name: "S3",
        abc: 9,
        ab: 5,
        ac: 6,
        bc: 7,
    },
    TabulatedRangeFunction {
        name: "S4",
        abc: 10,
        ab: 4,
        ac: 5,
        bc: 11,
    },
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureClass {
    Probability,
    /// Additive, but negative somewhere or with total mass other than 1.
    SignedOnly,
    NotAMeasure,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixtureVerdict {
    /// `S(AB) + S(AC) + S(BC) - 2 S(ABC)`, in tenths.
    pub additivity_residual: i64,
    /// Pairs `(sub, super)` with `sub ⊆ super` and `S(sub) > S(super)`.
    pub inversions: Vec<(&'static str, &'static str)>,
    /// `[P(A), P(B), P(C)]` in tenths, when the function is additive.
    pub atoms: Option<[i64; 3]>,
    pub total_mass: i64,
    pub class: MeasureClass,
}

impl TabulatedRangeFunction {
    pub fn classify(&self) -> FixtureVerdict {
        let residual = self.ab + self.ac + self.bc - 2 * self.abc;
        let inversions: Vec<_> = [("R_AB", self.ab), ("R_AC", self.ac), ("R_BC", self.bc)]
            .into_iter()
            .filter(|&(_, v)| v > self.abc)
            .map(|(n, _)| (n, "R_ABC"))
            .collect();
        let atoms = (residual == 0).then(|| [self.abc - self.bc, self.abc - self.ac, self.abc - self.ab]);
        let class = match atoms {
            None => MeasureClass::NotAMeasure,
            Some(p) if p.iter().all(|&x| x >= 0) && self.abc == 10 => MeasureClass::Probability,
            Some(_) => MeasureClass::SignedOnly,
        };
        FixtureVerdict {
            additivity_residual: residual,
            inversions,
            atoms,
            total_mass: self.abc,
            class,
        }
    }
}

impl fmt::Display for MeasureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MeasureClass::Probability => "probability measure",
            MeasureClass::SignedOnly => "signed measure only",
            MeasureClass::NotAMeasure => "not a measure",
        })
    }
}
