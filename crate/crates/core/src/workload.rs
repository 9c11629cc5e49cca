//! Range-query workload generation, including the two workload-shift
//! scenarios (center move and granularity shift) and a Monte-Carlo estimate
//! of the coverage-ratio constant `C2` between a training and a test
//! distribution.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::query::{Interval, RangeQuery};

/// Closed interval `[lo, hi]` used for sampling bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Span {
    pub lo: f64,
    pub hi: f64,
}

impl Span {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Span { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Span { lo: v, hi: v }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }

    fn within_unit(&self) -> bool {
        0.0 <= self.lo && self.lo <= self.hi && self.hi <= 1.0
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

impl From<[f64; 2]> for Span {
    fn from([lo, hi]: [f64; 2]) -> Self {
        Span { lo, hi }
    }
}

impl From<Span> for [f64; 2] {
    fn from(s: Span) -> Self {
        [s.lo, s.hi]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadTag {
    Train,
    TestIndist,
    TestOod,
    /// Unlabeled queries, e.g. the consistency sampler's stream.
    Unlabeled,
}

impl WorkloadTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            WorkloadTag::Train => "train",
            WorkloadTag::TestIndist => "test_indist",
            WorkloadTag::TestOod => "test_ood",
            WorkloadTag::Unlabeled => "unlabeled",
        }
    }
}

/// Sampling rule for constrained columns other than the shifting attribute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OtherColumnsPolicy {
    pub center_bounds: Span,
    pub length_bounds: Span,
}

impl Default for OtherColumnsPolicy {
    fn default() -> Self {
        OtherColumnsPolicy {
            center_bounds: Span::new(0.0, 1.0),
            length_bounds: Span::new(0.05, 0.5),
        }
    }
}

/// Distribution of a query workload.
///
/// The shifting attribute is always constrained; `n_filters` counts it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub n_queries: usize,
    /// Number of constrained columns, uniform on `[min, max]` (clamped to `d`).
    pub n_filters: (usize, usize),
    pub shifting_attribute: usize,
    pub center_bounds: Span,
    pub length_bounds: Span,
    #[serde(default)]
    pub other_columns: OtherColumnsPolicy,
    pub seed: u64,
}

impl WorkloadSpec {
    /// Queries uniform over the whole domain, constraining `1..=dims` columns.
    pub fn uniform(dims: usize, n_queries: usize, seed: u64) -> Self {
        WorkloadSpec {
            n_queries,
            n_filters: (1, dims.max(1)),
            shifting_attribute: 0,
            center_bounds: Span::new(0.0, 1.0),
            length_bounds: Span::new(0.05, 0.5),
            other_columns: OtherColumnsPolicy::default(),
            seed,
        }
    }

    pub fn validate(&self, dims: usize) -> Result<()> {
        if self.shifting_attribute >= dims {
            return Err(Error::Config(format!(
                "shifting attribute {} out of range for {dims} columns",
                self.shifting_attribute
            )));
        }
        let spans = [
            ("center_bounds", self.center_bounds),
            ("length_bounds", self.length_bounds),
            ("other_columns.center_bounds", self.other_columns.center_bounds),
            ("other_columns.length_bounds", self.other_columns.length_bounds),
        ];
        for (name, s) in spans {
            if !s.within_unit() {
                return Err(Error::Config(format!(
                    "{name} [{}, {}] must satisfy 0 <= lo <= hi <= 1",
                    s.lo, s.hi
                )));
            }
        }
        let (lo, hi) = self.n_filters;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!(
                "n_filters ({lo}, {hi}) must satisfy 1 <= min <= max"
            )));
        }
        Ok(())
    }

    /// Interval on the shifting attribute.
    pub fn sample_shifting_interval(&self, rng: &mut impl Rng) -> Interval {
        let c = self.center_bounds.sample(rng);
        let l = self.length_bounds.sample(rng);
        Interval::centered(c, l)
    }

    pub fn sample_query(&self, dims: usize, rng: &mut impl Rng) -> RangeQuery {
        let mut bounds = vec![None; dims];
        bounds[self.shifting_attribute] = Some(self.sample_shifting_interval(rng));
        let max_f = self.n_filters.1.min(dims);
        let min_f = self.n_filters.0.min(max_f);
        let n_filters = rng.random_range(min_f..=max_f);
        let others: Vec<usize> = (0..dims).filter(|&c| c != self.shifting_attribute).collect();
        let picked = index::sample(rng, others.len(), n_filters - 1);
        let mut picked: Vec<usize> = picked.into_iter().map(|i| others[i]).collect();
        picked.sort_unstable();
        for c in picked {
            let center = self.other_columns.center_bounds.sample(rng);
            let len = self.other_columns.length_bounds.sample(rng);
            bounds[c] = Some(Interval::centered(center, len));
        }
        RangeQuery::new(bounds).expect("sampled bounds are clipped to the unit cube")
    }

    /// Draw `n_queries` unlabeled queries; deterministic in `seed`.
    pub fn sample_queries(&self, dims: usize) -> Result<Vec<RangeQuery>> {
        self.validate(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok((0..self.n_queries)
            .map(|_| self.sample_query(dims, &mut rng))
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub items: Vec<(RangeQuery, f64)>,
    pub spec: WorkloadSpec,
    pub tag: WorkloadTag,
}

#[derive(Serialize, Deserialize)]
struct Record {
    bounds: Vec<Option<Interval>>,
    sel: f64,
    tag: WorkloadTag,
}

impl Workload {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn queries(&self) -> impl Iterator<Item = &RangeQuery> + '_ {
        self.items.iter().map(|(q, _)| q)
    }

    /// Drop every query whose bounds exactly equal a query in `other`.
    /// Returns the number of queries removed.
    pub fn remove_overlap(&mut self, other: &Workload) -> usize {
        let seen: HashSet<Vec<Option<[u64; 2]>>> = other.queries().map(bound_key).collect();
        let before = self.items.len();
        self.items.retain(|(q, _)| !seen.contains(&bound_key(q)));
        before - self.items.len()
    }

    /// One JSON record per line: `{"bounds": [[lo,hi]|null, ...], "sel": s, "tag": t}`.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (q, s) in &self.items {
            let rec = Record {
                bounds: q.bounds().to_vec(),
                sel: *s,
                tag: self.tag,
            };
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Read records written by [`Workload::write_jsonl`]. The spec is not part
    /// of the line format and must be supplied.
    pub fn read_jsonl(path: &Path, spec: WorkloadSpec) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut items = Vec::new();
        let mut tag = WorkloadTag::Unlabeled;
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line)?;
            tag = rec.tag;
            items.push((RangeQuery::new(rec.bounds)?, rec.sel));
        }
        Ok(Workload { items, spec, tag })
    }
}

fn bound_key(q: &RangeQuery) -> Vec<Option<[u64; 2]>> {
    q.bounds()
        .iter()
        .map(|b| b.map(|iv| [iv.lo.to_bits(), iv.hi.to_bits()]))
        .collect()
}

pub fn sample_workload(spec: &WorkloadSpec, ds: &Dataset, tag: WorkloadTag) -> Result<Workload> {
    let queries = spec.sample_queries(ds.dims())?;
    Ok(Workload {
        items: ds.label_workload(queries)?,
        spec: spec.clone(),
        tag,
    })
}

fn test_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

fn sample_pair(
    ds: &Dataset,
    train_spec: WorkloadSpec,
    test_spec: WorkloadSpec,
) -> Result<(Workload, Workload)> {
    let train = sample_workload(&train_spec, ds, WorkloadTag::Train)?;
    let mut test = sample_workload(&test_spec, ds, WorkloadTag::TestOod)?;
    test.remove_overlap(&train);
    Ok((train, test))
}

fn check_span(name: &str, s: Span) -> Result<()> {
    if s.within_unit() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} [{}, {}] is not inside [0, 1]", s.lo, s.hi)))
    }
}

/// Center-move scenario: same length distribution, different center bounds on
/// the shifting attribute.
pub fn center_move_specs(base: &WorkloadSpec, train_center: Span, test_center: Span) -> Result<(WorkloadSpec, WorkloadSpec)> {
    check_span("train_center", train_center)?;
    check_span("test_center", test_center)?;
    let train = WorkloadSpec {
        center_bounds: train_center,
        ..base.clone()
    };
    let test = WorkloadSpec {
        center_bounds: test_center,
        seed: test_seed(base.seed),
        ..base.clone()
    };
    Ok((train, test))
}

/// Granularity-shift scenario: same center distribution, different length
/// bounds on the shifting attribute.
pub fn granularity_shift_specs(base: &WorkloadSpec, train_length: Span, test_length: Span) -> Result<(WorkloadSpec, WorkloadSpec)> {
    check_span("train_length", train_length)?;
    check_span("test_length", test_length)?;
    let train = WorkloadSpec {
        length_bounds: train_length,
        ..base.clone()
    };
    let test = WorkloadSpec {
        length_bounds: test_length,
        seed: test_seed(base.seed),
        ..base.clone()
    };
    Ok((train, test))
}

pub fn make_center_move_pair(
    ds: &Dataset,
    base: &WorkloadSpec,
    train_center: Span,
    test_center: Span,
) -> Result<(Workload, Workload)> {
    let (train, test) = center_move_specs(base, train_center, test_center)?;
    sample_pair(ds, train, test)
}

pub fn make_granularity_shift_pair(
    ds: &Dataset,
    base: &WorkloadSpec,
    train_length: Span,
    test_length: Span,
) -> Result<(Workload, Workload)> {
    let (train, test) = granularity_shift_specs(base, train_length, test_length)?;
    sample_pair(ds, train, test)
}

/// Center-move example on the real line, mapped affinely onto `[0, 1]`:
/// intervals of length 2, training centers uniform on `[0,1] ∪ [1,2]`, test
/// centers uniform on `[1,2]`. The line segment `[-1, 3]` becomes the unit
/// interval, so nothing is clipped. Expected `C2 = 2`.
pub fn center_move_example(base: &WorkloadSpec) -> (WorkloadSpec, WorkloadSpec) {
    let to_unit = |x: f64| (x + 1.0) / 4.0;
    let len = Span::point(2.0 / 4.0);
    let train = WorkloadSpec {
        center_bounds: Span::new(to_unit(0.0), to_unit(2.0)),
        length_bounds: len,
        ..base.clone()
    };
    let test = WorkloadSpec {
        center_bounds: Span::new(to_unit(1.0), to_unit(2.0)),
        length_bounds: len,
        seed: test_seed(base.seed),
        ..base.clone()
    };
    (train, test)
}

/// Granularity-shift example mapped onto `[0, 1]` from `[-2.5, 3.5]`:
/// training intervals of length 1 centered uniformly on `[-2, 3]`, test
/// intervals of length 2 centered uniformly on `[0, 1]`. Expected `C2 = 5`.
pub fn granularity_shift_example(base: &WorkloadSpec) -> (WorkloadSpec, WorkloadSpec) {
    let to_unit = |x: f64| (x + 2.5) / 6.0;
    let train = WorkloadSpec {
        center_bounds: Span::new(to_unit(-2.0), to_unit(3.0)),
        length_bounds: Span::point(1.0 / 6.0),
        ..base.clone()
    };
    let test = WorkloadSpec {
        center_bounds: Span::new(to_unit(0.0), to_unit(1.0)),
        length_bounds: Span::point(2.0 / 6.0),
        seed: test_seed(base.seed),
        ..base.clone()
    };
    (train, test)
}

/// Grid points whose test-side coverage probability is below this are left out
/// of the `C2` maximum; the ratio of two near-zero frequencies is noise.
pub const C2_MIN_TEST_COVERAGE: f64 = 0.01;

/// Monte-Carlo estimate of the smallest `C2` with
/// `P_test[x in R] <= C2 * P_train[x in R]` over a uniform grid of `x` on the
/// shifting attribute.
///
/// Each side draws `samples` intervals with stratified centers and lengths.
/// Returns `f64::INFINITY` if a grid point is covered at test time but never
/// during training.
pub fn estimate_c2(train: &WorkloadSpec, test: &WorkloadSpec, grid_points: usize, samples: usize) -> Result<f64> {
    estimate_c2_with(train, test, grid_points, samples, C2_MIN_TEST_COVERAGE)
}

pub fn estimate_c2_with(
    train: &WorkloadSpec,
    test: &WorkloadSpec,
    grid_points: usize,
    samples: usize,
    min_test_coverage: f64,
) -> Result<f64> {
    if grid_points < 2 || samples == 0 {
        return Err(Error::Config("estimate_c2 needs grid_points >= 2 and samples >= 1".into()));
    }
    let train_cov = Coverage::sample(train, samples);
    let test_cov = Coverage::sample(test, samples);
    let mut worst: f64 = 0.0;
    for k in 0..grid_points {
        let x = k as f64 / (grid_points - 1) as f64;
        let p_test = test_cov.probability(x);
        if p_test == 0.0 {
            continue;
        }
        let p_train = train_cov.probability(x);
        if p_train == 0.0 {
            return Ok(f64::INFINITY);
        }
        if p_test < min_test_coverage {
            continue;
        }
        worst = worst.max(p_test / p_train);
    }
    Ok(worst)
}

/// Sorted endpoints of sampled intervals on the shifting attribute.
struct Coverage {
    lows: Vec<f64>,
    highs: Vec<f64>,
}

impl Coverage {
    fn sample(spec: &WorkloadSpec, samples: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let n = samples as f64;
        let mut length_strata: Vec<usize> = (0..samples).collect();
        shuffle(&mut length_strata, &mut rng);
        let mut lows = Vec::with_capacity(samples);
        let mut highs = Vec::with_capacity(samples);
        for (i, &j) in length_strata.iter().enumerate() {
            let u: f64 = (i as f64 + rng.random::<f64>()) / n;
            let v: f64 = (j as f64 + rng.random::<f64>()) / n;
            let c = spec.center_bounds.lo + u * (spec.center_bounds.hi - spec.center_bounds.lo);
            let l = spec.length_bounds.lo + v * (spec.length_bounds.hi - spec.length_bounds.lo);
            let iv = Interval::centered(c, l);
            lows.push(iv.lo);
            highs.push(iv.hi);
        }
        lows.sort_by(f64::total_cmp);
        highs.sort_by(f64::total_cmp);
        Coverage { lows, highs }
    }

    /// Fraction of intervals `(lo, hi]` containing `x`.
    fn probability(&self, x: f64) -> f64 {
        let started = self.lows.partition_point(|&lo| lo < x);
        let ended = self.highs.partition_point(|&hi| hi < x);
        (started - ended) as f64 / self.lows.len() as f64
    }
}

fn shuffle<T>(v: &mut [T], rng: &mut impl Rng) {
    use rand::seq::SliceRandom;
    v.shuffle(rng);
}

/// Both sides of the diversity inequality for the linear-density example.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Example1Check {
    /// `E_R |∫ (f̂ - f_D) 1(x in R) dx|`
    pub lhs: f64,
    /// `c3 * E_R ∫ |f̂ - f_D| 1(x in R) dx` with `c3 = 1/2`
    pub rhs_times_c3: f64,
    pub holds: bool,
}

/// Check the diversity inequality with `c3 = 1/2` for `f_D(x) = 1`,
/// `f̂(x) = 1 + 2 δ x` on `[-1/2, 1/2]`, ranges of length 1/4 centered
/// uniformly on `[-3/8, 3/8]`. Midpoint quadrature with `subdivisions`
/// cells on both the center and the point axis.
pub fn verify_example1(delta_n: f64, subdivisions: usize) -> Example1Check {
    const HALF_LEN: f64 = 1.0 / 8.0;
    const CENTER_MAX: f64 = 3.0 / 8.0;
    let diff = |x: f64| 2.0 * delta_n * x;
    let n = subdivisions.max(1);
    let hc = 2.0 * CENTER_MAX / n as f64;
    let hx = 2.0 * HALF_LEN / n as f64;
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for i in 0..n {
        let c = -CENTER_MAX + (i as f64 + 0.5) * hc;
        let (mut signed, mut absolute) = (0.0, 0.0);
        for j in 0..n {
            let x = c - HALF_LEN + (j as f64 + 0.5) * hx;
            let d = diff(x);
            signed += d;
            absolute += d.abs();
        }
        lhs += (signed * hx).abs();
        rhs += absolute * hx;
    }
    // Expectation over the uniform center distribution.
    lhs /= n as f64;
    rhs /= n as f64;
    let rhs_times_c3 = 0.5 * rhs;
    Example1Check {
        lhs,
        rhs_times_c3,
        holds: lhs >= rhs_times_c3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_gaussian, GaussianSpec};

    fn small_ds() -> Dataset {
        generate_gaussian(&GaussianSpec {
            dims: 4,
            rows: 500,
            correlation: 0.5,
            seed: 9,
        })
        .unwrap()
    }

    #[test]
    fn full_length_spans_the_attribute() {
        let ds = small_ds();
        let spec = WorkloadSpec {
            center_bounds: Span::point(0.5),
            length_bounds: Span::point(1.0),
            ..WorkloadSpec::uniform(4, 50, 1)
        };
        let wl = sample_workload(&spec, &ds, WorkloadTag::Train).unwrap();
        for q in wl.queries() {
            assert_eq!(q.bound(0), Some(Interval { lo: 0.0, hi: 1.0 }));
        }
    }

    #[test]
    fn empty_workload() {
        let ds = small_ds();
        let wl = sample_workload(&WorkloadSpec::uniform(4, 0, 1), &ds, WorkloadTag::Train).unwrap();
        assert!(wl.is_empty());
    }

    #[test]
    fn filter_counts_respect_bounds() {
        let spec = WorkloadSpec {
            n_filters: (2, 3),
            ..WorkloadSpec::uniform(6, 500, 4)
        };
        for q in spec.sample_queries(6).unwrap() {
            assert!((2..=3).contains(&q.n_constrained()));
            assert!(q.bound(spec.shifting_attribute).is_some());
        }
    }

    #[test]
    fn center_histogram_is_uniform() {
        // Training side of the center-move example: fixed length, center on the
        // union of two adjacent unit bands. Chi-square over 20 bins, 50K draws.
        let (train, _) = center_move_example(&WorkloadSpec::uniform(1, 50_000, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
        let bins = 20;
        let mut counts = vec![0usize; bins];
        let width = train.center_bounds.hi - train.center_bounds.lo;
        for _ in 0..train.n_queries {
            let iv = train.sample_shifting_interval(&mut rng);
            assert!((iv.length() - 0.5).abs() < 1e-12);
            let c = 0.5 * (iv.lo + iv.hi);
            let b = (((c - train.center_bounds.lo) / width) * bins as f64) as usize;
            counts[b.min(bins - 1)] += 1;
        }
        let expected = train.n_queries as f64 / bins as f64;
        let chi2: f64 = counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        // 99.9th percentile of chi-square with 19 degrees of freedom.
        assert!(chi2 < 43.82, "chi2 = {chi2}");
    }

    #[test]
    fn pair_workloads_are_disjoint() {
        let ds = small_ds();
        let base = WorkloadSpec::uniform(4, 300, 12);
        let (train, test) =
            make_center_move_pair(&ds, &base, Span::new(0.0, 0.4), Span::new(0.6, 1.0)).unwrap();
        assert_eq!(train.len(), 300);
        for q in test.queries() {
            let iv = q.bound(0).unwrap();
            let c = 0.5 * (iv.lo + iv.hi);
            // Centers move only through clipping at the domain edge.
            assert!(c > 0.4 || iv.hi == 1.0, "center {c}");
        }
        assert_eq!(train.spec.length_bounds, test.spec.length_bounds);

        let (train, test) =
            make_granularity_shift_pair(&ds, &base, Span::new(0.05, 0.1), Span::new(0.3, 0.5)).unwrap();
        let max_train = train.queries().map(|q| q.bound(0).unwrap().length()).fold(0.0, f64::max);
        for q in test.queries() {
            let iv = q.bound(0).unwrap();
            if iv.lo > 0.0 && iv.hi < 1.0 {
                assert!(iv.length() > max_train);
            }
        }
        assert_eq!(train.spec.center_bounds, test.spec.center_bounds);
    }

    #[test]
    fn overlap_removal_uses_exact_bounds() {
        let ds = small_ds();
        let spec = WorkloadSpec::uniform(4, 100, 5);
        let a = sample_workload(&spec, &ds, WorkloadTag::Train).unwrap();
        let mut b = sample_workload(&spec, &ds, WorkloadTag::TestIndist).unwrap();
        assert_eq!(b.remove_overlap(&a), 100);
        assert!(b.is_empty());
    }

    #[test]
    fn workloads_are_deterministic() {
        let ds = small_ds();
        let spec = WorkloadSpec::uniform(4, 200, 77);
        assert_eq!(
            sample_workload(&spec, &ds, WorkloadTag::Train).unwrap(),
            sample_workload(&spec, &ds, WorkloadTag::Train).unwrap()
        );
    }

    #[test]
    fn jsonl_round_trip_is_bit_exact() {
        let ds = small_ds();
        let spec = WorkloadSpec::uniform(4, 200, 8);
        let wl = sample_workload(&spec, &ds, WorkloadTag::TestOod).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.jsonl");
        wl.write_jsonl(&p).unwrap();
        let back = Workload::read_jsonl(&p, spec).unwrap();
        assert_eq!(back, wl);
        let first = fs::read_to_string(&p).unwrap();
        assert!(first.lines().next().unwrap().contains(r#""tag":"test_ood""#));
    }

    #[test]
    fn c2_of_identical_specs_is_one() {
        let spec = WorkloadSpec::uniform(1, 0, 2);
        let c2 = estimate_c2(&spec, &spec, 201, 20_000).unwrap();
        assert!((c2 - 1.0).abs() < 0.05, "{c2}");
    }

    #[test]
    fn c2_detects_uncovered_test_region() {
        let base = WorkloadSpec::uniform(1, 0, 2);
        let (train, test) =
            center_move_specs(&base, Span::new(0.1, 0.2), Span::new(0.8, 0.9)).unwrap();
        let train = WorkloadSpec { length_bounds: Span::point(0.1), ..train };
        let test = WorkloadSpec { length_bounds: Span::point(0.1), ..test };
        assert_eq!(estimate_c2(&train, &test, 101, 10_000).unwrap(), f64::INFINITY);
    }

    #[test]
    fn c2_validates_arguments() {
        let spec = WorkloadSpec::uniform(1, 0, 2);
        assert!(estimate_c2(&spec, &spec, 1, 10).is_err());
        assert!(estimate_c2(&spec, &spec, 10, 0).is_err());
    }

    // Closed forms: lhs = 3|δ|/32, E ∫|f̂ - f_D| = 7|δ|/72.
    #[test]
    fn example1_matches_closed_form() {
        for delta in [-3.7, 0.5, 1.0] {
            let r = verify_example1(delta, 2_000);
            let lhs = 3.0 * f64::abs(delta) / 32.0;
            let rhs = 0.5 * 7.0 * f64::abs(delta) / 72.0;
            assert!((r.lhs - lhs).abs() < 1e-6 * (1.0 + lhs), "{r:?}");
            assert!((r.rhs_times_c3 - rhs).abs() < 1e-5 * (1.0 + rhs), "{r:?}");
            assert!(r.holds);
        }
        let zero = verify_example1(0.0, 100);
        assert_eq!((zero.lhs, zero.rhs_times_c3, zero.holds), (0.0, 0.0, true));
    }
}
