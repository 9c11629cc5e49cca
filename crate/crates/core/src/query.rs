//! Hyper-rectangle range queries over the unit cube.
//!
//! Every constraint is a half-open interval `(lo, hi]`. A column with no
//! constraint is free; it behaves like `(0, 1]` except that the normalized
//! minimum (coordinate `0.0`) is still matched.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A half-open interval `(lo, hi]` inside `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let iv = Interval { lo, hi };
        iv.validate()?;
        Ok(iv)
    }

    /// `(c - len/2, c + len/2]` clipped to `[0, 1]`.
    pub fn centered(center: f64, length: f64) -> Self {
        let half = 0.5 * length;
        let lo = (center - half).clamp(0.0, 1.0);
        let hi = (center + half).clamp(0.0, 1.0);
        Interval { lo, hi: hi.max(lo) }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.lo.is_finite()
            && self.hi.is_finite()
            && 0.0 <= self.lo
            && self.lo <= self.hi
            && self.hi <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "interval ({}, {}] is not inside [0, 1] with lo <= hi",
                self.lo, self.hi
            )))
        }
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        self.lo < x && x <= self.hi
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.lo >= self.hi
    }
}

impl From<[f64; 2]> for Interval {
    fn from([lo, hi]: [f64; 2]) -> Self {
        Interval { lo, hi }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(iv: Interval) -> Self {
        [iv.lo, iv.hi]
    }
}

/// A conjunction of per-column interval predicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeQuery {
    bounds: Vec<Option<Interval>>,
}

impl RangeQuery {
    pub fn new(bounds: Vec<Option<Interval>>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::Config("a query needs at least one column".into()));
        }
        for iv in bounds.iter().flatten() {
            iv.validate()?;
        }
        Ok(RangeQuery { bounds })
    }

    /// The query that matches every row.
    pub fn unconstrained(dims: usize) -> Self {
        RangeQuery {
            bounds: vec![None; dims],
        }
    }

    /// One-sided query `x_i <= v_i` for every column (the CDF at `v`).
    /// Columns with `v_i = 1` are left unconstrained.
    pub fn one_sided(vertex: &[f64]) -> Self {
        let bounds = vertex
            .iter()
            .map(|&v| (v < 1.0).then_some(Interval { lo: 0.0, hi: v }))
            .collect();
        RangeQuery { bounds }
    }

    pub fn dims(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[Option<Interval>] {
        &self.bounds
    }

    pub fn bound(&self, column: usize) -> Option<Interval> {
        self.bounds[column]
    }

    pub fn constrained_columns(&self) -> impl Iterator<Item = usize> + '_ {
        self.bounds
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.map(|_| i))
    }

    /// `n_c`, the number of constrained columns.
    pub fn n_constrained(&self) -> usize {
        self.bounds.iter().filter(|b| b.is_some()).count()
    }

    pub fn with_bound(&self, column: usize, bound: Option<Interval>) -> Result<Self> {
        if let Some(iv) = bound {
            iv.validate()?;
        }
        let mut q = self.clone();
        q.bounds[column] = bound;
        Ok(q)
    }

    /// Effective interval on `column`; free columns behave as `(0, 1]`.
    pub fn effective(&self, column: usize) -> Interval {
        self.bounds[column].unwrap_or(Interval { lo: 0.0, hi: 1.0 })
    }

    #[inline]
    pub fn matches(&self, row: &[f64]) -> bool {
        self.bounds
            .iter()
            .zip(row)
            .all(|(b, &x)| b.is_none_or(|iv| iv.contains(x)))
    }

    /// Per-column containment of intervals (free columns contain everything).
    pub fn is_within(&self, other: &RangeQuery) -> bool {
        self.dims() == other.dims()
            && (0..self.dims()).all(|i| match (self.bounds[i], other.bounds[i]) {
                (_, None) => true,
                (None, Some(_)) => false,
                (Some(a), Some(b)) => a.is_empty() || (b.lo <= a.lo && a.hi <= b.hi),
            })
    }

    /// Flattened `[lo_1, hi_1, ..., lo_d, hi_d]`; free columns encode as `(0, 1)`.
    pub fn encode_into(&self, out: &mut Vec<f64>) {
        for b in &self.bounds {
            let iv = b.unwrap_or(Interval { lo: 0.0, hi: 1.0 });
            out.push(iv.lo);
            out.push(iv.hi);
        }
    }

    pub fn encode(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.dims());
        self.encode_into(&mut out);
        out
    }

    pub(crate) fn check_dims(&self, dims: usize) -> Result<()> {
        if self.dims() == dims {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: dims,
                actual: self.dims(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_interval_is_clipped() {
        let iv = Interval::centered(0.05, 0.2);
        assert_eq!(iv.lo, 0.0);
        assert!((iv.hi - 0.15).abs() < 1e-15);
        let full = Interval::centered(0.5, 1.0);
        assert_eq!((full.lo, full.hi), (0.0, 1.0));
    }

    #[test]
    fn half_open_contains() {
        let iv = Interval::new(0.2, 0.5).unwrap();
        assert!(!iv.contains(0.2));
        assert!(iv.contains(0.5));
        assert!(!Interval::new(0.5, 0.5).unwrap().contains(0.5));
    }

    #[test]
    fn rejects_out_of_range_bounds() {
        assert!(Interval::new(0.6, 0.4).is_err());
        assert!(Interval::new(-0.1, 0.4).is_err());
        assert!(RangeQuery::new(vec![Some(Interval { lo: 0.0, hi: 1.5 })]).is_err());
        assert!(RangeQuery::new(vec![]).is_err());
    }

    #[test]
    fn unconstrained_encoding_is_all_zero_one() {
        let q = RangeQuery::unconstrained(3);
        assert_eq!(q.encode(), vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(q.n_constrained(), 0);
    }

    #[test]
    fn containment() {
        let big = RangeQuery::new(vec![Some(Interval::new(0.1, 0.9).unwrap()), None]).unwrap();
        let small = RangeQuery::new(vec![
            Some(Interval::new(0.2, 0.5).unwrap()),
            Some(Interval::new(0.0, 0.3).unwrap()),
        ])
        .unwrap();
        assert!(small.is_within(&big));
        assert!(!big.is_within(&small));
    }

    #[test]
    fn json_shape() {
        let q = RangeQuery::new(vec![Some(Interval::new(0.25, 0.5).unwrap()), None]).unwrap();
        let s = serde_json::to_string(&q).unwrap();
        assert_eq!(s, r#"{"bounds":[[0.25,0.5],null]}"#);
    }
}
