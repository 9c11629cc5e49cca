use super::{CallCounter, EstimatorCheckpoint, SelectivityEstimator};
use crate::error::{Error, Result};
use crate::query::{Interval, RangeQuery};
use crate::workload::Workload;

/// Base statistics corrected by observed `actual / estimated` ratios.
///
/// Ratios are keyed by the upper bound of each observed query on the adjusted
/// axis, i.e. by the point of the one-sided CDF query `x_axis <= key`; repeated
/// keys are averaged. Between keys the ratio is interpolated linearly, and it
/// is held constant beyond the outermost keys. Estimation works on the adjusted
/// CDF `F_base(x) * g(x)`:
///
/// `S(q) = base(q | axis in (0, hi]) * g(hi) - base(q | axis in (0, lo]) * g(lo)`,
///
/// which is finitely additive along the axis.
pub struct Leo {
    base: Box<dyn SelectivityEstimator>,
    axis: usize,
    keys: Vec<f64>,
    ratios: Vec<f64>,
    calls: CallCounter,
}

/// Learn adjustment ratios on `observed.spec.shifting_attribute`.
pub fn build_leo(base: Box<dyn SelectivityEstimator>, observed: &Workload) -> Result<Leo> {
    let axis = observed.spec.shifting_attribute;
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for (q, act) in &observed.items {
        if axis >= q.dims() {
            return Err(Error::DimensionMismatch {
                expected: axis + 1,
                actual: q.dims(),
            });
        }
        let stat = base.estimate(q);
        if stat > 0.0 && stat.is_finite() {
            pairs.push((q.effective(axis).hi, act / stat));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut keys: Vec<f64> = Vec::new();
    let mut ratios: Vec<f64> = Vec::new();
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        let mut sum = 0.0;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            sum += pairs[j].1;
            j += 1;
        }
        keys.push(pairs[i].0);
        ratios.push(sum / (j - i) as f64);
        i = j;
    }
    Leo::from_parts(base, axis, keys, ratios)
}

impl Leo {
    pub(super) fn from_parts(base: Box<dyn SelectivityEstimator>, axis: usize, keys: Vec<f64>, ratios: Vec<f64>) -> Result<Self> {
        if keys.len() != ratios.len() || keys.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("LEO keys must be strictly increasing, one ratio per key".into()));
        }
        Ok(Leo {
            base,
            axis,
            keys,
            ratios,
            calls: CallCounter::default(),
        })
    }

    pub fn axis(&self) -> usize {
        self.axis
    }

    /// Adjustment factor at `x`; 1 when nothing was observed.
    pub fn ratio_at(&self, x: f64) -> f64 {
        let n = self.keys.len();
        if n == 0 {
            return 1.0;
        }
        let k = self.keys.partition_point(|&key| key < x);
        if k == 0 {
            return self.ratios[0];
        }
        if k == n {
            return self.ratios[n - 1];
        }
        if self.keys[k] == x {
            return self.ratios[k];
        }
        let (x0, x1) = (self.keys[k - 1], self.keys[k]);
        let t = (x - x0) / (x1 - x0);
        self.ratios[k - 1] + t * (self.ratios[k] - self.ratios[k - 1])
    }

    fn adjusted_cdf(&self, q: &RangeQuery, upper: f64) -> f64 {
        let one_sided = q
            .with_bound(self.axis, Some(Interval { lo: 0.0, hi: upper }))
            .expect("bound inside the unit interval");
        self.calls.add(1);
        self.base.estimate(&one_sided) * self.ratio_at(upper)
    }
}

impl SelectivityEstimator for Leo {
    fn name(&self) -> &str {
        "leo"
    }

    fn estimate(&self, q: &RangeQuery) -> f64 {
        if self.keys.is_empty() {
            self.calls.add(1);
            return self.base.estimate(q);
        }
        let iv = q.effective(self.axis);
        let upper = self.adjusted_cdf(q, iv.hi);
        if iv.lo > 0.0 {
            upper - self.adjusted_cdf(q, iv.lo)
        } else {
            upper
        }
    }

    fn calls(&self) -> u64 {
        self.calls.get()
    }

    fn checkpoint(&self) -> Option<EstimatorCheckpoint> {
        Some(EstimatorCheckpoint::Leo {
            base: Box::new(self.base.checkpoint()?),
            axis: self.axis,
            keys: self.keys.clone(),
            ratios: self.ratios.clone(),
        })
    }
}
