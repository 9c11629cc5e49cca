//! RMSE and Qerror summaries, accuracy tiers, and in-distribution versus
//! shifted-workload comparisons.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::SelectivityEstimator;
use crate::workload::{Workload, WorkloadTag};

/// `max(p/w, w/p)` after flooring both at `clip_floor`.
pub fn qerror(prediction: f64, label: f64, clip_floor: f64) -> f64 {
    let p = prediction.max(clip_floor);
    let w = label.max(clip_floor);
    (p / w).max(w / p)
}

/// Nearest-rank percentile of an ascending slice, `pct` in `(0, 100]`.
pub fn nearest_rank(sorted: &[f64], pct: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_name: String,
    pub workload_tag: WorkloadTag,
    pub rmse: f64,
    pub qerror_median: f64,
    pub qerror_p90: f64,
    pub qerror_max: f64,
    pub n_queries: usize,
    pub clip_floor: f64,
    /// RMSE uses predictions as returned, negative ones included.
    pub rmse_on_raw_predictions: bool,
    pub negative_predictions: usize,
}

pub fn evaluate(est: &dyn SelectivityEstimator, workload: &Workload, clip_floor: f64) -> Result<EvalReport> {
    let preds: Vec<f64> = workload.items.par_iter().map(|(q, _)| est.estimate(q)).collect();
    let labels: Vec<f64> = workload.items.iter().map(|(_, s)| *s).collect();
    evaluate_predictions(est.name(), workload.tag, &preds, &labels, clip_floor)
}

pub fn evaluate_predictions(
    model_name: &str,
    workload_tag: WorkloadTag,
    predictions: &[f64],
    labels: &[f64],
    clip_floor: f64,
) -> Result<EvalReport> {
    if predictions.is_empty() {
        return Err(Error::EmptyWorkload);
    }
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            actual: predictions.len(),
        });
    }
    if !(clip_floor > 0.0) {
        return Err(Error::Config(format!("clip_floor {clip_floor} must be > 0")));
    }
    let n = predictions.len();
    let sse: f64 = predictions.iter().zip(labels).map(|(p, w)| (p - w) * (p - w)).sum();
    let mut q: Vec<f64> = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &w)| qerror(p, w, clip_floor))
        .collect();
    q.sort_by(f64::total_cmp);
    Ok(EvalReport {
        model_name: model_name.to_string(),
        workload_tag,
        rmse: (sse / n as f64).sqrt(),
        qerror_median: nearest_rank(&q, 50.0),
        qerror_p90: nearest_rank(&q, 90.0),
        qerror_max: q[n - 1],
        n_queries: n,
        clip_floor,
        rmse_on_raw_predictions: true,
        negative_predictions: predictions.iter().filter(|&&p| p < 0.0).count(),
    })
}

/// Accuracy tier. A value on a boundary (RMSE exactly 0.05 or 0.2, median
/// Qerror exactly 2 or 10) falls in the middle tier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Good,
    Fair,
    Poor,
}

impl Tier {
    fn from_thresholds(v: f64, good: f64, poor: f64) -> Tier {
        if v < good {
            Tier::Good
        } else if v > poor || v.is_nan() {
            Tier::Poor
        } else {
            Tier::Fair
        }
    }

    pub fn from_rmse(rmse: f64) -> Tier {
        Tier::from_thresholds(rmse, 0.05, 0.2)
    }

    pub fn from_median_qerror(q: f64) -> Tier {
        Tier::from_thresholds(q, 2.0, 10.0)
    }

    pub fn stars(&self) -> &'static str {
        match self {
            Tier::Good => "★★",
            Tier::Fair => "★☆",
            Tier::Poor => "☆☆",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.stars())
    }
}

/// Metric a model is judged by: RMSE for models trained on squared error,
/// median Qerror otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TierMetric {
    Rmse,
    QerrorMedian,
}

impl EvalReport {
    pub fn tier(&self, metric: TierMetric) -> Tier {
        match metric {
            TierMetric::Rmse => Tier::from_rmse(self.rmse),
            TierMetric::QerrorMedian => Tier::from_median_qerror(self.qerror_median),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Degradation {
    pub model_name: String,
    pub rmse_ratio: f64,
    pub qerror_median_ratio: f64,
    pub qerror_p90_ratio: f64,
    pub in_dist_tier: Tier,
    pub ood_tier: Tier,
    pub metric: TierMetric,
}

/// Shifted-workload metrics relative to in-distribution ones.
pub fn compare(in_dist: &EvalReport, ood: &EvalReport, metric: TierMetric) -> Degradation {
    Degradation {
        model_name: in_dist.model_name.clone(),
        rmse_ratio: ood.rmse / in_dist.rmse,
        qerror_median_ratio: ood.qerror_median / in_dist.qerror_median,
        qerror_p90_ratio: ood.qerror_p90 / in_dist.qerror_p90,
        in_dist_tier: in_dist.tier(metric),
        ood_tier: ood.tier(metric),
        metric,
    }
}

/// Aligned text table, one row per report.
pub fn render_eval_table(rows: &[(EvalReport, TierMetric)]) -> String {
    let width = rows.iter().map(|(r, _)| r.model_name.len()).max().unwrap_or(0).max(9);
    let mut s = format!(
        "{:<width$}  {:<11}  {:>9}  {:>10}  {:>10}  {:>10}  {:>4}\n",
        "estimator", "workload", "rmse", "q50", "q90", "qmax", "tier"
    );
    for (r, m) in rows {
        s.push_str(&format!(
            "{:<width$}  {:<11}  {:>9.5}  {:>10.3}  {:>10.3}  {:>10.3}  {:>4}\n",
            r.model_name,
            r.workload_tag.as_str(),
            r.rmse,
            r.qerror_median,
            r.qerror_p90,
            r.qerror_max,
            r.tier(*m).stars(),
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let l = [0.1, 0.2, 0.0, 1.0];
        let r = evaluate_predictions("m", WorkloadTag::TestIndist, &l, &l, 1e-3).unwrap();
        assert_eq!(r.rmse, 0.0);
        assert_eq!((r.qerror_median, r.qerror_p90, r.qerror_max), (1.0, 1.0, 1.0));
    }

    #[test]
    fn constant_half() {
        let r = evaluate_predictions("m", WorkloadTag::TestIndist, &[0.5, 0.5], &[0.4, 0.6], 1e-3).unwrap();
        assert!((r.rmse - 0.1).abs() < 1e-15);
    }

    #[test]
    fn negative_predictions_stay_finite() {
        let r = evaluate_predictions("m", WorkloadTag::TestOod, &[-0.2, 0.3], &[0.001, 0.3], 1.0 / 49_000.0).unwrap();
        assert!(r.qerror_max.is_finite());
        assert!((r.qerror_max - 49.0).abs() < 1e-9);
        assert_eq!(r.negative_predictions, 1);
        // RMSE sees the raw -0.2.
        assert!((r.rmse - (0.201f64 * 0.201 / 2.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(
            evaluate_predictions("m", WorkloadTag::Train, &[], &[], 0.1),
            Err(Error::EmptyWorkload)
        ));
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 50.0), 5.0);
        assert_eq!(nearest_rank(&v, 90.0), 9.0);
        assert_eq!(nearest_rank(&v, 91.0), 10.0);
        assert_eq!(nearest_rank(&[3.0], 50.0), 3.0);
    }

    #[test]
    fn qerror_is_symmetric() {
        assert_eq!(qerror(0.2, 0.05, 1e-3), qerror(0.05, 0.2, 1e-3));
        assert_eq!(qerror(0.3, 0.3, 1e-3), 1.0);
    }

    #[test]
    fn tiers() {
        assert_eq!(Tier::from_rmse(0.03), Tier::Good);
        assert_eq!(Tier::from_median_qerror(5.0), Tier::Fair);
        assert_eq!(Tier::from_rmse(0.25), Tier::Poor);
        assert_eq!(Tier::from_rmse(0.05), Tier::Fair);
        assert_eq!(Tier::from_rmse(0.2), Tier::Fair);
        assert_eq!(Tier::from_median_qerror(2.0), Tier::Fair);
        assert_eq!(Tier::from_median_qerror(f64::NAN), Tier::Poor);
    }

    #[test]
    fn degradation_ratios() {
        let a = evaluate_predictions("m", WorkloadTag::TestIndist, &[0.5, 0.5], &[0.4, 0.6], 1e-3).unwrap();
        let b = evaluate_predictions("m", WorkloadTag::TestOod, &[0.5, 0.5], &[0.3, 0.7], 1e-3).unwrap();
        let d = compare(&a, &b, TierMetric::Rmse);
        assert!((d.rmse_ratio - 2.0).abs() < 1e-12);
        assert_eq!(d.ood_tier, Tier::Fair);
        let t = render_eval_table(&[(a, TierMetric::Rmse), (b, TierMetric::Rmse)]);
        assert_eq!(t.lines().count(), 3);
    }
}
