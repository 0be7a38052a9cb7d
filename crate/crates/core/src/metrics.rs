//! Regression and binary-classification metrics with run self-checks.

use crate::data::Task;
use crate::ops;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum MetricFlag {
    /// Target has zero variance; R² is NaN.
    ZeroVarianceTarget,
    /// Only one class present; AUROC/AUPRC are NaN.
    SingleClass,
    /// Scores outside `[0, 1]` were squashed through σ before the Brier score.
    ScoresSquashed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub task: Task,
    pub n: usize,
    pub rmse: f64,
    pub mae: f64,
    pub r2: f64,
    pub auroc: f64,
    pub auprc: f64,
    pub brier: f64,
    pub flags: Vec<MetricFlag>,
}

impl MetricReport {
    /// `(name, value)` pairs reported for this task, in export order.
    pub fn named_values(&self) -> Vec<(&'static str, f64)> {
        match self.task {
            Task::Regression => vec![("r2", self.r2), ("rmse", self.rmse), ("mae", self.mae)],
            Task::Binary => vec![
                ("auroc", self.auroc),
                ("auprc", self.auprc),
                ("brier", self.brier),
                ("rmse", self.rmse),
                ("mae", self.mae),
            ],
        }
    }

    /// Bitwise equality of every reported value (NaN equals NaN).
    pub fn identical(&self, other: &MetricReport) -> bool {
        let a = self.named_values();
        let b = other.named_values();
        a.len() == b.len()
            && a.iter().zip(&b).all(|((n1, v1), (n2, v2))| n1 == n2 && v1.to_bits() == v2.to_bits())
    }
}

fn assert_shapes(y: &[f64], y_hat: &[f64]) {
    assert_eq!(y.len(), y_hat.len(), "prediction length mismatch");
}

pub fn rmse(y: &[f64], y_hat: &[f64]) -> f64 {
    assert_shapes(y, y_hat);
    let sse: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    (sse / y.len() as f64).sqrt()
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> f64 {
    assert_shapes(y, y_hat);
    y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64
}

/// `1 - SS_res / SS_tot`; `None` when the target is constant.
pub fn r2(y: &[f64], y_hat: &[f64]) -> Option<f64> {
    assert_shapes(y, y_hat);
    let m = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - m) * (v - m)).sum();
    if ss_tot == 0.0 {
        return None;
    }
    let ss_res: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Some(1.0 - ss_res / ss_tot)
}

pub fn regression_metrics(y: &[f64], y_hat: &[f64]) -> MetricReport {
    assert!(y.len() >= 2, "need at least two samples");
    let mut flags = Vec::new();
    let r2 = r2(y, y_hat).unwrap_or_else(|| {
        flags.push(MetricFlag::ZeroVarianceTarget);
        f64::NAN
    });
    MetricReport {
        task: Task::Regression,
        n: y.len(),
        rmse: rmse(y, y_hat),
        mae: mae(y, y_hat),
        r2,
        auroc: f64::NAN,
        auprc: f64::NAN,
        brier: f64::NAN,
        flags,
    }
}

/// Midranks (1-based) with ties sharing their average rank.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Rank-statistic AUROC; `None` when only one class is present.
pub fn auroc(y: &[f64], scores: &[f64]) -> Option<f64> {
    assert_shapes(y, scores);
    let n_pos = y.iter().filter(|v| **v > 0.5).count();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = y.iter().zip(&ranks).filter(|(v, _)| **v > 0.5).map(|(_, r)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Step-wise area under the precision-recall curve (average precision);
/// tied scores enter as one threshold.
pub fn auprc(y: &[f64], scores: &[f64]) -> Option<f64> {
    assert_shapes(y, scores);
    let n_pos = y.iter().filter(|v| **v > 0.5).count();
    if n_pos == 0 || n_pos == y.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if y[order[i]] > 0.5 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(area)
}

pub fn brier(y: &[f64], probs: &[f64]) -> f64 {
    assert_shapes(y, probs);
    y.iter().zip(probs).map(|(t, p)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64
}

/// AUROC/AUPRC on raw scores; Brier on scores, squashed through σ when any
/// score falls outside `[0, 1]`.
pub fn binary_metrics(y: &[f64], scores: &[f64]) -> MetricReport {
    assert!(!y.is_empty(), "need samples");
    let mut flags = Vec::new();
    let roc = auroc(y, scores);
    let pr = auprc(y, scores);
    if roc.is_none() {
        flags.push(MetricFlag::SingleClass);
    }
    let out_of_range = scores.iter().any(|s| !(0.0..=1.0).contains(s));
    let brier = if out_of_range {
        flags.push(MetricFlag::ScoresSquashed);
        let probs: Vec<f64> = scores.iter().map(|s| ops::sigmoid(*s)).collect();
        brier(y, &probs)
    } else {
        brier(y, scores)
    };
    MetricReport {
        task: Task::Binary,
        n: y.len(),
        rmse: rmse(y, scores),
        mae: mae(y, scores),
        r2: f64::NAN,
        auroc: roc.unwrap_or(f64::NAN),
        auprc: pr.unwrap_or(f64::NAN),
        brier,
        flags,
    }
}

pub fn compute_metrics(task: Task, y: &[f64], y_hat: &[f64]) -> MetricReport {
    match task {
        Task::Regression => regression_metrics(y, y_hat),
        Task::Binary => binary_metrics(y, y_hat),
    }
}

/// `R²` below this value is flagged as implausible.
pub const R2_ANOMALY_FLOOR: f64 = -1.0;
/// Relative tolerance for internal/external loss agreement.
pub const AGREEMENT_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum Finding {
    RmseBelowMae { rmse: f64, mae: f64 },
    InternalExternalMismatch { internal: f64, external: f64 },
    AnomalousR2 { r2: f64 },
}

impl Finding {
    pub fn describe(&self) -> String {
        match self {
            Finding::RmseBelowMae { rmse, mae } => format!("RMSE {rmse} < MAE {mae}"),
            Finding::InternalExternalMismatch { internal, external } => {
                format!("internal/external mismatch: internal {internal} vs external {external}")
            }
            Finding::AnomalousR2 { r2 } => format!("implausible R2 {r2}"),
        }
    }

    /// Anomaly flags keep the run's exports but exclude it from aggregate means
    /// under the exclusion policy; the other findings are failures.
    pub fn is_anomaly(&self) -> bool {
        matches!(self, Finding::AnomalousR2 { .. })
    }
}

/// Compares the engine's loss (RMSE) against the metric module and scans for
/// implausible values. An empty result means the run is consistent.
pub fn self_check(report: &MetricReport, internal_rmse: f64) -> Vec<Finding> {
    let mut out = Vec::new();
    // RMSE ≥ MAE holds mathematically; allow rounding at the last ulp.
    if report.rmse < report.mae * (1.0 - 1e-12) {
        out.push(Finding::RmseBelowMae {
            rmse: report.rmse,
            mae: report.mae,
        });
    }
    let external = report.rmse;
    if !((internal_rmse - external).abs() <= AGREEMENT_RTOL * (1.0 + external.abs())) {
        out.push(Finding::InternalExternalMismatch {
            internal: internal_rmse,
            external,
        });
    }
    if report.task == Task::Regression && report.r2.is_finite() && report.r2 < R2_ANOMALY_FLOOR {
        out.push(Finding::AnomalousR2 { r2: report.r2 });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_and_mean_predictions() {
        let y = [1.0, 2.0, 4.0, 7.0];
        let r = regression_metrics(&y, &y);
        assert_eq!((r.rmse, r.mae, r.r2), (0.0, 0.0, 1.0));
        let m = y.iter().sum::<f64>() / 4.0;
        let r = regression_metrics(&y, &[m; 4]);
        assert!(r.r2.abs() < 1e-15);
    }

    #[test]
    fn constant_target_flags_r2() {
        let r = regression_metrics(&[3.0, 3.0, 3.0], &[1.0, 2.0, 3.0]);
        assert!(r.r2.is_nan());
        assert!(r.flags.contains(&MetricFlag::ZeroVarianceTarget));
    }

    #[test]
    fn random_instance_matches_direct_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y: Vec<f64> = (0..50).map(|_| rng.random_range(-3.0..3.0)).collect();
        let p: Vec<f64> = y.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
        let r = regression_metrics(&y, &p);
        // direct re-computation, written independently
        let n = 50.0;
        let mut sse = 0.0;
        let mut sae = 0.0;
        for i in 0..50 {
            let d = y[i] - p[i];
            sse += d * d;
            sae += d.abs();
        }
        let ybar = y.iter().sum::<f64>() / n;
        let sst: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
        assert!((r.rmse - (sse / n).sqrt()).abs() < 1e-12);
        assert!((r.mae - sae / n).abs() < 1e-12);
        assert!((r.r2 - (1.0 - sse / sst)).abs() < 1e-12);
    }

    fn pairwise_auc(y: &[f64], s: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..y.len() {
            for j in 0..y.len() {
                if y[i] > 0.5 && y[j] < 0.5 {
                    den += 1.0;
                    if s[i] > s[j] {
                        num += 1.0;
                    } else if s[i] == s[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auroc_matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y: Vec<f64> = (0..20).map(|i| f64::from(i % 3 == 0)).collect();
        // coarse scores so ties occur
        let s: Vec<f64> = (0..20).map(|_| f64::from(rng.random_range(0..6)) / 5.0).collect();
        let auc = auroc(&y, &s).unwrap();
        assert!((auc - pairwise_auc(&y, &s)).abs() < 1e-12);
    }

    #[test]
    fn separated_and_constant_scores() {
        let y = [0.0, 0.0, 1.0, 1.0];
        let r = binary_metrics(&y, &[0.1, 0.2, 0.8, 0.9]);
        assert_eq!(r.auroc, 1.0);
        assert_eq!(r.auprc, 1.0);
        let r = binary_metrics(&y, &[0.5; 4]);
        assert_eq!(r.brier, 0.25);
        assert_eq!(r.auroc, 0.5);
        assert_eq!(r.auprc, 0.5);
    }

    #[test]
    fn single_class_flags_rank_metrics() {
        let r = binary_metrics(&[1.0, 1.0], &[0.2, 0.7]);
        assert!(r.auroc.is_nan() && r.auprc.is_nan());
        assert!(r.flags.contains(&MetricFlag::SingleClass));
    }

    #[test]
    fn auprc_hand_example() {
        // descending scores: pos, neg, pos, neg
        let y = [1.0, 0.0, 1.0, 0.0];
        let s = [0.9, 0.8, 0.7, 0.1];
        // recall steps 0.5 at precision 1, 0.5 at precision 2/3
        let expected = 0.5 * 1.0 + 0.5 * (2.0 / 3.0);
        assert!((auprc(&y, &s).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn self_check_findings() {
        let y = [1.0, 2.0, 3.0, 5.0];
        let p = [1.1, 1.8, 3.3, 4.6];
        let r = regression_metrics(&y, &p);
        assert!(self_check(&r, rmse(&y, &p)).is_empty());
        let f = self_check(&r, r.rmse + 1e-3);
        assert!(matches!(f[..], [Finding::InternalExternalMismatch { .. }]));
        let mut bad = r.clone();
        bad.r2 = -5.0;
        let f = self_check(&bad, bad.rmse);
        assert!(f.iter().any(|x| x.is_anomaly()));
    }
}
