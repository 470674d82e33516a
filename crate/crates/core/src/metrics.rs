//! Discrimination, calibration and accuracy scores, and latent-moment
//! recovery.

use crate::error::{Error, Result};
use crate::normal::PROB_FLOOR;
use crate::panel::Moment;
use crate::posterior::Interval;
use serde::Serialize;

fn both_classes(outcomes: &[bool]) -> bool {
    outcomes.iter().any(|&y| y) && outcomes.iter().any(|&y| !y)
}

/// Area under the ROC curve in Mann–Whitney form, ties counted one half.
/// `None` when only one class is present.
pub fn auc(probs: &[f64], outcomes: &[bool]) -> Option<f64> {
    if probs.len() != outcomes.len() || !both_classes(outcomes) {
        return None;
    }
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
    // midranks over tie blocks
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && probs[idx[j + 1]] == probs[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += idx[i..=j].iter().filter(|&&k| outcomes[k]).count() as f64 * mid;
        i = j + 1;
    }
    let n_pos = outcomes.iter().filter(|&&y| y).count() as f64;
    let n_neg = outcomes.len() as f64 - n_pos;
    Some((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

pub fn brier(probs: &[f64], outcomes: &[bool]) -> f64 {
    probs.iter().zip(outcomes).map(|(p, &y)| (p - y as u8 as f64).powi(2)).sum::<f64>() / probs.len() as f64
}

/// Mean negative Bernoulli log-likelihood with clamped probabilities.
pub fn log_loss(probs: &[f64], outcomes: &[bool]) -> f64 {
    probs
        .iter()
        .zip(outcomes)
        .map(|(p, &y)| {
            let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            -if y { p.ln() } else { (1.0 - p).ln() }
        })
        .sum::<f64>()
        / probs.len() as f64
}

/// Logistic recalibration: regress outcomes on `logit(p)`. Returns
/// `(slope, intercept)`, or `None` on separation or non-convergence.
pub fn calibration(probs: &[f64], outcomes: &[bool]) -> Option<(f64, f64)> {
    if probs.len() != outcomes.len() || !both_classes(outcomes) {
        return None;
    }
    let x: Vec<f64> = probs
        .iter()
        .map(|p| {
            let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            (p / (1.0 - p)).ln()
        })
        .collect();
    let (mut a, mut b) = (0.0, 1.0);
    for _ in 0..100 {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (xi, &y) in x.iter().zip(outcomes) {
            let eta = a + b * xi;
            let m = 1.0 / (1.0 + (-eta).exp());
            let w = m * (1.0 - m);
            let r = y as u8 as f64 - m;
            g0 += r;
            g1 += r * xi;
            h00 += w;
            h01 += w * xi;
            h11 += w * xi * xi;
        }
        let det = h00 * h11 - h01 * h01;
        if !(det > 0.0) || !det.is_finite() {
            return None;
        }
        let da = (h11 * g0 - h01 * g1) / det;
        let db = (h00 * g1 - h01 * g0) / det;
        a += da;
        b += db;
        if !a.is_finite() || !b.is_finite() || b.abs() > 1e3 {
            return None;
        }
        if da.abs().max(db.abs()) < 1e-10 {
            return Some((b, a));
        }
    }
    None
}

/// Bias, RMSE and interval coverage (percent) of a latent moment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MomentRecovery {
    pub bias: f64,
    pub rmse: f64,
    pub coverage_95: f64,
}

pub fn moment_recovery(estimates: &[Interval], truth: &[f64]) -> Result<MomentRecovery> {
    if estimates.len() != truth.len() || truth.is_empty() {
        return Err(Error::Dimension(format!("{} estimates for {} true values", estimates.len(), truth.len())));
    }
    let n = truth.len() as f64;
    let bias = estimates.iter().zip(truth).map(|(e, t)| e.mean - t).sum::<f64>() / n;
    let rmse = (estimates.iter().zip(truth).map(|(e, t)| (e.mean - t).powi(2)).sum::<f64>() / n).sqrt();
    let covered = estimates.iter().zip(truth).filter(|(e, t)| e.contains(**t)).count() as f64;
    Ok(MomentRecovery { bias, rmse, coverage_95: 100.0 * covered / n })
}

/// All scores for one set of predictions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricSet {
    pub auc: Option<f64>,
    pub brier: f64,
    pub calibration_slope: Option<f64>,
    pub calibration_intercept: Option<f64>,
    pub log_loss: f64,
    pub recovery: [Option<MomentRecovery>; 4],
}

impl MetricSet {
    pub fn score(probs: &[f64], outcomes: &[bool]) -> Result<Self> {
        if probs.len() != outcomes.len() || probs.is_empty() {
            return Err(Error::Dimension(format!("{} probabilities for {} outcomes", probs.len(), outcomes.len())));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Data(format!("probability {p} outside [0, 1]")));
        }
        let cal = calibration(probs, outcomes);
        Ok(MetricSet {
            auc: auc(probs, outcomes),
            brier: brier(probs, outcomes),
            calibration_slope: cal.map(|c| c.0),
            calibration_intercept: cal.map(|c| c.1),
            log_loss: log_loss(probs, outcomes),
            recovery: [None; 4],
        })
    }

    /// Flat `(name, value)` pairs; missing values are `None`.
    pub fn flat(&self) -> Vec<(String, Option<f64>)> {
        let mut out = vec![
            ("auc".to_string(), self.auc),
            ("brier".to_string(), Some(self.brier)),
            ("calibration_slope".to_string(), self.calibration_slope),
            ("calibration_intercept".to_string(), self.calibration_intercept),
            ("log_loss".to_string(), Some(self.log_loss)),
        ];
        for m in Moment::ALL {
            if let Some(r) = self.recovery[m.index()] {
                out.push((format!("{m}_bias"), Some(r.bias)));
                out.push((format!("{m}_rmse"), Some(r.rmse)));
                out.push((format!("{m}_coverage_95"), Some(r.coverage_95)));
            }
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Map<String, serde_json::Value> {
        self.flat().into_iter().map(|(k, v)| (k, v.map_or(serde_json::Value::Null, serde_json::Value::from))).collect()
    }
}

/// Scores computed separately at each distinct time point, in time order.
pub fn per_time_metrics(probs: &[f64], outcomes: &[bool], times: &[f64]) -> Result<Vec<(f64, MetricSet)>> {
    let mut distinct: Vec<f64> = times.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    distinct
        .into_iter()
        .map(|t| {
            let idx: Vec<usize> = (0..times.len()).filter(|&k| times[k] == t).collect();
            let p: Vec<f64> = idx.iter().map(|&k| probs[k]).collect();
            let y: Vec<bool> = idx.iter().map(|&k| outcomes[k]).collect();
            Ok((t, MetricSet::score(&p, &y)?))
        })
        .collect()
}
