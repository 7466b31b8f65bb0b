//! Metrics over posterior predictives: negative log likelihood, accuracy,
//! RMSE, expected calibration error, and the in-support vs out-of-support
//! uncertainty ratio.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{CoreError, Result};
use crate::nn::LABEL_ROW_SUM_TOL;
use crate::posterior::PredictiveSummary;

/// Equal-width confidence bins used when no count is specified.
pub const ECE_DEFAULT_BINS: usize = 10;

/// One evaluation outcome, with the cumulative uplink+downlink float count
/// at which it was measured. Task-inapplicable metrics stay `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub nll: f64,
    pub accuracy: Option<f64>,
    pub rmse: Option<f64>,
    pub ece: Option<f64>,
    pub floats_cum: u64,
}

impl MetricsRecord {
    pub fn validate(&self) -> Result<()> {
        if self.nll.is_nan() {
            return Err(CoreError::NonFinite("nll".into()));
        }
        for (name, v) in [("accuracy", self.accuracy), ("ece", self.ece)] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(CoreError::InvalidConfig(format!(
                        "{name} {v} outside [0, 1]"
                    )));
                }
            }
        }
        if let Some(r) = self.rmse {
            if !(r.is_finite() && r >= 0.0) {
                return Err(CoreError::InvalidConfig(format!(
                    "rmse must be finite and non-negative, got {r}"
                )));
            }
        }
        Ok(())
    }
}

fn argmax_row(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, v) in row.iter().enumerate() {
        if *v > best_value {
            best = i;
            best_value = *v;
        }
    }
    best
}

fn check_probability_rows(probs: &Array2<f64>) -> Result<()> {
    for (i, row) in probs.rows().into_iter().enumerate() {
        let sum: f64 = row.sum();
        if (sum - 1.0).abs() > LABEL_ROW_SUM_TOL {
            return Err(CoreError::InvalidLabels(format!(
                "probability row {i} sums to {sum}, not 1"
            )));
        }
        if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(CoreError::InvalidLabels(format!(
                "probability row {i} has negative or non-finite entries"
            )));
        }
    }
    Ok(())
}

/// Expected calibration error over equal-width confidence bins:
/// sum over bins of (bin count / N) * |bin accuracy - bin confidence|,
/// where a point's confidence is its max class probability and the point
/// lands in bin `min(floor(confidence * num_bins), num_bins - 1)`. Empty
/// bins contribute zero.
pub fn ece(probs: &Array2<f64>, labels: &Array2<f64>, num_bins: usize) -> Result<f64> {
    if num_bins == 0 {
        return Err(CoreError::InvalidConfig(
            "need at least one calibration bin".into(),
        ));
    }
    if probs.nrows() == 0 {
        return Err(CoreError::Empty("no predictions to calibrate".into()));
    }
    if probs.dim() != labels.dim() {
        return Err(CoreError::DimensionMismatch(format!(
            "{:?} probabilities vs {:?} labels",
            probs.dim(),
            labels.dim()
        )));
    }
    check_probability_rows(probs)?;
    let mut counts = vec![0usize; num_bins];
    let mut conf_sums = vec![0.0f64; num_bins];
    let mut acc_sums = vec![0.0f64; num_bins];
    for (p_row, l_row) in probs.rows().into_iter().zip(labels.rows()) {
        let predicted = argmax_row(p_row);
        let confidence = p_row[predicted];
        let bin = ((confidence * num_bins as f64) as usize).min(num_bins - 1);
        counts[bin] += 1;
        conf_sums[bin] += confidence;
        acc_sums[bin] += if predicted == argmax_row(l_row) { 1.0 } else { 0.0 };
    }
    let n = probs.nrows() as f64;
    let mut total = 0.0;
    for b in 0..num_bins {
        if counts[b] == 0 {
            continue;
        }
        let nb = counts[b] as f64;
        total += nb / n * (acc_sums[b] / nb - conf_sums[b] / nb).abs();
    }
    Ok(total)
}

/// Evaluates a predictive summary against targets. Classification rows use
/// the negative log probability of the true class (the target row's argmax,
/// ties toward the lowest index), accuracy via predicted argmax under the
/// same tie rule, and calibration over [`ECE_DEFAULT_BINS`] bins.
/// Regression entries use the Gaussian score at the predictive mean and
/// std. `floats_cum` starts at zero; callers stamp it.
pub fn metrics_bundle(summary: &PredictiveSummary, targets: &Array2<f64>) -> Result<MetricsRecord> {
    let record = match summary {
        PredictiveSummary::Classification { probs } => {
            if probs.dim() != targets.dim() {
                return Err(CoreError::DimensionMismatch(format!(
                    "{:?} probabilities vs {:?} targets",
                    probs.dim(),
                    targets.dim()
                )));
            }
            if probs.nrows() == 0 {
                return Err(CoreError::Empty("no predictions to score".into()));
            }
            let mut nll = 0.0;
            let mut hits = 0usize;
            for (p_row, t_row) in probs.rows().into_iter().zip(targets.rows()) {
                let truth = argmax_row(t_row);
                nll -= p_row[truth].ln();
                if argmax_row(p_row) == truth {
                    hits += 1;
                }
            }
            let n = probs.nrows() as f64;
            MetricsRecord {
                nll: nll / n,
                accuracy: Some(hits as f64 / n),
                rmse: None,
                ece: Some(ece(probs, targets, ECE_DEFAULT_BINS)?),
                floats_cum: 0,
            }
        }
        PredictiveSummary::Regression { mean, std } => {
            if mean.dim() != targets.dim() {
                return Err(CoreError::DimensionMismatch(format!(
                    "{:?} predictive mean vs {:?} targets",
                    mean.dim(),
                    targets.dim()
                )));
            }
            if mean.nrows() == 0 {
                return Err(CoreError::Empty("no predictions to score".into()));
            }
            let mut nll = 0.0;
            let mut sq = 0.0;
            for ((m, s), y) in mean.iter().zip(std.iter()).zip(targets.iter()) {
                let r = y - m;
                nll += 0.5 * (2.0 * PI * s * s).ln() + r * r / (2.0 * s * s);
                sq += r * r;
            }
            let n = mean.len() as f64;
            MetricsRecord {
                nll: nll / n,
                accuracy: None,
                rmse: Some((sq / n).sqrt()),
                ece: None,
                floats_cum: 0,
            }
        }
    };
    Ok(record)
}

/// Mean predictive std over out-of-support grid points divided by the mean
/// over in-support points. Values above 1 mean the model is less certain in
/// the gaps between data intervals than on them.
pub fn uncertainty_gap_ratio(summary: &PredictiveSummary, in_support: &[bool]) -> Result<f64> {
    let std = match summary {
        PredictiveSummary::Regression { std, .. } => std,
        PredictiveSummary::Classification { .. } => {
            return Err(CoreError::InvalidConfig(
                "uncertainty gap ratio is defined for regression predictives".into(),
            ))
        }
    };
    if std.nrows() != in_support.len() {
        return Err(CoreError::DimensionMismatch(format!(
            "{} grid points vs {} support flags",
            std.nrows(),
            in_support.len()
        )));
    }
    let mut inside = (0.0, 0usize);
    let mut outside = (0.0, 0usize);
    for (row, &flag) in std.rows().into_iter().zip(in_support) {
        let s: f64 = row.iter().sum::<f64>() / row.len() as f64;
        if flag {
            inside.0 += s;
            inside.1 += 1;
        } else {
            outside.0 += s;
            outside.1 += 1;
        }
    }
    if outside.1 == 0 {
        return Err(CoreError::Empty("no out-of-support grid points".into()));
    }
    if inside.1 == 0 {
        return Err(CoreError::Empty("no in-support grid points".into()));
    }
    Ok((outside.0 / outside.1 as f64) / (inside.0 / inside.1 as f64))
}
