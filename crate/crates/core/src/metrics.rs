//! Evaluation metrics: MSE/MAE, the M4 percentage-error family, and
//! point-adjusted precision/recall/F1 for anomaly detection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DENOM_GUARD: f64 = 1e-12;

/// Task-labelled scalar results with a stable JSON layout:
/// `{"task": str, "metrics": {name: number}, "counts": {name: integer}}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricReport {
    pub task: String,
    pub metrics: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, u64>,
}

impl MetricReport {
    pub fn new(task: impl Into<String>) -> Self {
        Self {
            task: task.into(),
            metrics: BTreeMap::new(),
            counts: BTreeMap::new(),
        }
    }

    /// Records a scalar; non-finite values are rejected rather than
    /// serialized as null.
    pub fn insert(&mut self, name: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "MetricReport" });
        }
        self.metrics.insert(name.to_string(), value);
        Ok(())
    }

    pub fn count(&mut self, name: &str, value: u64) {
        self.counts.insert(name.to_string(), value);
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn check_same_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            op,
            left: vec![a],
            right: vec![b],
        });
    }
    Ok(())
}

/// Mean squared and mean absolute error.
pub fn mse_mae(truth: &[f64], pred: &[f64]) -> Result<(f64, f64)> {
    check_same_len("mse_mae", truth.len(), pred.len())?;
    if truth.is_empty() {
        return Err(Error::InvalidArgument("empty input to mse_mae".into()));
    }
    let n = truth.len() as f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    for (&t, &p) in truth.iter().zip(pred) {
        let d = t - p;
        sq += d * d;
        abs += d.abs();
    }
    Ok((sq / n, abs / n))
}

/// Symmetric MAPE on the 0..200 scale. Terms where |truth| + |pred|
/// vanishes contribute zero.
pub fn smape(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_same_len("smape", truth.len(), pred.len())?;
    let n = truth.len() as f64;
    let mut acc = 0.0;
    for (&t, &p) in truth.iter().zip(pred) {
        let denom = t.abs() + p.abs();
        if denom >= DENOM_GUARD {
            acc += (t - p).abs() / denom;
        }
    }
    Ok(200.0 * acc / n)
}

/// Mean absolute percentage error; terms with near-zero truth are
/// skipped the same way the SMAPE guard works.
pub fn mape(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_same_len("mape", truth.len(), pred.len())?;
    let n = truth.len() as f64;
    let mut acc = 0.0;
    for (&t, &p) in truth.iter().zip(pred) {
        if t.abs() >= DENOM_GUARD {
            acc += (t - p).abs() / t.abs();
        }
    }
    Ok(100.0 * acc / n)
}

/// Mean absolute scaled error. The denominator is the mean absolute
/// seasonal difference of the in-sample series at lag `q`; a constant
/// seasonal in-sample is an error, not a NaN.
pub fn mase(truth: &[f64], pred: &[f64], insample: &[f64], q: usize) -> Result<f64> {
    check_same_len("mase", truth.len(), pred.len())?;
    if q == 0 {
        return Err(Error::InvalidArgument("mase seasonality q must be >= 1".into()));
    }
    if insample.len() <= q {
        return Err(Error::InvalidArgument(format!(
            "mase needs insample longer than q = {q}, got {}",
            insample.len()
        )));
    }
    let n = insample.len();
    let denom = insample[q..]
        .iter()
        .zip(&insample[..n - q])
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / (n - q) as f64;
    if denom < DENOM_GUARD {
        return Err(Error::InvalidArgument(
            "mase denominator is zero: seasonal in-sample is constant".into(),
        ));
    }
    let num = truth
        .iter()
        .zip(pred)
        .map(|(t, p)| (t - p).abs())
        .sum::<f64>()
        / truth.len() as f64;
    Ok(num / denom)
}

/// The four short-term forecast scores in one pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShortTermScores {
    pub smape: f64,
    pub mape: f64,
    pub mase: f64,
    pub owa: f64,
}

/// SMAPE, MAPE, MASE, and OWA against an injectable baseline forecast.
/// OWA halves the SMAPE and MASE ratios against the baseline; a ratio
/// with zero numerator is 0, and a zero baseline score under a nonzero
/// model score is an error.
pub fn smape_mape_mase_owa(
    truth: &[f64],
    pred: &[f64],
    insample: &[f64],
    q: usize,
    naive2: &[f64],
) -> Result<ShortTermScores> {
    check_same_len("smape_mape_mase_owa", pred.len(), naive2.len())?;
    let s = smape(truth, pred)?;
    let m = mape(truth, pred)?;
    let ms = mase(truth, pred, insample, q)?;
    let s_ref = smape(truth, naive2)?;
    let ms_ref = mase(truth, naive2, insample, q)?;
    let ratio = |num: f64, den: f64, what: &str| -> Result<f64> {
        if num == 0.0 {
            Ok(0.0)
        } else if den < DENOM_GUARD {
            Err(Error::InvalidArgument(format!(
                "owa: baseline {what} is zero while the model score is not"
            )))
        } else {
            Ok(num / den)
        }
    };
    let owa = 0.5 * (ratio(s, s_ref, "smape")? + ratio(ms, ms_ref, "mase")?);
    Ok(ShortTermScores {
        smape: s,
        mape: m,
        mase: ms,
        owa,
    })
}

/// Seasonal-naive forecast: repeat the last in-sample period of length
/// `q` across the horizon. Stands in for the M4 Naive2 baseline.
pub fn seasonal_naive(insample: &[f64], q: usize, horizon: usize) -> Result<Vec<f64>> {
    if q == 0 || insample.len() < q {
        return Err(Error::InvalidArgument(format!(
            "seasonal_naive needs at least q = {q} in-sample points"
        )));
    }
    let tail = &insample[insample.len() - q..];
    Ok((0..horizon).map(|i| tail[i % q]).collect())
}

/// Marks every true-anomaly segment fully detected when any of its
/// points was flagged; points outside true segments pass through.
pub fn point_adjust(truth: &[bool], raw_pred: &[bool]) -> Result<Vec<bool>> {
    check_same_len("point_adjust", truth.len(), raw_pred.len())?;
    let n = truth.len();
    let mut adjusted = raw_pred.to_vec();
    let mut i = 0;
    while i < n {
        if truth[i] {
            let start = i;
            while i < n && truth[i] {
                i += 1;
            }
            if raw_pred[start..i].iter().any(|&p| p) {
                for a in adjusted[start..i].iter_mut() {
                    *a = true;
                }
            }
        } else {
            i += 1;
        }
    }
    Ok(adjusted)
}

/// Pointwise precision/recall/F1, with 0/0 counted as 0.
pub fn precision_recall_f1(truth: &[bool], pred: &[bool]) -> Result<(f64, f64, f64)> {
    check_same_len("precision_recall_f1", truth.len(), pred.len())?;
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    for (&t, &p) in truth.iter().zip(pred) {
        match (t, p) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    let div = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = div(tp, tp + fp);
    let r = div(tp, tp + fn_);
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    Ok((p, r, f1))
}

/// Point-adjusted precision/recall/F1.
pub fn point_adjust_f1(truth: &[bool], raw_pred: &[bool]) -> Result<(f64, f64, f64)> {
    let adjusted = point_adjust(truth, raw_pred)?;
    precision_recall_f1(truth, &adjusted)
}
