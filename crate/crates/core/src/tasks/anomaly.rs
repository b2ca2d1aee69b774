//! Anomaly detection: reconstruction error scoring with a quantile
//! threshold and point-adjusted F1.

use serde::{Deserialize, Serialize};


use crate::error::{Error, Result};
use crate::exec;
use crate::metrics::{point_adjust, precision_recall_f1, MetricReport};
use crate::model::ReconModel;
use crate::series::Series;
use crate::tasks::{mean_scalars, series_tensor, with_params};
use crate::training::{run_training, TrainConfig, TrainOutcome};

/// How per-channel reconstruction errors collapse into one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelAgg {
    Mean,
    Max,
}

/// Scoring and thresholding knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalySettings {
    /// Quantile of training-set errors used as the detection threshold.
    pub threshold_quantile: f64,
    pub channel_agg: ChannelAgg,
}

impl Default for AnomalySettings {
    fn default() -> Self {
        Self {
            threshold_quantile: 0.99,
            channel_agg: ChannelAgg::Mean,
        }
    }
}

/// Trains the model to reconstruct normal windows (target == input).
pub fn train_anomaly(
    model: &mut ReconModel,
    windows: &[Series],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if windows.is_empty() {
        return Err(Error::InvalidArgument("no normal training windows".into()));
    }
    if model.cfg.target_len != model.cfg.input_len {
        return Err(Error::Config("anomaly detection needs target_len == input_len".into()));
    }
    if model.cfg.freeze_periods && model.frozen_periods.is_none() {
        let first = windows[0].clone();
        model.freeze_periods_from(&first)?;
    }
    let use_dropout = model.cfg.encoder.dropout > 0.0;
    with_params(model, |model, params| {
        run_training(params, windows.len(), cfg, |tape, vars, batch, rng| {
            let mut losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let w = &windows[i];
                let dropout = if use_dropout { Some(&mut *rng) } else { None };
                let pred = model.forward(tape, vars, w, dropout)?;
                losses.push(pred.mse_loss(&series_tensor(w))?);
            }
            mean_scalars(losses)
        })
    })
}

/// Per-time-point reconstruction error over a whole timeline, scored in
/// back-to-back windows (the final window is right-aligned so the tail
/// is covered too).
pub fn score_series(
    model: &ReconModel,
    series: &Series,
    settings: &AnomalySettings,
) -> Result<Vec<f64>> {
    let len = model.cfg.input_len;
    if series.len() < len {
        return Err(Error::SeriesTooShort {
            need: len,
            got: series.len(),
        });
    }
    let mut starts: Vec<usize> = (0..=series.len().saturating_sub(len)).step_by(len).collect();
    let covered = starts.last().unwrap() + len;
    if covered < series.len() {
        starts.push(series.len() - len);
    }
    let window_scores: Vec<Result<(usize, Vec<f64>)>> = exec::map(&starts, |&s| {
        let chunk = series.slice_time(s, s + len);
        let recon = model.predict(&chunk)?;
        let scores = (0..len)
            .map(|t| {
                let per_channel =
                    (0..chunk.channels()).map(|c| (recon.get(t, c) - chunk.get(t, c)).powi(2));
                match settings.channel_agg {
                    ChannelAgg::Mean => {
                        per_channel.sum::<f64>() / chunk.channels() as f64
                    }
                    ChannelAgg::Max => per_channel.fold(0.0, f64::max),
                }
            })
            .collect();
        Ok((s, scores))
    });
    let mut out = vec![f64::NAN; series.len()];
    for r in window_scores {
        let (s, scores) = r?;
        for (offset, score) in scores.into_iter().enumerate() {
            out[s + offset] = score;
        }
    }
    debug_assert!(out.iter().all(|v| v.is_finite()));
    Ok(out)
}

/// Upper `q` quantile of a score sample.
fn quantile(scores: &[f64], q: f64) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((sorted.len() as f64) * q).ceil() as usize;
    sorted[idx.clamp(1, sorted.len()) - 1]
}

/// Full protocol: threshold at a quantile of training-series scores,
/// flag test points above it, point-adjust, and report P/R/F1.
pub fn detect_anomalies(
    model: &ReconModel,
    train_series: &Series,
    test_series: &Series,
    labels: &[bool],
    settings: &AnomalySettings,
) -> Result<MetricReport> {
    if labels.len() != test_series.len() {
        return Err(Error::ShapeMismatch {
            op: "detect_anomalies",
            left: vec![labels.len()],
            right: vec![test_series.len()],
        });
    }
    if !(0.0..1.0).contains(&settings.threshold_quantile) {
        return Err(Error::Config("threshold quantile outside (0, 1)".into()));
    }
    let train_scores = score_series(model, train_series, settings)?;
    let threshold = quantile(&train_scores, settings.threshold_quantile);
    let test_scores = score_series(model, test_series, settings)?;
    let raw: Vec<bool> = test_scores.iter().map(|&s| s > threshold).collect();
    let adjusted = point_adjust(labels, &raw)?;
    let (p, r, f1) = precision_recall_f1(labels, &adjusted)?;
    let mut report = MetricReport::new("anomaly");
    report.insert("precision", p)?;
    report.insert("recall", r)?;
    report.insert("f1", f1)?;
    report.insert("threshold", threshold)?;
    report.count("n_points", test_series.len() as u64);
    report.count("n_flagged_raw", raw.iter().filter(|&&b| b).count() as u64);
    Ok(report)
}

/// Lowering the threshold can only grow the flagged set, so recall is
/// monotone in it; exposed for tests.
pub fn flag_scores(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s > threshold).collect()
}
