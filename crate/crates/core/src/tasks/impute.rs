//! Imputation: pre-interpolate masked inputs, reconstruct, and keep
//! observed points verbatim.




use crate::dataio::gen_mask;
use crate::error::{Error, Result};
use crate::exec;
use crate::metrics::MetricReport;
use crate::model::ReconModel;
use crate::numerics::{Tensor, Var};
use crate::preprocess::pre_interpolate;
use crate::series::{Mask, Series};
use crate::tasks::{mean_scalars, series_tensor, with_params};
use crate::training::{run_training, TrainConfig, TrainOutcome};

/// Imputation knobs. Disabling pre-interpolation leaves missing points
/// at zero, the ablation baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImputeSettings {
    pub mask_ratio: f64,
    pub pre_interpolate: bool,
}

impl Default for ImputeSettings {
    fn default() -> Self {
        Self {
            mask_ratio: 0.25,
            pre_interpolate: true,
        }
    }
}

fn model_input(x_masked: &Series, mask: &Mask, settings: &ImputeSettings) -> Result<Series> {
    if settings.pre_interpolate {
        pre_interpolate(x_masked, mask)
    } else {
        let mut zeroed = x_masked.clone();
        for t in 0..zeroed.len() {
            for c in 0..zeroed.channels() {
                if mask.is_missing(t, c) {
                    zeroed.set(t, c, 0.0);
                }
            }
        }
        Ok(zeroed)
    }
}

/// Completes a masked series: reconstruct, then overwrite every
/// observed position with its input value so only missing points take
/// model output.
pub fn impute(
    model: &ReconModel,
    x_masked: &Series,
    mask: &Mask,
    settings: &ImputeSettings,
) -> Result<Series> {
    if model.cfg.target_len != model.cfg.input_len {
        return Err(Error::Config("imputation needs target_len == input_len".into()));
    }
    let input = model_input(x_masked, mask, settings)?;
    let recon = model.predict(&input)?;
    let mut out = recon;
    for t in 0..x_masked.len() {
        for c in 0..x_masked.channels() {
            if !mask.is_missing(t, c) {
                out.set(t, c, x_masked.get(t, c));
            }
        }
    }
    Ok(out)
}

/// Squared-error mean restricted to missing positions, on the tape.
fn masked_mse<'t>(pred: Var<'t>, truth: &Tensor, mask: &Mask) -> Result<Var<'t>> {
    let n_missing = mask.missing_count();
    if n_missing == 0 {
        return Err(Error::InvalidArgument("mask marks nothing missing".into()));
    }
    let (len, channels) = (mask.len(), mask.channels());
    let weights: Vec<f64> = (0..len * channels)
        .map(|i| {
            if mask.is_missing(i / channels, i % channels) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let w = pred
        .tape()
        .constant(Tensor::matrix(len, channels, weights)?);
    let t = pred.tape().constant(truth.clone());
    let diff = pred.sub(t)?.mul(w)?;
    diff.mul(diff)?
        .mean_all()?
        .scale((len * channels) as f64 / n_missing as f64)
}

fn window_mask(len: usize, channels: usize, ratio: f64, seed: u64, index: usize) -> Result<Mask> {
    // one deterministic mask per window, stable across epochs
    gen_mask(len, channels, ratio, seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Trains by reconstructing clean windows from masked, optionally
/// pre-interpolated inputs; the loss covers missing positions only.
pub fn train_impute(
    model: &mut ReconModel,
    windows: &[Series],
    settings: &ImputeSettings,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if windows.is_empty() {
        return Err(Error::InvalidArgument("no training windows".into()));
    }
    if model.cfg.freeze_periods && model.frozen_periods.is_none() {
        let first = windows[0].clone();
        model.freeze_periods_from(&first)?;
    }
    let use_dropout = model.cfg.encoder.dropout > 0.0;
    let mask_seed = cfg.seed;
    let settings = *settings;
    with_params(model, |model, params| {
        run_training(params, windows.len(), cfg, |tape, vars, batch, rng| {
            let mut losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let clean = &windows[i];
                let mask = window_mask(
                    clean.len(),
                    clean.channels(),
                    settings.mask_ratio,
                    mask_seed,
                    i,
                )?;
                let input = model_input(clean, &mask, &settings)?;
                let dropout = if use_dropout { Some(&mut *rng) } else { None };
                let pred = model.forward(tape, vars, &input, dropout)?;
                losses.push(masked_mse(pred, &series_tensor(clean), &mask)?);
            }
            mean_scalars(losses)
        })
    })
}

fn masked_mse_values(truth: &Series, completed: &Series, mask: &Mask) -> (f64, f64, usize) {
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut n = 0;
    for t in 0..truth.len() {
        for c in 0..truth.channels() {
            if mask.is_missing(t, c) {
                let d = truth.get(t, c) - completed.get(t, c);
                sq += d * d;
                abs += d.abs();
                n += 1;
            }
        }
    }
    (sq / n.max(1) as f64, abs / n.max(1) as f64, n)
}

/// Masks each window deterministically, imputes it, and reports the
/// error on the missing positions.
pub fn evaluate_impute(
    model: &ReconModel,
    windows: &[Series],
    settings: &ImputeSettings,
    mask_seed: u64,
) -> Result<MetricReport> {
    if windows.is_empty() {
        return Err(Error::InvalidArgument("no evaluation windows".into()));
    }
    let indices: Vec<usize> = (0..windows.len()).collect();
    let per_window: Vec<Result<(f64, f64, usize)>> = exec::map(&indices, |&idx| {
        let clean = &windows[idx];
        let mask = window_mask(
            clean.len(),
            clean.channels(),
            settings.mask_ratio,
            mask_seed,
            idx,
        )?;
        let mut masked = clean.clone();
        for t in 0..masked.len() {
            for c in 0..masked.channels() {
                if mask.is_missing(t, c) {
                    masked.set(t, c, 0.0);
                }
            }
        }
        let completed = impute(model, &masked, &mask, settings)?;
        for t in 0..clean.len() {
            for c in 0..clean.channels() {
                if !mask.is_missing(t, c) {
                    assert_eq!(completed.get(t, c), masked.get(t, c));
                }
            }
        }
        Ok(masked_mse_values(clean, &completed, &mask))
    });
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut n = 0usize;
    for r in per_window {
        let (s, a, count) = r?;
        sq += s * count as f64;
        abs += a * count as f64;
        n += count;
    }
    let mut report = MetricReport::new("impute");
    report.insert("mse", sq / n.max(1) as f64)?;
    report.insert("mae", abs / n.max(1) as f64)?;
    report.count("n_windows", windows.len() as u64);
    report.count("n_missing", n as u64);
    Ok(report)
}

/// MSE of pre-interpolation alone (no model) on the same masks.
pub fn pre_interpolation_only_mse(
    windows: &[Series],
    mask_ratio: f64,
    mask_seed: u64,
) -> Result<f64> {
    let mut sq = 0.0;
    let mut n = 0usize;
    for (idx, clean) in windows.iter().enumerate() {
        let mask = window_mask(clean.len(), clean.channels(), mask_ratio, mask_seed, idx)?;
        let filled = pre_interpolate(clean, &mask)?;
        let (s, _, count) = masked_mse_values(clean, &filled, &mask);
        sq += s * count as f64;
        n += count;
    }
    Ok(sq / n.max(1) as f64)
}

/// Convenience used by tests: mask a clean window and return both the
/// masked series and the mask.
pub fn mask_window(clean: &Series, ratio: f64, seed: u64) -> Result<(Series, Mask)> {
    let mask = gen_mask(clean.len(), clean.channels(), ratio, seed)?;
    let mut masked = clean.clone();
    for t in 0..clean.len() {
        for c in 0..clean.channels() {
            if mask.is_missing(t, c) {
                masked.set(t, c, 0.0);
            }
        }
    }
    Ok((masked, mask))
}
