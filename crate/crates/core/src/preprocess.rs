//! Instance normalization, moving-average decomposition, and linear
//! pre-interpolation of masked inputs.

use crate::error::{Error, Result};
use crate::series::{Mask, Series};

/// Floor applied to per-channel standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-5;

/// Default moving-average kernel for trend extraction.
pub const DEFAULT_KERNEL: usize = 25;

/// Per-channel mean and (floored) standard deviation of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Seasonal and trend parts; they sum back to the input exactly.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub seasonal: Series,
    pub trend: Series,
}

/// Shifts each channel to mean 0 and scales it to unit standard
/// deviation (population convention), flooring sigma for constant
/// channels. Returns the stats needed to undo the transform.
pub fn normalize(x: &Series) -> Result<(Series, NormStats)> {
    let (len, channels) = (x.len(), x.channels());
    if len < 2 {
        return Err(Error::SeriesTooShort { need: 2, got: len });
    }
    let mut mu = vec![0.0; channels];
    let mut sigma = vec![0.0; channels];
    for c in 0..channels {
        let mean = (0..len).map(|t| x.get(t, c)).sum::<f64>() / len as f64;
        let var = (0..len)
            .map(|t| {
                let d = x.get(t, c) - mean;
                d * d
            })
            .sum::<f64>()
            / len as f64;
        mu[c] = mean;
        sigma[c] = var.sqrt().max(SIGMA_FLOOR);
    }
    let out = Series::from_fn(len, channels, |t, c| (x.get(t, c) - mu[c]) / sigma[c]);
    Ok((out, NormStats { mu, sigma }))
}

/// Undoes [`normalize`]: `sigma * y + mu` per channel.
pub fn denormalize(y: &Series, stats: &NormStats) -> Result<Series> {
    if y.channels() != stats.mu.len() || stats.mu.len() != stats.sigma.len() {
        return Err(Error::ShapeMismatch {
            op: "denormalize",
            left: vec![y.len(), y.channels()],
            right: vec![stats.mu.len()],
        });
    }
    Ok(Series::from_fn(y.len(), y.channels(), |t, c| {
        stats.sigma[c] * y.get(t, c) + stats.mu[c]
    }))
}

/// Splits a series into trend (centered moving average with replicate
/// edge padding) and seasonal (input minus trend) parts.
pub fn decompose(x: &Series, kernel: usize) -> Result<Decomposition> {
    let len = x.len();
    if kernel % 2 == 0 || kernel == 0 {
        return Err(Error::InvalidArgument(format!(
            "moving-average kernel must be odd, got {kernel}"
        )));
    }
    if kernel > 2 * len - 1 {
        return Err(Error::InvalidArgument(format!(
            "kernel {kernel} too large for series of length {len}"
        )));
    }
    let half = kernel / 2;
    let trend = Series::from_fn(len, x.channels(), |t, c| {
        let mut sum = 0.0;
        for offset in 0..kernel {
            // replicate padding: clamp the index into [0, len)
            let idx = (t + offset).saturating_sub(half).min(len - 1);
            sum += x.get(idx, c);
        }
        sum / kernel as f64
    });
    let seasonal = Series::from_fn(len, x.channels(), |t, c| x.get(t, c) - trend.get(t, c));
    Ok(Decomposition { seasonal, trend })
}

/// Replaces each missing point with the average of its nearest observed
/// neighbors (one-sided at the edges). Observed points pass through
/// untouched; every missing point searches for *observed* neighbors, so
/// the result does not depend on fill order.
pub fn pre_interpolate(x: &Series, mask: &Mask) -> Result<Series> {
    if mask.len() != x.len() || mask.channels() != x.channels() {
        return Err(Error::ShapeMismatch {
            op: "pre_interpolate",
            left: vec![x.len(), x.channels()],
            right: vec![mask.len(), mask.channels()],
        });
    }
    let len = x.len();
    let mut out = x.clone();
    for c in 0..x.channels() {
        let observed: Vec<usize> = (0..len).filter(|&t| !mask.is_missing(t, c)).collect();
        if observed.is_empty() {
            return Err(Error::FullyMissingChannel { channel: c });
        }
        for t in 0..len {
            if !mask.is_missing(t, c) {
                continue;
            }
            let before = observed.iter().rev().find(|&&o| o < t).copied();
            let after = observed.iter().find(|&&o| o > t).copied();
            let v = match (before, after) {
                (Some(b), Some(a)) => (x.get(b, c) + x.get(a, c)) / 2.0,
                (None, Some(a)) => x.get(a, c),
                (Some(b), None) => x.get(b, c),
                (None, None) => unreachable!("observed is non-empty"),
            };
            out.set(t, c, v);
        }
    }
    Ok(out)
}
