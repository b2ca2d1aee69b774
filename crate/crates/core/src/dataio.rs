//! Dataset ingestion and construction: CSV loading, synthetic
//! multi-periodic generators, contiguous splits, sliding windows, and
//! imputation masks.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{Mask, Series};

/// Reads a rectangular numeric CSV into a time-major series. A named
/// time column (header mode only) is dropped from the channels.
pub fn load_csv(path: &Path, has_header: bool, time_column: Option<&str>) -> Result<Series> {
    if time_column.is_some() && !has_header {
        return Err(Error::InvalidArgument(
            "time_column requires a header row".into(),
        ));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let drop_col: Option<usize> = if let Some(name) = time_column {
        let headers = reader.headers()?;
        let idx = headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::InvalidArgument(format!("time column '{name}' not found in header"))
        })?;
        Some(idx)
    } else {
        None
    };

    let mut data: Vec<f64> = Vec::new();
    let mut channels = 0usize;
    let mut rows = 0usize;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let mut row_vals = Vec::with_capacity(record.len());
        for (col_idx, field) in record.iter().enumerate() {
            if Some(col_idx) == drop_col {
                continue;
            }
            let v: f64 = field.parse().map_err(|_| Error::CsvCell {
                row: row_idx + 1,
                col: col_idx + 1,
                msg: format!("'{field}' is not numeric"),
            })?;
            row_vals.push(v);
        }
        if rows == 0 {
            channels = row_vals.len();
        }
        data.extend(row_vals);
        rows += 1;
    }
    if rows == 0 || channels == 0 {
        return Err(Error::InvalidArgument("csv contains no data".into()));
    }
    Series::new(rows, channels, data)
}

/// One sinusoidal component of a synthetic series: a full cycle every
/// `period` samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub period: usize,
    pub amplitude: f64,
    pub phase: f64,
}

/// Recipe for a reproducible synthetic multi-periodic series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub len: usize,
    pub channels: usize,
    pub tones: Vec<Tone>,
    pub trend_slope: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Sum of sinusoids plus linear trend plus Gaussian noise; channels
/// share the tones and differ only in their noise draws.
pub fn gen_multiperiod(spec: &SyntheticSpec) -> Result<Series> {
    let mut periods: Vec<usize> = spec.tones.iter().map(|t| t.period).collect();
    periods.sort_unstable();
    periods.dedup();
    if periods.len() != spec.tones.len() {
        return Err(Error::InvalidArgument(
            "synthetic tones must have distinct periods".into(),
        ));
    }
    if spec.tones.iter().any(|t| t.period == 0) {
        return Err(Error::InvalidArgument("tone period must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut data = Vec::with_capacity(spec.len * spec.channels);
    for t in 0..spec.len {
        for _c in 0..spec.channels {
            let mut v = spec.trend_slope * t as f64;
            for tone in &spec.tones {
                v += tone.amplitude
                    * (std::f64::consts::TAU * t as f64 / tone.period as f64 + tone.phase).sin();
            }
            if spec.noise_sigma > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                v += spec.noise_sigma * z;
            }
            data.push(v);
        }
    }
    Series::new(spec.len, spec.channels, data)
}

/// One supervised pair: `input` of length L followed by `target` of
/// length T, cut from the same timeline with no gap.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair {
    pub input: Series,
    pub target: Series,
}

/// Sliding windows at the given stride; the last window ends exactly at
/// or before the series end.
pub fn window(series: &Series, input_len: usize, target_len: usize, stride: usize) -> Result<Vec<WindowPair>> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    let need = input_len + target_len;
    if need > series.len() {
        return Err(Error::SeriesTooShort {
            need,
            got: series.len(),
        });
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + need <= series.len() {
        out.push(WindowPair {
            input: series.slice_time(start, start + input_len),
            target: series.slice_time(start + input_len, start + need),
        });
        start += stride;
    }
    Ok(out)
}

/// Input-only windows of a fixed length, for tasks that reconstruct
/// the window itself (imputation, anomaly detection).
pub fn chunk(series: &Series, len: usize, stride: usize) -> Result<Vec<Series>> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    if len > series.len() {
        return Err(Error::SeriesTooShort {
            need: len,
            got: series.len(),
        });
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + len <= series.len() {
        out.push(series.slice_time(start, start + len));
        start += stride;
    }
    Ok(out)
}

/// Contiguous train/validation/test fractions of the timeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|&p| p < 0.0) || self.train == 0.0 {
            return Err(Error::Config("split fractions must be non-negative with train > 0".into()));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// Splits a timeline into contiguous train | val | test segments.
/// Windows are cut per segment afterwards, so none straddles a boundary.
pub fn split_series(series: &Series, fractions: SplitFractions) -> Result<(Series, Option<Series>, Option<Series>)> {
    fractions.validate()?;
    let len = series.len();
    let train_end = ((len as f64) * fractions.train).floor() as usize;
    let val_end = ((len as f64) * (fractions.train + fractions.val)).floor() as usize;
    if train_end == 0 {
        return Err(Error::SeriesTooShort { need: 1, got: 0 });
    }
    let train = series.slice_time(0, train_end);
    let val = (val_end > train_end).then(|| series.slice_time(train_end, val_end));
    let test = (len > val_end).then(|| series.slice_time(val_end, len));
    Ok((train, val, test))
}

/// Uniform random missing-point mask with an exact per-channel count of
/// `round(ratio * len)`; never masks a whole channel.
pub fn gen_mask(len: usize, channels: usize, ratio: f64, seed: u64) -> Result<Mask> {
    if !(0.0..1.0).contains(&ratio) || ratio <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "mask ratio {ratio} outside (0, 1)"
        )));
    }
    let count = (ratio * len as f64).round() as usize;
    if count >= len {
        return Err(Error::InvalidArgument(format!(
            "mask ratio {ratio} rounds to the full channel length {len}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = Mask::all_observed(len, channels);
    for c in 0..channels {
        let mut indices: Vec<usize> = (0..len).collect();
        indices.shuffle(&mut rng);
        for &t in indices.iter().take(count) {
            mask.set_missing(t, c, true);
        }
    }
    Ok(mask)
}

/// Where a dataset comes from: a CSV file or a synthetic recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Csv {
        path: String,
        has_header: bool,
        time_column: Option<String>,
    },
    Synthetic(SyntheticSpec),
}

/// Complete description of one dataset: source, window geometry, split
/// fractions, stride, and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source: DataSource,
    pub input_len: usize,
    pub target_len: usize,
    pub stride: usize,
    pub split: SplitFractions,
    pub seed: u64,
}

impl DatasetManifest {
    /// Materializes the raw timeline behind this manifest.
    pub fn load(&self) -> Result<Series> {
        match &self.source {
            DataSource::Csv {
                path,
                has_header,
                time_column,
            } => load_csv(Path::new(path), *has_header, time_column.as_deref()),
            DataSource::Synthetic(spec) => gen_multiperiod(spec),
        }
    }
}

/// Parses flat INI-style text: `[section]` lines, `key = value` pairs,
/// `#` or `;` comments. Keys before any section land in "".
pub fn parse_sections(text: &str) -> Result<BTreeMap<String, BTreeMap<String, String>>> {
    let mut out: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut current = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            out.entry(current.clone()).or_default();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected 'key = value', got '{line}'",
                lineno + 1
            )));
        };
        out.entry(current.clone())
            .or_default()
            .insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}
