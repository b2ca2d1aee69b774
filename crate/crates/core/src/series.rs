//! Multivariate series and per-point masks.

use crate::error::{Error, Result};

/// A length-L, C-channel series stored row-major (time-major).
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    len: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Series {
    pub fn new(len: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if len * channels != data.len() || len == 0 || channels == 0 {
            return Err(Error::BadTensor {
                shape: vec![len, channels],
                len: data.len(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "Series::new" });
        }
        Ok(Self {
            len,
            channels,
            data,
        })
    }

    pub fn zeros(len: usize, channels: usize) -> Self {
        Self {
            len,
            channels,
            data: vec![0.0; len * channels],
        }
    }

    pub fn from_fn(len: usize, channels: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(len * channels);
        for t in 0..len {
            for c in 0..channels {
                data.push(f(t, c));
            }
        }
        Self {
            len,
            channels,
            data,
        }
    }

    /// Builds a single-channel series.
    pub fn univariate(values: Vec<f64>) -> Result<Self> {
        let len = values.len();
        Self::new(len, 1, values)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.data[t * self.channels + c]
    }

    pub fn set(&mut self, t: usize, c: usize, v: f64) {
        self.data[t * self.channels + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Copies one channel out as a contiguous vector.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        (0..self.len).map(|t| self.get(t, c)).collect()
    }

    /// Rows `start..end` as a new series.
    pub fn slice_time(&self, start: usize, end: usize) -> Series {
        debug_assert!(start < end && end <= self.len);
        Series {
            len: end - start,
            channels: self.channels,
            data: self.data[start * self.channels..end * self.channels].to_vec(),
        }
    }
}

/// Boolean per-point mask aligned with a [`Series`]; `true` marks missing.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    len: usize,
    channels: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(len: usize, channels: usize, data: Vec<bool>) -> Result<Self> {
        if len * channels != data.len() {
            return Err(Error::BadTensor {
                shape: vec![len, channels],
                len: data.len(),
            });
        }
        Ok(Self {
            len,
            channels,
            data,
        })
    }

    pub fn all_observed(len: usize, channels: usize) -> Self {
        Self {
            len,
            channels,
            data: vec![false; len * channels],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn is_missing(&self, t: usize, c: usize) -> bool {
        self.data[t * self.channels + c]
    }

    pub fn set_missing(&mut self, t: usize, c: usize, missing: bool) {
        self.data[t * self.channels + c] = missing;
    }

    pub fn missing_count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }
}
