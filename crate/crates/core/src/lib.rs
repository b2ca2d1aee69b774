//! Periodic-pyramid attention for time series analysis.
//!
//! The pipeline: instance-normalize a window, split off the trend with a
//! moving average, detect the dominant periods of the seasonal part via
//! FFT, tile the window into per-period components, run masked
//! self-attention over the component tokens, and aggregate root-to-leaf
//! feature flows into the output. Forecasting, imputation, anomaly
//! detection, and classification are built on top of that core, together
//! with a tape-based gradient engine, Adam training, and the evaluation
//! metrics the tasks report.

pub mod dataio;
pub mod encoder;
pub mod error;
pub mod exec;
pub mod flows;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod preprocess;
pub mod pyramid;
pub mod series;
pub mod spectral;
pub mod tasks;
pub mod training;

pub use error::{Error, Result};
pub use series::{Mask, Series};
