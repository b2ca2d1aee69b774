//! The four analysis pipelines over the shared model core.

mod anomaly;
mod classify;
mod forecast;
mod impute;

pub use anomaly::{detect_anomalies, flag_scores, score_series, train_anomaly, AnomalySettings, ChannelAgg};
pub use classify::{evaluate_classify, train_classify, LabeledSample};
pub use forecast::{evaluate_forecast, train_forecast};
pub use impute::{
    evaluate_impute, impute, mask_window, pre_interpolation_only_mse, train_impute,
    ImputeSettings,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParamRegistry, ReconModel};
use crate::numerics::{Tensor, Var};
use crate::series::Series;

/// Which pipeline a run drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Forecast,
    Impute,
    Anomaly,
    Classify,
}

/// Task geometry and task-specific knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub input_len: usize,
    /// Forecast horizon; imputation and anomaly detection reconstruct
    /// with target_len == input_len.
    pub target_len: usize,
    pub num_classes: usize,
    pub mask_ratio: f64,
    pub anomaly_threshold_quantile: f64,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            TaskKind::Forecast => {
                if self.target_len == 0 {
                    return Err(Error::Config("forecast target_len must be >= 1".into()));
                }
            }
            TaskKind::Impute | TaskKind::Anomaly => {
                if self.target_len != self.input_len {
                    return Err(Error::Config(
                        "reconstruction tasks need target_len == input_len".into(),
                    ));
                }
                if self.kind == TaskKind::Impute && !(0.0..1.0).contains(&self.mask_ratio) {
                    return Err(Error::Config(format!(
                        "mask ratio {} outside (0, 1)",
                        self.mask_ratio
                    )));
                }
                if self.kind == TaskKind::Anomaly
                    && !(0.0..1.0).contains(&self.anomaly_threshold_quantile)
                {
                    return Err(Error::Config("threshold quantile outside (0, 1)".into()));
                }
            }
            TaskKind::Classify => {
                if self.num_classes < 2 {
                    return Err(Error::Config("classification needs >= 2 classes".into()));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn series_tensor(s: &Series) -> Tensor {
    Tensor::matrix(s.len(), s.channels(), s.data().to_vec()).expect("series data is finite")
}

/// Mean of a non-empty list of scalar losses.
pub(crate) fn mean_scalars<'t>(losses: Vec<Var<'t>>) -> Result<Var<'t>> {
    let n = losses.len();
    let mut it = losses.into_iter();
    let mut total = it
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty loss batch".into()))?;
    for l in it {
        total = total.add(l)?;
    }
    total.scale(1.0 / n as f64)
}

/// Lends the parameter registry out of the model so a training loop can
/// mutate it while the model's geometry drives the forward pass.
pub(crate) fn with_params<R>(
    model: &mut ReconModel,
    f: impl FnOnce(&ReconModel, &mut ParamRegistry) -> Result<R>,
) -> Result<R> {
    let mut params = std::mem::take(&mut model.params);
    let result = f(model, &mut params);
    model.params = params;
    result
}
