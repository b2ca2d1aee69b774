//! Classification: cross-entropy training over labeled samples and
//! accuracy evaluation.

use crate::error::{Error, Result};
use crate::exec;
use crate::metrics::MetricReport;
use crate::model::{ClassifyModel, ParamRegistry};
use crate::series::Series;
use crate::tasks::mean_scalars;
use crate::training::{run_training, TrainConfig, TrainOutcome};

/// One labeled series.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub series: Series,
    pub label: usize,
}

/// Trains the classifier with cross-entropy on the given samples.
pub fn train_classify(
    model: &mut ClassifyModel,
    samples: &[LabeledSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    if let Some(bad) = samples.iter().find(|s| s.label >= model.cfg.num_classes) {
        return Err(Error::InvalidArgument(format!(
            "label {} out of range for {} classes",
            bad.label, model.cfg.num_classes
        )));
    }
    let use_dropout = model.cfg.encoder.dropout > 0.0;
    let mut params = std::mem::take(&mut model.params);
    let result = run_classify_loop(model, &mut params, samples, cfg, use_dropout);
    model.params = params;
    result
}

fn run_classify_loop(
    model: &ClassifyModel,
    params: &mut ParamRegistry,
    samples: &[LabeledSample],
    cfg: &TrainConfig,
    use_dropout: bool,
) -> Result<TrainOutcome> {
    run_training(params, samples.len(), cfg, |tape, vars, batch, rng| {
        let mut losses = Vec::with_capacity(batch.len());
        for &i in batch {
            let s = &samples[i];
            let dropout = if use_dropout { Some(&mut *rng) } else { None };
            let logits = model.forward_logits(tape, vars, &s.series, dropout)?;
            losses.push(logits.cross_entropy(&[s.label])?);
        }
        mean_scalars(losses)
    })
}

/// Accuracy over a sample set with a frozen model.
pub fn evaluate_classify(model: &ClassifyModel, samples: &[LabeledSample]) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no evaluation samples".into()));
    }
    let hits: Vec<Result<bool>> =
        exec::map(samples, |s| Ok(model.predict(&s.series)? == s.label));
    let mut correct = 0usize;
    for h in hits {
        if h? {
            correct += 1;
        }
    }
    let mut report = MetricReport::new("classify");
    report.insert("accuracy", correct as f64 / samples.len() as f64)?;
    report.count("n_samples", samples.len() as u64);
    report.count("n_correct", correct as u64);
    Ok(report)
}
