//! Forecasting: train on (input, target) windows, report MSE/MAE.

use crate::dataio::WindowPair;
use crate::error::{Error, Result};
use crate::exec;
use crate::metrics::{mse_mae, MetricReport};
use crate::model::ReconModel;
use crate::tasks::{mean_scalars, series_tensor, with_params};
use crate::training::{run_training, LossKind, TrainConfig, TrainOutcome};

/// Trains the reconstruction model on forecast windows.
pub fn train_forecast(
    model: &mut ReconModel,
    windows: &[WindowPair],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if windows.is_empty() {
        return Err(Error::InvalidArgument("no training windows".into()));
    }
    if model.cfg.freeze_periods && model.frozen_periods.is_none() {
        let first = windows[0].input.clone();
        model.freeze_periods_from(&first)?;
    }
    let use_dropout = model.cfg.encoder.dropout > 0.0;
    let loss_kind = cfg.loss;
    with_params(model, |model, params| {
        run_training(params, windows.len(), cfg, |tape, vars, batch, rng| {
            let mut losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let w = &windows[i];
                let dropout = if use_dropout { Some(&mut *rng) } else { None };
                let pred = model.forward(tape, vars, &w.input, dropout)?;
                let target = series_tensor(&w.target);
                let loss = match loss_kind {
                    LossKind::Mse => pred.mse_loss(&target)?,
                    LossKind::Smape => pred.smape_loss(&target)?,
                    LossKind::CrossEntropy => {
                        return Err(Error::Config(
                            "cross-entropy loss is for classification".into(),
                        ))
                    }
                };
                losses.push(loss);
            }
            mean_scalars(losses)
        })
    })
}

/// Pooled MSE/MAE over forecast windows with a frozen model.
pub fn evaluate_forecast(model: &ReconModel, windows: &[WindowPair]) -> Result<MetricReport> {
    if windows.is_empty() {
        return Err(Error::InvalidArgument("no evaluation windows".into()));
    }
    let results: Vec<Result<(Vec<f64>, Vec<f64>)>> = exec::map(windows, |w| {
        let pred = model.predict(&w.input)?;
        Ok((w.target.data().to_vec(), pred.data().to_vec()))
    });
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for r in results {
        let (t, p) = r?;
        truth.extend(t);
        pred.extend(p);
    }
    let (mse, mae) = mse_mae(&truth, &pred)?;
    let mut report = MetricReport::new("forecast");
    report.insert("mse", mse)?;
    report.insert("mae", mae)?;
    report.count("n_windows", windows.len() as u64);
    report.count("n_points", truth.len() as u64);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{gen_multiperiod, window, SyntheticSpec, Tone};
    use crate::encoder::EncoderConfig;
    use crate::model::ReconConfig;
    use crate::series::Series;

    fn two_tone(len: usize, seed: u64) -> Series {
        gen_multiperiod(&SyntheticSpec {
            len,
            channels: 1,
            tones: vec![
                Tone {
                    period: 16,
                    amplitude: 1.0,
                    phase: 0.0,
                },
                Tone {
                    period: 8,
                    amplitude: 0.5,
                    phase: 0.7,
                },
            ],
            trend_slope: 0.0,
            noise_sigma: 0.0,
            seed,
        })
        .unwrap()
    }

    fn small_model(input_len: usize, target_len: usize, seed: u64) -> ReconModel {
        ReconModel::init(
            ReconConfig {
                input_len,
                target_len,
                channels: 1,
                k: 3,
                kernel: 25,
                max_flows: 4096,
                freeze_periods: false,
                encoder: EncoderConfig {
                    layers: 1,
                    d_model: 8,
                    heads: 2,
                    ff_mult: 2,
                    dropout: 0.0,
                    layer_norm: true,
                },
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn zeroed_model_predicts_channel_means() {
        use crate::numerics::Tensor;
        let mut model = small_model(32, 8, 1);
        for i in 0..model.params.len() {
            let shape = model.params.tensor(i).shape().to_vec();
            model.params.set_tensor(i, Tensor::zeros(shape));
        }
        let x = Series::from_fn(32, 1, |t, _| (t as f64 * 0.81).sin() + 2.0);
        let mean = x.data().iter().sum::<f64>() / 32.0;
        let pred = model.predict(&x).unwrap();
        for t in 0..8 {
            assert!((pred.get(t, 0) - mean).abs() < 1e-9);
        }
    }

    #[test]
    fn overfits_a_sine_continuation() {
        let series = two_tone(96, 5);
        let windows = window(&series, 32, 8, 8).unwrap();
        let mut model = small_model(32, 8, 2);
        let cfg = TrainConfig {
            lr: 5e-3,
            epochs: 60,
            batch_size: windows.len(),
            seed: 11,
            ..TrainConfig::default()
        };
        let out = train_forecast(&mut model, &windows, &cfg).unwrap();
        assert!(out.final_loss < 0.05, "train loss {}", out.final_loss);
        let report = evaluate_forecast(&model, &windows).unwrap();
        assert!(report.metrics["mse"] < 0.05, "mse {}", report.metrics["mse"]);
    }

    #[test]
    fn every_parameter_block_receives_gradient() {
        use crate::numerics::Tape;
        let series = two_tone(60, 9);
        let windows = window(&series, 32, 8, 4).unwrap();
        let model = small_model(32, 8, 3);
        let tape = Tape::new();
        let vars = model.params.bind(&tape, true);
        let mut losses = Vec::new();
        for w in &windows {
            let pred = model.forward(&tape, &vars, &w.input, None).unwrap();
            losses.push(pred.mse_loss(&series_tensor(&w.target)).unwrap());
        }
        let loss = mean_scalars(losses).unwrap();
        let grads = tape.backward(loss).unwrap();
        for (i, v) in vars.iter().enumerate() {
            let g = grads.wrt(*v).unwrap_or_else(|| panic!("no grad for {}", model.params.name(i)));
            assert!(
                g.data().iter().any(|&x| x != 0.0),
                "silent frozen block '{}'",
                model.params.name(i)
            );
        }
    }
}
