//! Loss selection, the mini-batch training loop, checkpoints, and
//! deterministic seeding.

mod adam;
mod checkpoint;

pub use adam::{adam_step, clip_global_norm, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint};

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamRegistry;
use crate::numerics::{Tape, Var};

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Smape,
    CrossEntropy,
}

/// Optimizer and loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossKind,
    pub seed: u64,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            betas: (0.9, 0.999),
            eps: 1e-8,
            batch_size: 8,
            epochs: 10,
            loss: LossKind::Mse,
            seed: 0,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1e-5..=1e-2).contains(&self.lr) {
            return Err(Error::Config(format!(
                "learning rate {} outside [1e-5, 1e-2]",
                self.lr
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Loss curve and bookkeeping from one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// (step, loss) pairs, one per optimizer update.
    pub loss_curve: Vec<(u64, f64)>,
    pub final_loss: f64,
}

impl TrainOutcome {
    /// Writes the loss curve as `step,loss` CSV rows.
    pub fn write_loss_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "step,loss")?;
        for (step, loss) in &self.loss_curve {
            writeln!(f, "{step},{loss:.17e}")?;
        }
        Ok(())
    }
}

/// Mini-batch loop over `dataset_len` samples. The closure receives the
/// tape, the bound parameter vars, the sample indices of this batch,
/// and the run RNG (for dropout), and returns the scalar batch loss.
/// Shuffling is deterministic in the seed; gradients are clipped to the
/// configured global norm before each Adam update. A non-finite loss or
/// gradient aborts; parameters keep their last good values because the
/// failed step never applies an update.
pub fn run_training<F>(
    params: &mut ParamRegistry,
    dataset_len: usize,
    cfg: &TrainConfig,
    mut batch_loss: F,
) -> Result<TrainOutcome>
where
    F: for<'t> FnMut(&'t Tape, &[Var<'t>], &[usize], &mut ChaCha8Rng) -> Result<Var<'t>>,
{
    cfg.validate()?;
    if dataset_len == 0 {
        return Err(Error::InvalidArgument("empty training dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(params);
    let mut curve = Vec::new();
    let mut indices: Vec<usize> = (0..dataset_len).collect();
    let mut step = 0u64;
    let mut last = f64::INFINITY;

    for _epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        for batch in indices.chunks(cfg.batch_size) {
            let tape = Tape::new();
            let vars = params.bind(&tape, true);
            let loss = batch_loss(&tape, &vars, batch, &mut rng)
                .map_err(|e| Error::TrainingAborted(format!("step {}: {e}", step + 1)))?;
            let loss_value = loss.value().item();
            if !loss_value.is_finite() {
                return Err(Error::TrainingAborted(format!(
                    "non-finite loss at step {}",
                    step + 1
                )));
            }
            let grads = tape.backward(loss)?;
            let mut grad_blocks: Vec<Vec<f64>> = vars
                .iter()
                .enumerate()
                .map(|(i, v)| match grads.wrt(*v) {
                    Some(t) => t.into_data(),
                    None => vec![0.0; params.tensor(i).len()],
                })
                .collect();
            clip_global_norm(&mut grad_blocks, cfg.clip_norm);
            adam_step(params, &grad_blocks, &mut state, cfg.lr, cfg.betas, cfg.eps)?;
            step += 1;
            last = loss_value;
            curve.push((step, loss_value));
        }
    }
    Ok(TrainOutcome {
        loss_curve: curve,
        final_loss: last,
    })
}
