//! Adam optimizer over named parameter blocks.

use crate::error::{Error, Result};
use crate::model::ParamRegistry;
use crate::numerics::Tensor;

/// First/second moment buffers plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ParamRegistry) -> Self {
        let m = (0..params.len())
            .map(|i| vec![0.0; params.tensor(i).len()])
            .collect();
        let v = (0..params.len())
            .map(|i| vec![0.0; params.tensor(i).len()])
            .collect();
        Self { m, v, t: 0 }
    }

    pub fn step(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update across every block. Gradients must be
/// finite; a non-finite gradient aborts with the offending block named.
pub fn adam_step(
    params: &mut ParamRegistry,
    grads: &[Vec<f64>],
    state: &mut AdamState,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "adam_step: {} gradient blocks for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if !g.iter().all(|v| v.is_finite()) {
            return Err(Error::TrainingAborted(format!(
                "non-finite gradient in block '{}' at step {}",
                params.name(i),
                state.t + 1
            )));
        }
    }
    state.t += 1;
    let (b1, b2) = betas;
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..params.len() {
        let mut data = params.tensor(i).data().to_vec();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (e, &g) in grads[i].iter().enumerate() {
            m[e] = b1 * m[e] + (1.0 - b1) * g;
            v[e] = b2 * v[e] + (1.0 - b2) * g * g;
            let m_hat = m[e] / bc1;
            let v_hat = v[e] / bc2;
            data[e] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        let shape = params.tensor(i).shape().to_vec();
        let updated = Tensor::new(shape, data)
            .map_err(|_| Error::TrainingAborted(format!(
                "non-finite parameter values in block '{}' after step {}",
                params.name(i),
                state.t
            )))?;
        params.set_tensor(i, updated);
    }
    Ok(())
}

/// Scales all gradients jointly so their global L2 norm is at most
/// `max_norm`.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) {
    let total: f64 = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|&v| v * v)
        .sum::<f64>()
        .sqrt();
    if total > max_norm && total > 0.0 {
        let scale = max_norm / total;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
}
