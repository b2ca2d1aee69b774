//! Finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Compares analytic gradients of a scalar-valued function against central
/// finite differences, returning the maximum relative error over all
/// parameter elements: |analytic - cd| / (|cd| + 1e-12).
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "grad_check eps {eps} outside [1e-7, 1e-3]"
        )));
    }

    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = params
            .iter()
            .map(|p| tape.input(p.clone().requires_grad(true)))
            .collect();
        let out = f(&tape, &vars)?;
        if out.value().len() != 1 {
            return Err(Error::InvalidArgument(
                "grad_check function must return a scalar".into(),
            ));
        }
        let grads = tape.backward(out)?;
        vars.iter()
            .zip(params)
            .map(|(v, p)| {
                grads
                    .wrt(*v)
                    .unwrap_or_else(|| Tensor::zeros(p.shape().to_vec()))
            })
            .collect()
    };

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = perturbed.iter().map(|p| tape.constant(p.clone())).collect();
        let out = f(&tape, &vars)?;
        if out.value().len() != 1 {
            return Err(Error::InvalidArgument(
                "grad_check function must return a scalar".into(),
            ));
        }
        Ok(out.value().item())
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut max_rel = 0.0f64;
    for (pi, grad) in analytic.iter().enumerate() {
        for ei in 0..params[pi].len() {
            let base = params[pi].data()[ei];

            let bump = |delta: f64, work: &mut Vec<Tensor>| -> Result<f64> {
                let mut data = params[pi].data().to_vec();
                data[ei] = base + delta;
                work[pi] = Tensor::new(params[pi].shape().to_vec(), data)?;
                eval(work)
            };
            let plus = bump(eps, &mut work)?;
            let minus = bump(-eps, &mut work)?;
            work[pi] = params[pi].clone();

            let cd = (plus - minus) / (2.0 * eps);
            let rel = (grad.data()[ei] - cd).abs() / (cd.abs() + 1e-12);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
