use rayon::prelude::*;

use crate::autodiff::dot;
use crate::error::{Error, Result};
use crate::models::{ArchSpec, LossKind, ParamSet};
use crate::taskgen::{Dataset, TaskDatabase};

/// Fraction of correctly predicted samples. Binary predictions are positive
/// when the sigmoid exceeds 0.5; multiclass predictions take the first argmax.
pub fn evaluate(arch: &ArchSpec, params: &ParamSet, heldout: &Dataset) -> Result<f64> {
    if heldout.is_empty() {
        return Err(Error::Precondition(format!("held-out set '{}' is empty", heldout.name)));
    }
    arch.check_dataset(heldout)?;
    let out = arch.predict(params, &heldout.inputs)?;
    let correct = match arch.loss {
        LossKind::Binary => out
            .data()
            .iter()
            .zip(&heldout.labels)
            .filter(|(&z, &y)| usize::from(z > 0.0) == y)
            .count(),
        LossKind::Multiclass => (0..heldout.len())
            .filter(|&r| {
                let row = out.row(r);
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best == heldout.labels[r]
            })
            .count(),
    };
    Ok(correct as f64 / heldout.len() as f64)
}

/// Held-out accuracy of every task with its own parameters.
pub fn accuracies(arch: &ArchSpec, params: &[ParamSet], db: &TaskDatabase) -> Result<Vec<f64>> {
    if params.len() != db.k() {
        return Err(Error::Precondition(format!(
            "{} parameter sets for {} tasks",
            params.len(),
            db.k()
        )));
    }
    params
        .par_iter()
        .enumerate()
        .map(|(i, p)| evaluate(arch, p, db.eval_set(i)))
        .collect()
}

/// `|G(theta - alpha u) - G(theta) + alpha u . grad G(theta)|` with
/// `u = grad_l(theta)`; `g` returns the value and gradient of `G`.
pub fn taylor_residual_with<L, G>(theta: &[f64], alpha: f64, grad_l: L, g: G) -> Result<f64>
where
    L: Fn(&[f64]) -> Result<Vec<f64>>,
    G: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(alpha >= 0.0) {
        return Err(Error::Precondition(format!("alpha must be non-negative, got {alpha}")));
    }
    let u = grad_l(theta)?;
    let (g0, gg) = g(theta)?;
    let moved: Vec<f64> = theta.iter().zip(&u).map(|(t, d)| t - alpha * d).collect();
    let (g1, _) = g(&moved)?;
    Ok((g1 - g0 + alpha * dot(&u, &gg)).abs())
}

/// Error of the first-order expansion of the loss on `test` after one step
/// of size `alpha` on the loss of `train`.
pub fn taylor_residual(arch: &ArchSpec, theta: &ParamSet, train: &Dataset, test: &Dataset, alpha: f64) -> Result<f64> {
    let at = |flat: &[f64]| ParamSet {
        flat: flat.to_vec(),
        ..theta.clone()
    };
    taylor_residual_with(
        &theta.flat,
        alpha,
        |t| Ok(arch.loss_and_grad(&at(t), train)?.1.into_vec()),
        |t| {
            let (v, g) = arch.loss_and_grad(&at(t), test)?;
            Ok((v, g.into_vec()))
        },
    )
}
