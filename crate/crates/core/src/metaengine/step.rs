use crate::autodiff::{inner_step, Graph, GradOrder, GradVector, Tensor, Var};
use crate::error::{Error, Result};
use crate::models::{ArchSpec, LossEval, ParamSet};
use crate::seed;
use crate::taskgen::{Dataset, TaskDatabase};

use super::{EtaSample, MetaConfig, StepRecord, TrainState, WeightMode, DIVERGENCE_LIMIT};

/// One inner gradient step on the full dataset: `theta - alpha * grad L(theta)`.
pub fn inner_update(arch: &ArchSpec, theta: &ParamSet, data: &Dataset, alpha: f64) -> Result<ParamSet> {
    if !(alpha > 0.0) {
        return Err(Error::Precondition(format!("alpha must be positive, got {alpha}")));
    }
    let ctx = |e: Error| e.context(format!("inner update of task {}", theta.task_id));
    let (_, grad) = arch.loss_and_grad(theta, data).map_err(ctx)?;
    let grad = GradVector::checked(grad.into_vec()).map_err(ctx)?;
    Ok(ParamSet {
        flat: axpy(&theta.flat, -alpha, grad.as_slice()),
        ..theta.clone()
    })
}

/// Gradient alignment of two tasks, both gradients taken at `theta_i`.
pub fn task_similarity(arch: &ArchSpec, theta_i: &ParamSet, data_i: &Dataset, data_j: &Dataset) -> Result<f64> {
    let (_, gi) = arch.loss_and_grad(theta_i, data_i)?;
    let (_, gj) = arch.loss_and_grad(theta_i, data_j)?;
    Ok(gi.dot(&gj))
}

/// Alignment of `own_grad` with the gradient of every dataset in `others`,
/// each taken at `theta`.
pub fn similarities(arch: &ArchSpec, theta: &ParamSet, own_grad: &GradVector, others: &[&Dataset]) -> Result<Vec<f64>> {
    others
        .iter()
        .map(|d| {
            let (_, g) = arch.loss_and_grad(theta, d)?;
            Ok(own_grad.dot(&g))
        })
        .collect()
}

pub fn normalize_weights(etas: &[f64], mode: WeightMode) -> Vec<f64> {
    let n = etas.len();
    let uniform = || vec![1.0 / n as f64; n];
    match mode {
        WeightMode::ClampL1 => {
            let clamped: Vec<f64> = etas.iter().map(|&e| e.max(0.0)).collect();
            let total: f64 = clamped.iter().sum();
            if total > 0.0 {
                clamped.iter().map(|c| c / total).collect()
            } else {
                uniform()
            }
        }
        WeightMode::Softmax => {
            let m = etas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = etas.iter().map(|&x| (x - m).exp()).collect();
            let total: f64 = e.iter().sum();
            e.iter().map(|v| v / total).collect()
        }
        WeightMode::SignedL1 => {
            let total: f64 = etas.iter().map(|e| e.abs()).sum();
            if total > 0.0 {
                etas.iter().map(|e| e / total).collect()
            } else {
                uniform()
            }
        }
    }
}

/// Records `sum_j weights[j] * L_j(theta_hat)` on `g`. Weights enter as
/// constants, so no derivative flows through them.
pub fn meta_test_loss_graph(
    g: &mut Graph,
    arch: &ArchSpec,
    theta_hat: Var,
    tests: &[&Dataset],
    weights: &[f64],
) -> Result<Var> {
    if tests.is_empty() {
        return Err(Error::Precondition("meta-test set is empty".into()));
    }
    if tests.len() != weights.len() {
        return Err(Error::Precondition(format!(
            "{} meta-test tasks but {} weights",
            tests.len(),
            weights.len()
        )));
    }
    let mut total: Option<Var> = None;
    for (d, &w) in tests.iter().zip(weights) {
        let l = arch.loss_graph(g, theta_hat, d)?;
        let term = g.scale(l, w);
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    Ok(total.expect("non-empty"))
}

pub fn meta_test_loss(arch: &ArchSpec, theta_hat: &ParamSet, tests: &[&Dataset], weights: &[f64]) -> Result<LossEval> {
    theta_hat.check(arch)?;
    let mut g = Graph::new(false);
    let theta = g.param(Tensor::vector(theta_hat.flat.clone()));
    let out = meta_test_loss_graph(&mut g, arch, theta, tests, weights)?;
    g.set_output(out);
    let value = g.value(out).item();
    Ok(LossEval { value, graph: g })
}

/// Outer-objective gradient and the losses seen along the way.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaGradient {
    pub grad: GradVector,
    /// Inner (own) loss at `theta`.
    pub loss: f64,
    /// Weighted meta-test loss at the updated parameters, when it was formed.
    pub meta_test_loss: Option<f64>,
}

fn mean_loss_graph(g: &mut Graph, arch: &ArchSpec, theta: Var, train: &[&Dataset]) -> Result<Var> {
    match train {
        [] => Err(Error::Precondition("meta-train set is empty".into())),
        [one] => arch.loss_graph(g, theta, one),
        many => {
            let mut total = arch.loss_graph(g, theta, many[0])?;
            for d in &many[1..] {
                let l = arch.loss_graph(g, theta, d)?;
                total = g.add(total, l)?;
            }
            Ok(g.scale(total, 1.0 / many.len() as f64))
        }
    }
}

fn mean_loss_and_grad(arch: &ArchSpec, theta: &[f64], train: &[&Dataset]) -> Result<(f64, GradVector)> {
    let mut g = Graph::new(false);
    let t = g.param(Tensor::vector(theta.to_vec()));
    let out = mean_loss_graph(&mut g, arch, t, train)?;
    g.set_output(out);
    let value = g.value(out).item();
    let grad = g.backward(&Tensor::scalar(1.0))?;
    Ok((value, grad))
}

/// Gradient of `L(theta) + beta * sum_j w_j L_j(theta - alpha * grad L(theta))`
/// where `L` is the mean loss over `train`.
#[allow(clippy::too_many_arguments)]
pub fn meta_gradient(
    arch: &ArchSpec,
    theta: &[f64],
    train: &[&Dataset],
    tests: &[&Dataset],
    weights: &[f64],
    alpha: f64,
    beta: f64,
    order: GradOrder,
) -> Result<MetaGradient> {
    let (loss, grad) = mean_loss_and_grad(arch, theta, train)?;
    add_meta_test_term(arch, theta, train, tests, weights, alpha, beta, order, loss, grad)
}

#[allow(clippy::too_many_arguments)]
fn add_meta_test_term(
    arch: &ArchSpec,
    theta: &[f64],
    train: &[&Dataset],
    tests: &[&Dataset],
    weights: &[f64],
    alpha: f64,
    beta: f64,
    order: GradOrder,
    loss: f64,
    own_grad: GradVector,
) -> Result<MetaGradient> {
    if beta == 0.0 || tests.is_empty() {
        return Ok(MetaGradient {
            grad: GradVector::checked(own_grad.into_vec())?,
            loss,
            meta_test_loss: None,
        });
    }
    let mut g = Graph::new(order == GradOrder::Exact);
    let step = inner_step(&mut g, theta, alpha, order, |g, t| mean_loss_graph(g, arch, t, train))?;
    let gv = meta_test_loss_graph(&mut g, arch, step.theta_hat, tests, weights)?;
    let wrt = match order {
        GradOrder::Exact => step.theta,
        GradOrder::FirstOrder => step.theta_hat,
    };
    let d = g.grad(gv, &[wrt])?[0];
    let through = g.value(d).data();
    let total = own_grad
        .as_slice()
        .iter()
        .zip(through)
        .map(|(a, b)| a + beta * b)
        .collect();
    Ok(MetaGradient {
        grad: GradVector::checked(total)?,
        loss,
        meta_test_loss: Some(g.value(gv).item()),
    })
}

/// Uniform sample without replacement of `min(b, |test|)` meta-test tasks,
/// drawn fresh for each (iteration, meta-train task) pair. Sorted.
pub fn sample_meta_test_batch(test: &[usize], b: usize, seed_value: u64, iter: usize, task: usize, k: usize) -> Vec<usize> {
    let b = b.min(test.len());
    let stream = (iter as u64).wrapping_mul(k as u64).wrapping_add(task as u64);
    let mut rng = seed::rng(seed_value, "meta-test-batch", stream);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, test.len(), b)
        .into_iter()
        .map(|p| test[p])
        .collect();
    picked.sort_unstable();
    picked
}

/// New parameters for one task plus the history record of the step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub params: ParamSet,
    pub record: StepRecord,
}

pub(crate) fn guard(loss: f64, iter: usize, task: usize) -> Result<()> {
    if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
        return Err(Error::Divergence { iter, task, loss });
    }
    Ok(())
}

pub(crate) fn descend(theta: &ParamSet, delta: f64, grad: &GradVector, iter: usize) -> Result<ParamSet> {
    let flat = axpy(&theta.flat, -delta, grad.as_slice());
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite parameters for task {} after iteration {iter}",
            theta.task_id
        )));
    }
    Ok(ParamSet {
        flat,
        ..theta.clone()
    })
}

fn axpy(x: &[f64], a: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(xi, yi)| xi + a * yi).collect()
}

fn at(iter: usize, task: usize) -> impl Fn(Error) -> Error {
    move |e| e.context(format!("iteration {iter}, task {task}"))
}

/// One structured outer step for meta-train task `i`: sample a meta-test
/// batch, measure gradient alignment, normalize, and descend on the
/// combined own and weighted meta-test objective.
pub fn meta_step(arch: &ArchSpec, db: &TaskDatabase, state: &TrainState, i: usize, cfg: &MetaConfig) -> Result<StepOutcome> {
    let iter = state.iter;
    let theta = &state.paramsets[i];
    let data_i = &db.datasets[i];
    let (loss, own_grad) = mean_loss_and_grad(arch, &theta.flat, &[data_i]).map_err(at(iter, i))?;
    guard(loss, iter, i)?;
    let batch = sample_meta_test_batch(&state.split.test, cfg.meta_test_batch, cfg.seed, iter, i, db.k());
    let tests: Vec<&Dataset> = batch.iter().map(|&j| &db.datasets[j]).collect();
    let etas = similarities(arch, theta, &own_grad, &tests).map_err(at(iter, i))?;
    let weights = normalize_weights(&etas, cfg.weight_mode);
    let mg = add_meta_test_term(
        arch,
        &theta.flat,
        &[data_i],
        &tests,
        &weights,
        cfg.alpha,
        cfg.beta,
        cfg.grad_order,
        loss,
        own_grad,
    )
    .map_err(at(iter, i))?;
    if let Some(g) = mg.meta_test_loss {
        guard(g, iter, i)?;
    }
    let params = descend(theta, cfg.delta, &mg.grad, iter)?;
    let etas = batch
        .iter()
        .zip(&etas)
        .zip(&weights)
        .map(|((&task, &eta), &weight)| EtaSample { task, eta, weight })
        .collect();
    Ok(StepOutcome {
        params,
        record: StepRecord {
            iter,
            task: i,
            loss,
            meta_test_loss: mg.meta_test_loss,
            etas,
        },
    })
}

/// Outer step for one task with caller-chosen meta-test tasks and weights.
pub fn meta_step_with_weights(
    arch: &ArchSpec,
    theta: &ParamSet,
    data: &Dataset,
    tests: &[&Dataset],
    weights: &[f64],
    cfg: &MetaConfig,
) -> Result<(ParamSet, MetaGradient)> {
    let mg = meta_gradient(
        arch,
        &theta.flat,
        &[data],
        tests,
        weights,
        cfg.alpha,
        cfg.beta,
        cfg.grad_order,
    )?;
    Ok((descend(theta, cfg.delta, &mg.grad, 0)?, mg))
}

/// Plain full-batch gradient step on the task's own loss with step `delta`.
pub fn independent_step(arch: &ArchSpec, theta: &ParamSet, data: &Dataset, delta: f64, iter: usize) -> Result<StepOutcome> {
    let task = theta.task_id;
    let (loss, grad) = mean_loss_and_grad(arch, &theta.flat, &[data]).map_err(at(iter, task))?;
    guard(loss, iter, task)?;
    let grad = GradVector::checked(grad.into_vec()).map_err(at(iter, task))?;
    Ok(StepOutcome {
        params: descend(theta, delta, &grad, iter)?,
        record: StepRecord {
            iter,
            task,
            loss,
            meta_test_loss: None,
            etas: Vec::new(),
        },
    })
}
