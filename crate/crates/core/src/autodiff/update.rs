use serde::{Deserialize, Serialize};

use super::{Graph, GradVector, Tensor, Var};
use crate::error::{Error, Result};

/// How the derivative through an inner gradient step is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradOrder {
    /// Full derivative, including the `-alpha * Hessian` term of the inner step.
    #[default]
    Exact,
    /// Outer gradient evaluated at the updated parameters, Hessian term dropped.
    FirstOrder,
}

/// Outcome of building `theta_hat = theta - lr * grad inner(theta)` on a graph.
#[derive(Debug, Clone, Copy)]
pub struct InnerStep {
    /// The differentiated parameter leaf.
    pub theta: Var,
    /// Inner loss at `theta`.
    pub inner_loss: Var,
    /// Updated parameters. In first-order mode this is a fresh leaf.
    pub theta_hat: Var,
}

/// Records one inner gradient step on `graph`.
///
/// With [`GradOrder::Exact`] the step stays connected to `theta`, so a later
/// backward pass sees the second-order term. With [`GradOrder::FirstOrder`]
/// the updated parameters are a new leaf holding the same values.
pub fn inner_step<I>(
    graph: &mut Graph,
    theta: &[f64],
    lr: f64,
    order: GradOrder,
    mut inner: I,
) -> Result<InnerStep>
where
    I: FnMut(&mut Graph, Var) -> Result<Var>,
{
    if order == GradOrder::Exact && !graph.higher_order() {
        return Err(Error::Capability(
            "exact gradient through an update needs a higher-order graph".into(),
        ));
    }
    let theta_var = graph.param(Tensor::vector(theta.to_vec()));
    let inner_loss = inner(graph, theta_var)?;
    let g = graph.grad(inner_loss, &[theta_var])?[0];
    let theta_hat = match order {
        GradOrder::Exact => {
            let step = graph.scale(g, lr);
            graph.sub(theta_var, step)?
        }
        GradOrder::FirstOrder => {
            let updated: Vec<f64> = theta
                .iter()
                .zip(graph.value(g).data())
                .map(|(t, d)| t - lr * d)
                .collect();
            graph.param(Tensor::vector(updated))
        }
    };
    Ok(InnerStep {
        theta: theta_var,
        inner_loss,
        theta_hat,
    })
}

/// Derivative with respect to `theta` of `outer(theta - lr * grad inner(theta))`.
///
/// In exact mode this is `(I - lr * H_inner(theta)) * grad outer(theta_hat)`;
/// in first-order mode it is `grad outer(theta_hat)`.
pub fn grad_through_update<I, O>(
    graph: &mut Graph,
    theta: &[f64],
    lr: f64,
    order: GradOrder,
    inner: I,
    mut outer: O,
) -> Result<GradVector>
where
    I: FnMut(&mut Graph, Var) -> Result<Var>,
    O: FnMut(&mut Graph, Var) -> Result<Var>,
{
    let step = inner_step(graph, theta, lr, order, inner)?;
    let g_out = outer(graph, step.theta_hat)?;
    let wrt = match order {
        GradOrder::Exact => step.theta,
        GradOrder::FirstOrder => step.theta_hat,
    };
    let g = graph.grad(g_out, &[wrt])?[0];
    GradVector::checked(graph.value(g).data().to_vec())
}
