//! Tensor storage and a reverse-mode differentiation engine that can
//! differentiate through its own backward pass.
//!
//! The op set is deliberately closed: linear algebra (`matmul`, `transpose`,
//! broadcasts and reductions), elementwise `add`/`sub`/`mul`, `relu`,
//! `sigmoid`, row `softmax`, the two classification losses, and linear index
//! maps (`gather`/`scatter_add`, `slice`/`pad`) from which convolution and
//! max-pooling are assembled. Every backward rule is written in terms of
//! these same ops, so a gradient computed on a higher-order graph can itself
//! be differentiated.

mod check;
mod graph;
mod tensor;
mod update;

pub use check::finite_diff_grad;
pub use graph::{Graph, Precision, Var, NO_INDEX};
pub use tensor::Tensor;
pub use update::{grad_through_update, inner_step, GradOrder, InnerStep};

use crate::error::{Error, Result};

/// Flat gradient aligned to a parameter vector's flattening order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector(Vec<f64>);

impl GradVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    /// Like [`GradVector::new`], rejecting non-finite entries.
    pub fn checked(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient entry {} at index {i}",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, other: &GradVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Sequential dot product; summation order is fixed so results are reproducible.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Registers `inputs` as constants, runs `body`, and records its result as the
/// graph output so that [`Graph::backward`] can be called.
pub fn forward<F>(graph: &mut Graph, inputs: &[Tensor], body: F) -> Result<Var>
where
    F: FnOnce(&mut Graph, &[Var]) -> Result<Var>,
{
    let vars: Vec<Var> = inputs.iter().map(|t| graph.constant(t.clone())).collect();
    let out = body(graph, &vars)?;
    if !graph.value(out).all_finite() {
        return Err(Error::Numerical(format!(
            "non-finite value produced by node #{} ({})",
            out.index(),
            graph.op_name(out)
        )));
    }
    graph.set_output(out);
    Ok(out)
}

/// Relative error `|a - b| / max(|a|, |b|, floor)` used by gradient checks.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}

#[cfg(test)]
mod tests;
