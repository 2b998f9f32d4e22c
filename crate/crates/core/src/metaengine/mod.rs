//! Structured meta-learning over task-specific parameter sets, and the
//! shared-model, transfer and independent baselines it is compared against.
//!
//! Every task `i` keeps its own parameters `theta_i`. One outer iteration
//! takes one step for each task in the meta-train split:
//!
//! ```text
//! theta_hat_i = theta_i - alpha * grad L_i(theta_i)
//! eta_ij      = grad L_i(theta_i) . grad L_j(theta_i)      for j in a batch of the meta-test split
//! G_i         = sum_j w_ij * L_j(theta_hat_i)              w = normalize(eta), held constant
//! theta_i    -= delta * d/dtheta_i [ L_i(theta_i) + beta * G_i ]
//! ```
//!
//! and then swaps the meta-train and meta-test splits.

mod eval;
mod step;
mod train;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use eval::{accuracies, evaluate, taylor_residual, taylor_residual_with};
pub use step::{
    independent_step, inner_update, meta_gradient, meta_step, meta_step_with_weights,
    meta_test_loss, meta_test_loss_graph, normalize_weights, sample_meta_test_batch,
    similarities, task_similarity, MetaGradient, StepOutcome,
};
pub use train::{
    run_independent, run_independent_with, run_invenio, run_invenio_with, run_shared_maml,
    run_shared_maml_with, run_transfer, run_transfer_with, shared_meta_gradient, Observer,
    TransferConfig,
};

use crate::autodiff::GradOrder;
use crate::error::{Error, Result};
use crate::models::ParamSet;
use crate::seed;

/// Losses above this magnitude abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// How raw similarities become meta-test weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Negatives set to zero, then scaled to sum to one; uniform if nothing is positive.
    #[default]
    ClampL1,
    Softmax,
    /// Divided by the sum of absolute values, keeping signs.
    SignedL1,
}

/// Hyperparameters of the outer training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaConfig {
    /// Inner step size.
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    /// Weight of the meta-test loss in the outer objective.
    #[serde(default = "defaults::beta")]
    pub beta: f64,
    /// Reserved; stored and echoed but not used by any update.
    #[serde(default)]
    pub gamma: f64,
    /// Outer step size.
    #[serde(default = "defaults::delta")]
    pub delta: f64,
    #[serde(default = "defaults::n_iter")]
    pub n_iter: usize,
    /// Meta-test tasks sampled per meta-train task; capped at the meta-test split size.
    #[serde(default = "defaults::meta_test_batch")]
    pub meta_test_batch: usize,
    /// Fraction of tasks in the initial meta-train split.
    #[serde(default = "defaults::split_fraction")]
    pub split_fraction: f64,
    #[serde(default)]
    pub weight_mode: WeightMode,
    #[serde(default)]
    pub grad_order: GradOrder,
    /// Evaluate held-out accuracy every this many iterations (0: only at the end).
    #[serde(default = "defaults::eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn alpha() -> f64 {
        1e-4
    }
    pub fn beta() -> f64 {
        1.0
    }
    pub fn delta() -> f64 {
        1e-3
    }
    pub fn n_iter() -> usize {
        200
    }
    pub fn meta_test_batch() -> usize {
        12
    }
    pub fn split_fraction() -> f64 {
        0.5
    }
    pub fn eval_every() -> usize {
        50
    }
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            alpha: defaults::alpha(),
            beta: defaults::beta(),
            gamma: 0.0,
            delta: defaults::delta(),
            n_iter: defaults::n_iter(),
            meta_test_batch: defaults::meta_test_batch(),
            split_fraction: defaults::split_fraction(),
            weight_mode: WeightMode::default(),
            grad_order: GradOrder::default(),
            eval_every: defaults::eval_every(),
            seed: 0,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Precondition(msg));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be non-negative, got {}", self.beta));
        }
        if !self.gamma.is_finite() {
            return bad(format!("gamma must be finite, got {}", self.gamma));
        }
        if self.meta_test_batch == 0 {
            return bad("meta_test_batch must be at least 1".into());
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return bad(format!("split_fraction must be in (0, 1), got {}", self.split_fraction));
        }
        Ok(())
    }
}

/// Meta-train and meta-test task indices for one iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Random partition with `round(fraction * k)` meta-train tasks, at least
    /// one task on each side when `k >= 2`. Both halves are sorted.
    pub fn initial(k: usize, fraction: f64, seed_value: u64) -> Self {
        let mut idx: Vec<usize> = (0..k).collect();
        if k < 2 {
            return Self {
                train: idx,
                test: Vec::new(),
            };
        }
        idx.shuffle(&mut seed::rng(seed_value, "task-split", 0));
        let n_train = ((fraction * k as f64).round() as usize).clamp(1, k - 1);
        let mut train = idx[..n_train].to_vec();
        let mut test = idx[n_train..].to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Self { train, test }
    }

    pub fn swapped(&self) -> Self {
        if self.test.is_empty() {
            return self.clone();
        }
        Self {
            train: self.test.clone(),
            test: self.train.clone(),
        }
    }
}

/// One similarity evaluated during a meta step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaSample {
    pub task: usize,
    pub eta: f64,
    pub weight: f64,
}

/// Per-task outcome of one outer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iter: usize,
    pub task: usize,
    /// Own loss before the step.
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta_test_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub etas: Vec<EtaSample>,
}

/// Held-out accuracy of every task after an iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iter: usize,
    pub accuracies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum HistoryRecord {
    Step(StepRecord),
    Eval(EvalRecord),
}

/// Parameters and bookkeeping of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// One entry per task. Shared-model runs hold K copies of the one vector.
    pub paramsets: Vec<ParamSet>,
    /// Split used by the next iteration.
    pub split: Split,
    /// Completed outer iterations.
    pub iter: usize,
    pub history: Vec<HistoryRecord>,
    /// Split used by each completed iteration.
    pub schedule: Vec<Split>,
}

impl TrainState {
    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.history.iter().filter_map(|r| match r {
            HistoryRecord::Step(s) => Some(s),
            HistoryRecord::Eval(_) => None,
        })
    }

    pub fn evals(&self) -> impl Iterator<Item = &EvalRecord> {
        self.history.iter().filter_map(|r| match r {
            HistoryRecord::Eval(e) => Some(e),
            HistoryRecord::Step(_) => None,
        })
    }

    /// Accuracies from the most recent evaluation.
    pub fn final_accuracies(&self) -> Option<&[f64]> {
        self.evals().last().map(|e| e.accuracies.as_slice())
    }
}
