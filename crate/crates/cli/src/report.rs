use serde::{Deserialize, Serialize};

use crate::config::Method;

/// Quantile `q` of `values` with linear interpolation between order
/// statistics at position `q * (n - 1)`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty list");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracy {
    pub task: String,
    pub accuracy: f64,
}

/// Summary of one training run. Contains nothing that varies between
/// identical runs; wall-clock time lives in a separate timing file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub k: usize,
    pub iterations: usize,
    pub tasks: Vec<TaskAccuracy>,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    /// Resolved config, without output directory or thread count.
    pub config: serde_json::Value,
    /// SHA-256 over the config echo and the database bytes.
    pub input_hash: String,
}

impl RunReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.tasks.iter().map(|t| t.accuracy).collect()
    }

    /// Recomputes the summary quantiles from the per-task list.
    pub fn consistent(&self) -> bool {
        let acc = self.accuracies();
        !acc.is_empty()
            && quantile(&acc, 0.5) == self.median
            && quantile(&acc, 0.25) == self.q25
            && quantile(&acc, 0.75) == self.q75
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub seconds: f64,
    pub threads: usize,
}
