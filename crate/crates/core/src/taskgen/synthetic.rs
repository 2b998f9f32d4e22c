use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetKind, TaskDatabase};
use crate::autodiff::{dot, Tensor};
use crate::error::{Error, Result};
use crate::seed;

/// Angle between a task's boundary normal and its cluster's base normal.
const TASK_ANGLE_DEGREES: f64 = 10.0;
/// Rejection-sampling budget for a negative drawn from another task's positive region.
const NEGATIVE_TRIES: usize = 10_000;

/// Planted-cluster binary task collection.
///
/// Every task shares the input distribution `x ~ N(0, I_dim)` and labels a
/// sample positive when `w_t . x > 0`. Tasks in one cluster have boundary
/// normals within 10 degrees of the cluster's base normal; base normals are
/// orthonormal, or antipodal in pairs when `conflicting` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub k: usize,
    pub n_clusters: usize,
    pub dim: usize,
    /// Samples per task, split evenly between positives and negatives.
    pub n_per_task: usize,
    /// Label flip probability.
    pub noise: f64,
    pub seed: u64,
    /// Pairs clusters `(0, 1), (2, 3), ...` with opposite base normals.
    #[serde(default)]
    pub conflicting: bool,
    /// Ceiling on samples per task: 100 positives plus 100 negatives.
    #[serde(default = "default_max_samples")]
    pub max_samples: usize,
}

fn default_max_samples() -> usize {
    200
}

impl SyntheticConfig {
    pub fn new(k: usize, n_clusters: usize, dim: usize, n_per_task: usize, noise: f64, seed: u64) -> Self {
        Self {
            k,
            n_clusters,
            dim,
            n_per_task,
            noise,
            seed,
            conflicting: false,
            max_samples: default_max_samples(),
        }
    }

    pub fn conflicting(mut self, on: bool) -> Self {
        self.conflicting = on;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_clusters < 1 || self.k < self.n_clusters {
            return Err(Error::Precondition(format!(
                "need K >= n_clusters >= 1, got K={} n_clusters={}",
                self.k, self.n_clusters
            )));
        }
        if self.dim < 2 {
            return Err(Error::Precondition(format!("dim must be >= 2, got {}", self.dim)));
        }
        if self.n_per_task < 2 {
            return Err(Error::Precondition("need at least 2 samples per task".into()));
        }
        if self.n_per_task > self.max_samples {
            return Err(Error::Precondition(format!(
                "n_per_task {} exceeds the configured ceiling {}",
                self.n_per_task, self.max_samples
            )));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return Err(Error::Precondition(format!("noise must be in [0, 0.5), got {}", self.noise)));
        }
        Ok(())
    }

    /// Cluster of each task: contiguous, near-equal blocks.
    pub fn assignments(&self) -> Vec<usize> {
        (0..self.k).map(|t| t * self.n_clusters / self.k).collect()
    }
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// Removes the components of `v` along each (unit) vector in `basis`.
fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let p = dot(v, b);
        v.iter_mut().zip(b).for_each(|(x, bi)| *x -= p * bi);
    }
}

fn gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Unit boundary normals, one per task.
pub fn synthetic_boundaries(cfg: &SyntheticConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let mut rng = seed::rng(cfg.seed, "synthetic-boundaries", 0);
    let n_axes = if cfg.conflicting {
        cfg.n_clusters.div_ceil(2)
    } else {
        cfg.n_clusters
    };
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(n_axes);
    for _ in 0..n_axes {
        let mut v = gaussian(&mut rng, cfg.dim);
        if axes.len() < cfg.dim {
            orthogonalize(&mut v, &axes);
        }
        normalize(&mut v);
        axes.push(v);
    }
    let bases: Vec<Vec<f64>> = (0..cfg.n_clusters)
        .map(|c| {
            if cfg.conflicting {
                let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
                axes[c / 2].iter().map(|x| sign * x).collect()
            } else {
                axes[c].clone()
            }
        })
        .collect();
    // perturbations avoid the span of the base normals when there is room
    let room = axes.len() < cfg.dim;
    let spread = TASK_ANGLE_DEGREES.to_radians().tan();
    let mut out = Vec::with_capacity(cfg.k);
    for &c in &cfg.assignments() {
        let mut z = gaussian(&mut rng, cfg.dim);
        if room {
            orthogonalize(&mut z, &axes);
        } else {
            orthogonalize(&mut z, std::slice::from_ref(&bases[c]));
        }
        normalize(&mut z);
        let mut w: Vec<f64> = bases[c].iter().zip(&z).map(|(b, p)| b + spread * p).collect();
        normalize(&mut w);
        out.push(w);
    }
    Ok(out)
}

/// Generates the planted-cluster database. Negatives for task `t` are drawn
/// from another task's positive region that `t` labels negative.
pub fn gen_synthetic_tasks(cfg: &SyntheticConfig) -> Result<TaskDatabase> {
    let bounds = synthetic_boundaries(cfg)?;
    let clusters = cfg.assignments();
    let mut datasets = Vec::with_capacity(cfg.k);
    for t in 0..cfg.k {
        let mut rng = seed::rng(cfg.seed, "synthetic-samples", t as u64);
        let n_pos = cfg.n_per_task.div_ceil(2);
        let n_neg = cfg.n_per_task - n_pos;
        let mut data = Vec::with_capacity(cfg.n_per_task * cfg.dim);
        let mut labels = Vec::with_capacity(cfg.n_per_task);
        for _ in 0..n_pos {
            let x = loop {
                let x = gaussian(&mut rng, cfg.dim);
                if dot(&x, &bounds[t]) > 0.0 {
                    break x;
                }
            };
            data.extend(x);
            labels.push(1);
        }
        for _ in 0..n_neg {
            let other = if cfg.k > 1 {
                let u = rng.random_range(0..cfg.k - 1);
                Some(if u >= t { u + 1 } else { u })
            } else {
                None
            };
            let mut found = None;
            if let Some(u) = other {
                for _ in 0..NEGATIVE_TRIES {
                    let x = gaussian(&mut rng, cfg.dim);
                    if dot(&x, &bounds[u]) > 0.0 && dot(&x, &bounds[t]) <= 0.0 {
                        found = Some(x);
                        break;
                    }
                }
            }
            let x = match found {
                Some(x) => x,
                None => loop {
                    let x = gaussian(&mut rng, cfg.dim);
                    if dot(&x, &bounds[t]) <= 0.0 {
                        break x;
                    }
                },
            };
            data.extend(x);
            labels.push(0);
        }
        for y in labels.iter_mut() {
            if rng.random::<f64>() < cfg.noise {
                *y = 1 - *y;
            }
        }
        let inputs = Tensor::new(vec![cfg.n_per_task, cfg.dim], data)?;
        datasets.push(Dataset::new(
            format!("task{t:03}_c{}", clusters[t]),
            DatasetKind::BinaryTask,
            inputs,
            labels,
        )?);
    }
    Ok(TaskDatabase {
        datasets,
        heldout: Vec::new(),
        ground_truth_clusters: Some(clusters),
        group_names: (0..cfg.n_clusters).map(|c| format!("cluster{c}")).collect(),
    })
}
