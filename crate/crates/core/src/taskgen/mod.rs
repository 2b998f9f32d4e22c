//! Task and domain databases: the synthetic planted-cluster generator, the
//! image-transformation domain generator, stratified held-out splits and the
//! on-disk container.

mod container;
mod dataset;
mod domain;
mod synthetic;
mod transform;

use rand::seq::SliceRandom;

pub use container::{load_db, read_db, save_db, write_db, MAGIC, VERSION};
pub use dataset::{Dataset, DatasetKind};
pub use domain::{gen_domain_db, load_cifar10, synthetic_image_base};
pub use synthetic::{gen_synthetic_tasks, synthetic_boundaries, SyntheticConfig};
pub use transform::{
    apply_transform, default_domain_specs, ColorParam, Family, FlipAxis, TransformSpec,
};

use crate::error::{Error, Result};
use crate::seed;

/// A collection of tasks (or domains) sharing one input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDatabase {
    /// Training samples per task.
    pub datasets: Vec<Dataset>,
    /// Held-out samples, parallel to `datasets`; empty until [`split`] runs.
    pub heldout: Vec<Dataset>,
    /// Planted group of each task, when known.
    pub ground_truth_clusters: Option<Vec<usize>>,
    /// Display name per group index.
    pub group_names: Vec<String>,
}

impl TaskDatabase {
    pub fn k(&self) -> usize {
        self.datasets.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.datasets.iter().map(|d| d.name.clone()).collect()
    }

    /// Group label of each task as text (group name when available).
    pub fn group_labels(&self) -> Option<Vec<String>> {
        self.ground_truth_clusters.as_ref().map(|c| {
            c.iter()
                .map(|&g| {
                    self.group_names
                        .get(g)
                        .cloned()
                        .unwrap_or_else(|| g.to_string())
                })
                .collect()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .datasets
            .first()
            .ok_or_else(|| Error::Precondition("task database is empty".into()))?;
        for ds in self.datasets.iter().chain(&self.heldout) {
            ds.validate()?;
            if ds.sample_shape() != first.sample_shape() {
                return Err(Error::Precondition(format!(
                    "dataset '{}' has sample shape {:?}, expected {:?}",
                    ds.name,
                    ds.sample_shape(),
                    first.sample_shape()
                )));
            }
        }
        if !self.heldout.is_empty() && self.heldout.len() != self.k() {
            return Err(Error::Precondition(format!(
                "{} held-out sets for {} tasks",
                self.heldout.len(),
                self.k()
            )));
        }
        if let Some(c) = &self.ground_truth_clusters {
            if c.len() != self.k() {
                return Err(Error::Precondition(format!(
                    "{} cluster labels for {} tasks",
                    c.len(),
                    self.k()
                )));
            }
        }
        Ok(())
    }

    /// Held-out set for task `i`, falling back to the training set when the
    /// database was never split.
    pub fn eval_set(&self, i: usize) -> &Dataset {
        self.heldout.get(i).unwrap_or(&self.datasets[i])
    }
}

/// Stratified per-class split of every task into train and held-out parts.
///
/// Each class contributes `round(fraction * count)` samples to the held-out
/// part, clamped so both parts keep at least one sample of the class.
pub fn split(db: &TaskDatabase, heldout_fraction: f64, seed_value: u64) -> Result<TaskDatabase> {
    if !(heldout_fraction > 0.0 && heldout_fraction < 1.0) {
        return Err(Error::Precondition(format!(
            "held-out fraction must be in (0, 1), got {heldout_fraction}"
        )));
    }
    if !db.heldout.is_empty() {
        return Err(Error::Precondition("database is already split".into()));
    }
    let mut train = Vec::with_capacity(db.k());
    let mut held = Vec::with_capacity(db.k());
    for (t, ds) in db.datasets.iter().enumerate() {
        let mut rng = seed::rng(seed_value, "split", t as u64);
        let classes = ds.kind.classes();
        let mut tr_idx = Vec::new();
        let mut ho_idx = Vec::new();
        for c in 0..classes {
            let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == c).collect();
            if idx.is_empty() {
                continue;
            }
            if idx.len() < 2 {
                return Err(Error::Split(format!(
                    "task '{}': class {c} has {} sample(s), need at least 2",
                    ds.name,
                    idx.len()
                )));
            }
            idx.shuffle(&mut rng);
            let n_ho = ((heldout_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
            ho_idx.extend_from_slice(&idx[..n_ho]);
            tr_idx.extend_from_slice(&idx[n_ho..]);
        }
        tr_idx.sort_unstable();
        ho_idx.sort_unstable();
        train.push(ds.subset(&tr_idx));
        held.push(ds.subset(&ho_idx));
    }
    Ok(TaskDatabase {
        datasets: train,
        heldout: held,
        ground_truth_clusters: db.ground_truth_clusters.clone(),
        group_names: db.group_names.clone(),
    })
}
