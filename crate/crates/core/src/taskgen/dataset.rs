use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Binary detection task, labels in `{0, 1}`.
    BinaryTask,
    /// Multiclass domain, labels in `[0, classes)`.
    MulticlassDomain { classes: usize },
}

impl DatasetKind {
    pub fn classes(&self) -> usize {
        match *self {
            DatasetKind::BinaryTask => 2,
            DatasetKind::MulticlassDomain { classes } => classes,
        }
    }
}

/// Labeled few-shot sample set of one task or domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub kind: DatasetKind,
    /// `[n, ...sample_shape]`
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, kind: DatasetKind, inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            kind,
            inputs,
            labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::Precondition(format!("dataset '{}' is empty", self.name)));
        }
        if self.inputs.shape().len() < 2 || self.inputs.shape()[0] != self.labels.len() {
            return Err(Error::Precondition(format!(
                "dataset '{}': inputs {:?} do not hold {} samples",
                self.name,
                self.inputs.shape(),
                self.labels.len()
            )));
        }
        let classes = self.kind.classes();
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Precondition(format!(
                "dataset '{}': label {bad} outside [0, {classes})",
                self.name
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    /// Labels as `f64` targets for binary cross-entropy.
    pub fn targets(&self) -> Vec<f64> {
        self.labels.iter().map(|&y| y as f64).collect()
    }

    /// Subset by sample index, keeping name and kind.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            kind: self.kind,
            inputs: self.inputs.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Concatenates datasets with identical sample shapes, relabeling with `kind`.
    pub fn concat(name: &str, kind: DatasetKind, parts: &[(&Dataset, Option<usize>)]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Precondition("nothing to concatenate".into()))?
            .0;
        let shape = first.sample_shape().to_vec();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (ds, relabel) in parts {
            if ds.sample_shape() != shape.as_slice() {
                return Err(Error::Precondition(format!(
                    "cannot concatenate '{}' with sample shape {:?} onto {shape:?}",
                    ds.name,
                    ds.sample_shape()
                )));
            }
            data.extend_from_slice(ds.inputs.data());
            match relabel {
                Some(l) => labels.extend(std::iter::repeat_n(*l, ds.len())),
                None => labels.extend_from_slice(&ds.labels),
            }
        }
        let mut full = vec![labels.len()];
        full.extend_from_slice(&shape);
        Dataset::new(name, kind, Tensor::new(full, data)?, labels)
    }
}
