//! Post-training analysis of the gradient-alignment similarity matrix:
//! low-rank embeddings, nearest-task queries and cluster recovery.

mod cluster;
mod export;
pub mod linalg;
mod svd;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cluster::{ari, kmeans, spectral_cluster, Clustering};
pub use export::{
    read_embedding_csv, write_cluster_report, write_embedding_csv, write_similarity_csv,
    write_singular_values_csv, ClusterReport,
};
pub use svd::truncated_svd;

use crate::error::{Error, Result};
use crate::models::{ArchSpec, ParamSet};
use crate::taskgen::TaskDatabase;

/// Pairwise similarities `values[i * k + j] = eta_ij`, measured at task i's
/// parameters. Not symmetric in general.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub k: usize,
    pub values: Vec<f64>,
    pub names: Vec<String>,
}

impl SimilarityMatrix {
    pub fn new(k: usize, values: Vec<f64>, names: Vec<String>) -> Result<Self> {
        if k == 0 || values.len() != k * k || names.len() != k {
            return Err(Error::Precondition(format!(
                "similarity matrix needs k >= 1, k*k values and k names (k={k}, {} values, {} names)",
                values.len(),
                names.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("similarity matrix has non-finite entries".into()));
        }
        Ok(Self { k, values, names })
    }

    /// Unnamed matrix; tasks are called `task0`, `task1`, ...
    pub fn from_values(k: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(k, values, (0..k).map(|i| format!("task{i}")).collect())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.k + j]
    }

    /// `(S + S^T) / 2`, row-major.
    pub fn symmetrized(&self) -> Vec<f64> {
        let k = self.k;
        let mut out = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                out[i * k + j] = 0.5 * (self.get(i, j) + self.get(j, i));
            }
        }
        out
    }

    /// Mean entry within and across the given groups, off-diagonal only.
    pub fn block_means(&self, groups: &[usize]) -> (f64, f64) {
        let (mut w, mut nw, mut a, mut na) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..self.k {
            for j in 0..self.k {
                if i == j {
                    continue;
                }
                if groups[i] == groups[j] {
                    w += self.get(i, j);
                    nw += 1;
                } else {
                    a += self.get(i, j);
                    na += 1;
                }
            }
        }
        (w / nw.max(1) as f64, a / na.max(1) as f64)
    }
}

/// All `K^2` similarities: row `i` holds the alignment of task i's gradient
/// with every task's gradient, all taken at task i's parameters.
pub fn full_similarity_matrix(arch: &ArchSpec, paramsets: &[ParamSet], db: &TaskDatabase) -> Result<SimilarityMatrix> {
    let k = db.k();
    if paramsets.len() != k {
        return Err(Error::Precondition(format!(
            "{} parameter sets for {k} tasks",
            paramsets.len()
        )));
    }
    let rows: Vec<Result<Vec<f64>>> = (0..k)
        .into_par_iter()
        .map(|i| {
            let theta = &paramsets[i];
            let grads = (0..k)
                .map(|j| {
                    arch.loss_and_grad(theta, &db.datasets[j])
                        .and_then(|(_, g)| crate::autodiff::GradVector::checked(g.into_vec()))
                        .map_err(|e| e.context(format!("similarity ({i}, {j})")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(grads.iter().map(|gj| grads[i].dot(gj)).collect())
        })
        .collect();
    let mut values = Vec::with_capacity(k * k);
    for r in rows {
        values.extend(r?);
    }
    SimilarityMatrix::new(k, values, db.names())
}

/// Low-dimensional task coordinates from a truncated SVD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub d: usize,
    /// `K x d`: left singular vectors scaled by their singular values.
    pub coords: Vec<Vec<f64>>,
    /// Non-increasing, non-negative.
    pub singular_values: Vec<f64>,
    /// `K x d` unit left singular vectors.
    pub left: Vec<Vec<f64>>,
    /// `K x d` unit right singular vectors (zero for zero singular values).
    pub right: Vec<Vec<f64>>,
    pub names: Vec<String>,
}

impl Embedding {
    pub fn k(&self) -> usize {
        self.coords.len()
    }

    /// Rank-d approximation `U_d Sigma_d V_d^T`, row-major `K x K`.
    pub fn reconstruction(&self) -> Vec<f64> {
        let k = self.k();
        let mut out = vec![0.0; k * k];
        for c in 0..self.d {
            let s = self.singular_values[c];
            for i in 0..k {
                let us = self.left[i][c] * s;
                for j in 0..k {
                    out[i * k + j] += us * self.right[j][c];
                }
            }
        }
        out
    }
}

/// The `k` tasks closest to `query` in embedding space, nearest first.
/// Equal distances go to the lower index.
pub fn nearest_tasks(emb: &Embedding, query: usize, k: usize) -> Result<Vec<usize>> {
    let n = emb.k();
    if query >= n {
        return Err(Error::Precondition(format!("query {query} out of range for {n} tasks")));
    }
    if k >= n {
        return Err(Error::Precondition(format!("asked for {k} neighbours among {n} tasks")));
    }
    let q = &emb.coords[query];
    let mut dist: Vec<(f64, usize)> = (0..n)
        .filter(|&j| j != query)
        .map(|j| {
            let d2: f64 = emb.coords[j].iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            (d2, j)
        })
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(dist.into_iter().take(k).map(|(_, j)| j).collect())
}
