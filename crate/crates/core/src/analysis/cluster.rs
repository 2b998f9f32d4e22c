use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::linalg::symmetric_eigen;
use super::SimilarityMatrix;
use crate::error::{Error, Result};
use crate::seed;

const RESTARTS: u64 = 10;
const LLOYD_ITERS: usize = 300;

/// Cluster labels, numbered in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    pub labels: Vec<usize>,
    /// Set when the affinity matrix had no positive off-diagonal entry.
    pub degenerate: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(p, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_centers(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    while centers.len() < k {
        let d2: Vec<f64> = points.iter().map(|p| nearest(p, &centers).1).collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    idx = i;
                    break;
                }
                r -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[pick].clone());
    }
    centers
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> (Vec<usize>, f64) {
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..LLOYD_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let c = nearest(p, &centers).0;
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            let mut mean = vec![0.0; dim];
            for m in &members {
                mean.iter_mut().zip(m.iter()).for_each(|(a, b)| *a += b);
            }
            mean.iter_mut().for_each(|a| *a /= members.len() as f64);
            *center = mean;
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centers[l])).sum();
    (labels, inertia)
}

fn canonical(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// k-means++ seeding followed by Lloyd iterations, best of 10 restarts by
/// inertia (earliest restart wins ties). Restart r draws from a stream
/// derived from `seed_value` and r.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed_value: u64) -> Result<Vec<usize>> {
    if points.is_empty() || k == 0 || k > points.len() {
        return Err(Error::Precondition(format!(
            "k-means needs 1 <= k <= n (k={k}, n={})",
            points.len()
        )));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for r in 0..RESTARTS {
        let mut rng = seed::rng(seed_value, "kmeans", r);
        let centers = seed_centers(points, k, &mut rng);
        let (labels, inertia) = lloyd(points, centers);
        if best.as_ref().is_none_or(|b| inertia < b.1) {
            best = Some((labels, inertia));
        }
    }
    Ok(canonical(&best.expect("at least one restart").0))
}

/// Normalized spectral clustering of the similarity matrix.
///
/// The affinity is `(S + S^T) / 2` with negative entries and the diagonal set
/// to zero. Rows of the top `n_clusters` eigenvectors of
/// `D^-1/2 A D^-1/2` are scaled to unit length and grouped by [`kmeans`].
pub fn spectral_cluster(s: &SimilarityMatrix, n_clusters: usize) -> Result<Clustering> {
    let k = s.k;
    if n_clusters == 0 || n_clusters > k {
        return Err(Error::Precondition(format!("n_clusters {n_clusters} must be in 1..={k}")));
    }
    let mut a = s.symmetrized();
    for i in 0..k {
        for j in 0..k {
            if i == j || a[i * k + j] < 0.0 {
                a[i * k + j] = 0.0;
            }
        }
    }
    if a.iter().all(|&v| v == 0.0) {
        log::warn!("similarity matrix has no positive affinity; assigning every task to one cluster");
        return Ok(Clustering {
            labels: vec![0; k],
            degenerate: true,
        });
    }
    let inv_sqrt: Vec<f64> = (0..k)
        .map(|i| {
            let deg: f64 = a[i * k..(i + 1) * k].iter().sum();
            if deg > 0.0 { 1.0 / deg.sqrt() } else { 0.0 }
        })
        .collect();
    for i in 0..k {
        for j in 0..k {
            a[i * k + j] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    let (_, vecs) = symmetric_eigen(&a, k);
    let points: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let row: Vec<f64> = vecs[..n_clusters].iter().map(|v| v[i]).collect();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 { row.iter().map(|x| x / norm).collect() } else { row }
        })
        .collect();
    Ok(Clustering {
        labels: kmeans(&points, n_clusters, 0)?,
        degenerate: false,
    })
}

fn comb2(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
/// Returns 1.0 when the chance-corrected denominator vanishes, which only
/// happens for identical trivial partitions.
pub fn ari(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Precondition(format!(
            "ARI needs two non-empty labelings of equal length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let (ca, cb) = (canonical(a), canonical(b));
    let (na, nb) = (ca.iter().max().unwrap() + 1, cb.iter().max().unwrap() + 1);
    let mut table = vec![0u64; na * nb];
    for (&x, &y) in ca.iter().zip(&cb) {
        table[x * nb + y] += 1;
    }
    let index: f64 = table.iter().map(|&n| comb2(n)).sum();
    let rows: f64 = (0..na).map(|r| comb2(table[r * nb..(r + 1) * nb].iter().sum())).sum();
    let cols: f64 = (0..nb).map(|c| comb2((0..na).map(|r| table[r * nb + c]).sum())).sum();
    let expected = rows * cols / comb2(a.len() as u64).max(f64::MIN_POSITIVE);
    let max = 0.5 * (rows + cols);
    if (max - expected).abs() < 1e-12 {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
