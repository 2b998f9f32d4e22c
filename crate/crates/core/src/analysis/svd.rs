use super::linalg::{gaussian_vector, matvec, matvec_t, orthonormalize, symmetric_eigen};
use super::{Embedding, SimilarityMatrix};
use crate::autodiff::dot;
use crate::error::{Error, Result};
use crate::seed;

const OVERSAMPLE: usize = 8;
const MAX_ITER: usize = 5000;
/// Ritz residual bound relative to the largest eigenvalue of `A A^T`.
const RESIDUAL_TOL: f64 = 1e-12;

/// Top-`d` singular triplets of `S` (or of `(S + S^T) / 2` when
/// `symmetrize`), found by subspace iteration on `A A^T` with Rayleigh-Ritz
/// projection. Iteration stops once every wanted Ritz pair has a residual
/// below `1e-12` of the leading eigenvalue.
pub fn truncated_svd(s: &SimilarityMatrix, d: usize, symmetrize: bool) -> Result<Embedding> {
    let k = s.k;
    if d == 0 || d > k {
        return Err(Error::Precondition(format!("embedding dimension {d} must be in 1..={k}")));
    }
    let a = if symmetrize { s.symmetrized() } else { s.values.clone() };
    let p = (d + OVERSAMPLE).min(k);
    let mut rng = seed::rng(0, "truncated-svd", k as u64);
    let frob2: f64 = a.iter().map(|x| x * x).sum();

    let apply = |q: &[f64]| matvec(&a, k, &matvec_t(&a, k, q));
    let mut basis: Vec<Vec<f64>> = (0..p).map(|_| gaussian_vector(&mut rng, k)).collect();
    orthonormalize(&mut basis, &mut rng);
    let mut lambdas = vec![0.0; p];
    if frob2 > 0.0 {
        let mut converged = false;
        for it in 0..MAX_ITER {
            let mut y: Vec<Vec<f64>> = basis.iter().map(|q| apply(q)).collect();
            orthonormalize(&mut y, &mut rng);
            basis = y;
            let my: Vec<Vec<f64>> = basis.iter().map(|q| apply(q)).collect();
            let mut b = vec![0.0; p * p];
            for i in 0..p {
                for j in i..p {
                    let v = 0.5 * (dot(&basis[i], &my[j]) + dot(&basis[j], &my[i]));
                    b[i * p + j] = v;
                    b[j * p + i] = v;
                }
            }
            let (vals, vecs) = symmetric_eigen(&b, p);
            let combine = |src: &[Vec<f64>], w: &[f64]| -> Vec<f64> {
                let mut out = vec![0.0; k];
                for (col, &wi) in src.iter().zip(w) {
                    out.iter_mut().zip(col).for_each(|(o, c)| *o += wi * c);
                }
                out
            };
            let ritz: Vec<Vec<f64>> = vecs.iter().map(|w| combine(&basis, w)).collect();
            let mritz: Vec<Vec<f64>> = vecs.iter().map(|w| combine(&my, w)).collect();
            basis = ritz;
            lambdas = vals;
            if p == k {
                converged = true;
                break;
            }
            let top = lambdas[0].max(0.0);
            let worst = (0..d)
                .map(|c| {
                    mritz[c]
                        .iter()
                        .zip(&basis[c])
                        .map(|(m, u)| (m - lambdas[c] * u).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(0.0, f64::max);
            if worst <= RESIDUAL_TOL * top {
                log::debug!("truncated SVD converged after {} iterations", it + 1);
                converged = true;
                break;
            }
        }
        if !converged {
            log::warn!("truncated SVD stopped after {MAX_ITER} iterations without meeting tolerance");
        }
    }

    let mut singular_values = Vec::with_capacity(d);
    let mut left = vec![vec![0.0; d]; k];
    let mut right = vec![vec![0.0; d]; k];
    for c in 0..d {
        let mut u = basis[c].clone();
        // deterministic sign: largest-magnitude entry positive
        let pivot = u
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if v.abs() > u[best].abs() { i } else { best });
        if u[pivot] < 0.0 {
            u.iter_mut().for_each(|x| *x = -*x);
        }
        let sigma = lambdas[c].max(0.0).sqrt();
        let v = if sigma > 0.0 {
            matvec_t(&a, k, &u).into_iter().map(|x| x / sigma).collect()
        } else {
            vec![0.0; k]
        };
        for i in 0..k {
            left[i][c] = u[i];
            right[i][c] = v[i];
        }
        singular_values.push(sigma);
    }
    let coords = left
        .iter()
        .map(|row| row.iter().zip(&singular_values).map(|(u, s)| u * s).collect())
        .collect();
    Ok(Embedding {
        d,
        coords,
        singular_values,
        left,
        right,
        names: s.names.clone(),
    })
}
