//! Small dense helpers. Matrices are row-major `Vec<f64>` with explicit sizes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::dot;

const JACOBI_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric `n x n` matrix by cyclic Jacobi
/// rotations. Returns eigenvalues in descending order and the matching unit
/// eigenvectors.
pub fn symmetric_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert_eq!(a.len(), n * n);
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..JACOBI_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() <= 1e-17 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order
        .iter()
        .map(|&c| (0..n).map(|r| v[r * n + c]).collect())
        .collect();
    (values, vectors)
}

/// `y = A x` for row-major `A` of size `n x n`.
pub fn matvec(a: &[f64], n: usize, x: &[f64]) -> Vec<f64> {
    (0..n).map(|r| dot(&a[r * n..(r + 1) * n], x)).collect()
}

/// `y = A^T x` for row-major `A` of size `n x n`.
pub fn matvec_t(a: &[f64], n: usize, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for r in 0..n {
        let xr = x[r];
        if xr != 0.0 {
            for (yc, arc) in y.iter_mut().zip(&a[r * n..(r + 1) * n]) {
                *yc += arc * xr;
            }
        }
    }
    y
}

pub fn transpose(a: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            t[c * n + r] = a[r * n + c];
        }
    }
    t
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Orthonormalizes `cols` in place by twice-applied modified Gram-Schmidt.
/// Columns that collapse are replaced by fresh random directions.
pub fn orthonormalize(cols: &mut [Vec<f64>], rng: &mut ChaCha8Rng) {
    let n = cols.first().map_or(0, |c| c.len());
    for i in 0..cols.len() {
        for attempt in 0.. {
            let start = dot(&cols[i], &cols[i]).sqrt();
            for _ in 0..2 {
                let (done, rest) = cols.split_at_mut(i);
                for q in done.iter() {
                    let p = dot(&rest[0], q);
                    rest[0].iter_mut().zip(q).for_each(|(x, qk)| *x -= p * qk);
                }
            }
            let norm = dot(&cols[i], &cols[i]).sqrt();
            if norm > 1e-10 * start && norm > 1e-300 {
                cols[i].iter_mut().for_each(|x| *x /= norm);
                break;
            }
            assert!(attempt < 16, "could not complete an orthonormal basis");
            cols[i] = gaussian_vector(rng, n);
        }
    }
}
