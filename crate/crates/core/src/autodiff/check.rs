use super::GradVector;
use crate::error::{Error, Result};

/// Central-difference gradient of `f` at `params`.
///
/// Used as the independent oracle for reverse-mode gradients.
pub fn finite_diff_grad<F>(mut f: F, params: &[f64], eps: f64) -> Result<GradVector>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::Precondition(format!("eps must be positive, got {eps}")));
    }
    let mut x = params.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let fp = f(&x)?;
        x[i] = orig - eps;
        let fm = f(&x)?;
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite function value while perturbing parameter {i}"
            )));
        }
        grad.push((fp - fm) / (2.0 * eps));
    }
    Ok(GradVector::new(grad))
}
