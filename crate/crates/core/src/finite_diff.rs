//! Central-difference gradient verification.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Worst relative error per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub per_tensor: Vec<f64>,
    /// Coordinates per tensor whose step crossed a kink and were not compared.
    pub skipped: Vec<usize>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.per_tensor.iter().copied().fold(0.0, f64::max)
    }
}

/// `|a − b| / max(|a|, |b|, 1e-8)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares `analytic` against `(f(θ+eps) − f(θ−eps)) / 2eps` coordinate by coordinate.
pub fn finite_diff_check<F>(mut f: F, params: &[Tensor], analytic: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor]) -> f64,
{
    finite_diff_check_piecewise(|p| (f(p), ()), params, analytic, eps)
}

/// Like [`finite_diff_check`] for piecewise-smooth functions. `f` also
/// returns the active piece (argmax choices, ReLU signs, ...). A coordinate
/// whose `±eps` step lands on a different piece than `θ` has no valid
/// central difference and is counted in `skipped` instead.
pub fn finite_diff_check_piecewise<F, P>(
    mut f: F,
    params: &[Tensor],
    analytic: &[Tensor],
    eps: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor]) -> (f64, P),
    P: PartialEq,
{
    if params.len() != analytic.len() {
        return Err(Error::shape(format!(
            "{} parameter tensors but {} gradients",
            params.len(),
            analytic.len()
        )));
    }
    if let Some((p, g)) = params.iter().zip(analytic).find(|(p, g)| p.shape() != g.shape()) {
        return Err(Error::shape(format!(
            "parameter {:?} has gradient {:?}",
            p.shape(),
            g.shape()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!("step must be positive, got {eps}")));
    }

    let mut work = params.to_vec();
    let (_, base) = f(&work);
    let mut per_tensor = Vec::with_capacity(params.len());
    let mut skipped = Vec::with_capacity(params.len());
    for (t, grad) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        let mut skips = 0;
        for i in 0..grad.len() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + eps;
            let (plus, p_plus) = f(&work);
            work[t].data_mut()[i] = orig - eps;
            let (minus, p_minus) = f(&work);
            work[t].data_mut()[i] = orig;
            if p_plus != base || p_minus != base {
                skips += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(grad.data()[i], numeric));
        }
        per_tensor.push(worst);
        skipped.push(skips);
    }
    Ok(GradCheckReport { per_tensor, skipped })
}
