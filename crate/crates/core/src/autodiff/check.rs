use crate::error::{bail, Result};
use alloc::vec::Vec;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter index where the worst error occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Relative error with the floor used throughout the crate's checks.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Checks every component. `f(params, want_grad)` returns the scalar value
/// and, when `want_grad`, its gradient.
pub fn grad_check<F>(f: F, params: &[f64], h: f64) -> Result<GradCheck>
where
    F: FnMut(&[f64], bool) -> Result<(f64, Vec<f64>)>,
{
    let all: Vec<usize> = (0..params.len()).collect();
    grad_check_subset(f, params, h, &all)
}

/// Like [`grad_check`] but only perturbs the listed components.
pub fn grad_check_subset<F>(mut f: F, params: &[f64], h: f64, indices: &[usize]) -> Result<GradCheck>
where
    F: FnMut(&[f64], bool) -> Result<(f64, Vec<f64>)>,
{
    let (_, grad) = f(params, true)?;
    if grad.len() != params.len() {
        bail!(Contract, "gradient has {} components for {} parameters", grad.len(), params.len());
    }
    let mut out = GradCheck { max_rel_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0 };
    let mut x = params.to_vec();
    for &i in indices {
        let orig = x[i];
        x[i] = orig + h;
        let (fp, _) = f(&x, false)?;
        x[i] = orig - h;
        let (fm, _) = f(&x, false)?;
        x[i] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let err = relative_error(grad[i], numeric);
        if err > out.max_rel_error || !err.is_finite() {
            out = GradCheck { max_rel_error: err, worst_index: i, analytic: grad[i], numeric };
        }
    }
    Ok(out)
}
