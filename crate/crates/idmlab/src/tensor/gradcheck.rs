//! Central finite-difference gradient oracle.
//!
//! Backward rules are validated by comparing analytic gradients against
//! `(f(x+h) - f(x-h)) / 2h` evaluated coordinate by coordinate. Coordinates
//! where both gradients are tiny are skipped rather than divided to nothing.

use crate::error::Result;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Relative tolerance used by the gradient suites.
pub const FD_TOL: f64 = 1e-4;

/// Magnitude below which a coordinate pair is treated as "both zero".
pub const FD_FLOOR: f64 = 1e-6;

/// Central finite differences of a scalar function at `x`.
pub fn fd_gradient<F>(mut f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let fp = f(&probe)?;
        probe[i] = x[i] - step;
        let fm = f(&probe)?;
        probe[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * step);
    }
    Ok(grad)
}

/// Outcome of one analytic-vs-finite-difference comparison.
#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub max_rel: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl FdReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel < tol
    }
}

/// Worst relative disagreement between analytic and finite-difference
/// gradients, skipping coordinates where both magnitudes fall below `floor`.
pub fn compare(analytic: &[f64], fd: &[f64], floor: f64) -> FdReport {
    assert_eq!(analytic.len(), fd.len(), "gradient length mismatch");
    let mut max_rel = 0.0_f64;
    let mut checked = 0;
    let mut skipped = 0;
    for (a, f) in analytic.iter().zip(fd) {
        let scale = a.abs().max(f.abs());
        if scale < floor {
            skipped += 1;
            continue;
        }
        checked += 1;
        max_rel = max_rel.max((a - f).abs() / scale);
    }
    FdReport { max_rel, checked, skipped }
}

/// Run a full check of a scalar function against its claimed gradient.
pub fn check<F>(f: F, x: &[f64], analytic: &[f64]) -> Result<FdReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let fd = fd_gradient(f, x, FD_STEP)?;
    Ok(compare(analytic, &fd, FD_FLOOR))
}
