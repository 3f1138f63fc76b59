//! Central-difference gradient verification.

use crate::error::{Error, Result};

/// Default perturbation for double precision.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Compares an analytic gradient against central finite differences of
/// `loss` around `params`.
///
/// Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn finite_diff_check<F>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    step: f64,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if step <= 0.0 {
        return Err(Error::domain("finite-difference step must be positive"));
    }
    if analytic.len() != params.len() {
        return Err(Error::shape(format!(
            "analytic gradient has {} entries for {} parameters",
            analytic.len(),
            params.len()
        )));
    }

    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..work.len() {
        let orig = work[i];
        work[i] = orig + step;
        let plus = loss(&work)?;
        work[i] = orig - step;
        let minus = loss(&work)?;
        work[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::numeric(format!(
                "loss not finite while perturbing coordinate {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * step);
        let rel = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_exact_to_rounding() {
        // loss = 0.5 ||p||^2, gradient = p; symmetric difference is exact
        // for quadratics up to floating-point rounding.
        let params = vec![0.3, -1.7, 2.5];
        let err = finite_diff_check(
            |p| Ok(0.5 * p.iter().map(|v| v * v).sum::<f64>()),
            &params,
            &params.clone(),
            DEFAULT_FD_STEP,
        )
        .unwrap();
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let params = vec![1.0, 2.0];
        let wrong = vec![1.0, 0.0];
        let err = finite_diff_check(
            |p| Ok(0.5 * p.iter().map(|v| v * v).sum::<f64>()),
            &params,
            &wrong,
            DEFAULT_FD_STEP,
        )
        .unwrap();
        assert!(err > 0.5);
    }

    #[test]
    fn non_finite_loss_is_a_numeric_error() {
        let r = finite_diff_check(|_| Ok(f64::NAN), &[1.0], &[0.0], DEFAULT_FD_STEP);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
