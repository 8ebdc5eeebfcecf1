//! Finite-difference gradient checker used to verify every analytic
//! gradient in the crate.

use crate::error::{Error, Result};

/// Compare `analytic_grad` against central differences of `loss_fn` around
/// `params`. Returns the maximum elementwise relative error.
///
/// The step for coordinate i is `epsilon * max(1, |params[i]|)`; the relative
/// error denominator is `max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check(
    mut loss_fn: impl FnMut(&[f64]) -> Result<f64>,
    analytic_grad: &[f64],
    params: &[f64],
    epsilon: f64,
) -> Result<f64> {
    assert!(epsilon > 0.0, "epsilon must be positive");
    assert_eq!(analytic_grad.len(), params.len());

    let mut theta = params.to_vec();
    let mut max_rel = 0.0f64;
    for i in 0..theta.len() {
        let h = epsilon * theta[i].abs().max(1.0);
        let orig = theta[i];

        theta[i] = orig + h;
        let plus = loss_fn(&theta)?;
        theta[i] = orig - h;
        let minus = loss_fn(&theta)?;
        theta[i] = orig;

        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite("grad_check loss"));
        }
        let numeric = (plus - minus) / (2.0 * h);
        let denom = (analytic_grad[i].abs() + numeric.abs()).max(1e-8);
        let rel = (analytic_grad[i] - numeric).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_up_to_rounding() {
        let params = [3.0];
        let analytic = [6.0];
        let err = grad_check(|x| Ok(x[0] * x[0]), &analytic, &params, 1e-4).unwrap();
        assert!(err < 1e-6, "err {err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let params = [1.0, -2.0, 0.5];
        let analytic = [0.0; 3];
        let err = grad_check(|_| Ok(7.25), &analytic, &params, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let params = [2.0];
        let analytic = [1.0]; // true gradient is 4.0
        let err = grad_check(|x| Ok(x[0] * x[0]), &analytic, &params, 1e-5).unwrap();
        assert!(err > 0.1);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let params = [0.0];
        let analytic = [0.0];
        // ln goes NaN on the negative probe side.
        let res = grad_check(|x| Ok(x[0].ln()), &analytic, &params, 1e-5);
        assert!(matches!(res, Err(Error::NonFinite(_))));
    }
}
