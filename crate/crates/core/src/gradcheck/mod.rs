//! Central finite-difference gradient checking, always in double precision.

mod suite;

pub use suite::{run_suite, toy_model_config, SuiteResult, END_TO_END_TOLERANCE, LAYER_TOLERANCE};

use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Below this magnitude gradients are compared on absolute error; the
/// central difference itself carries roundoff around 1e-11.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, GRADIENT_FLOOR)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRADIENT_FLOOR)
}

/// Compares `analytic` against `(f(x+eps) - f(x-eps)) / 2eps` element-wise.
pub fn grad_check(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    analytic: &[f64],
    eps: f64,
) -> Result<GradCheckReport> {
    if x.len() != analytic.len() {
        return Err(Error::Dimension(format!(
            "grad_check: {} inputs but {} analytic gradients",
            x.len(),
            analytic.len()
        )));
    }
    let mut probe = x.to_vec();
    let mut eval = |p: &[f64]| -> Result<f64> {
        let v = f(p)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric(format!("grad_check: function returned {v}")))
        }
    };
    eval(&probe)?;
    let mut report = GradCheckReport { max_relative_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0 };
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let up = eval(&probe)?;
        probe[i] = x[i] - eps;
        let down = eval(&probe)?;
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * eps);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_relative_error || i == 0 {
            report = GradCheckReport { max_relative_error: err, worst_index: i, analytic: analytic[i], numeric };
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let a = [0.5, -2.0, 3.25, 1.5];
        let f = |x: &[f64]| Ok(x.iter().zip(&a).map(|(x, a)| x * a).sum::<f64>());
        let r = grad_check(f, &[0.1, 0.2, -0.3, 0.05], &a, DEFAULT_EPSILON).unwrap();
        assert!(r.max_relative_error < 1e-10, "{r:?}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let f = |x: &[f64]| Ok(x[0] * x[0]);
        let r = grad_check(f, &[3.0], &[5.0], DEFAULT_EPSILON).unwrap();
        assert!(r.max_relative_error > 0.1);
    }

    #[test]
    fn non_finite_value_is_numeric_error() {
        let f = |x: &[f64]| Ok(1.0 / x[0]);
        assert!(matches!(grad_check(f, &[0.0], &[0.0], DEFAULT_EPSILON), Err(Error::Numeric(_))));
    }
}
