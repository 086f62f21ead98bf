//! Central-difference gradient oracle.

use crate::error::{Error, Result};

/// Compares the analytic gradient returned by `f` at `point` with a
/// fourth-order central difference and returns
/// `max_i |analytic_i - fd_i| / max(1, |analytic_i|)`.
///
/// The difference quotient is the Richardson combination `(4 D(h) - D(2h)) / 3`
/// of two central differences, which cancels the `h²` truncation term while
/// keeping `h` large enough that f32 rounding in the loss stays negligible.
///
/// `f` maps a parameter vector to `(value, gradient)`; the gradient is only
/// read at `point`.
pub fn finite_diff_check<F>(mut f: F, point: &[f32], epsilon: f64) -> Result<f64>
where
    F: FnMut(&[f32]) -> Result<(f64, Vec<f32>)>,
{
    if !(1e-5..=1e-2).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon {epsilon} outside [1e-5, 1e-2]")));
    }
    let (_, analytic) = f(point)?;
    if analytic.len() != point.len() {
        return Err(Error::shape("finite_diff_check", "gradient length differs from point"));
    }
    let mut x = point.to_vec();
    let mut worst = 0f64;
    for i in 0..x.len() {
        let near = central_difference(&mut f, &mut x, i, epsilon)?;
        let far = central_difference(&mut f, &mut x, i, 2.0 * epsilon)?;
        let fd = (4.0 * near - far) / 3.0;
        let a = analytic[i] as f64;
        worst = worst.max((a - fd).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

fn central_difference<F>(f: &mut F, x: &mut [f32], i: usize, step: f64) -> Result<f64>
where
    F: FnMut(&[f32]) -> Result<(f64, Vec<f32>)>,
{
    let orig = x[i];
    x[i] = (orig as f64 + step) as f32;
    let up_step = x[i] as f64 - orig as f64;
    let (plus, _) = f(x)?;
    x[i] = (orig as f64 - step) as f32;
    let down_step = orig as f64 - x[i] as f64;
    let (minus, _) = f(x)?;
    x[i] = orig;
    if !plus.is_finite() || !minus.is_finite() {
        return Err(Error::NonFinite { op: "finite_diff_check" });
    }
    // f32 rounding of the perturbed coordinate makes the steps uneven
    Ok((plus - minus) / (up_step + down_step))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form_is_exact() {
        // f(x) = x^T A x with symmetric A; grad = 2 A x
        let a = [[2.0, 0.5, -1.0], [0.5, 1.0, 0.25], [-1.0, 0.25, 3.0]];
        let f = |x: &[f32]| -> Result<(f64, Vec<f32>)> {
            let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();
            let mut val = 0.0;
            let mut grad = vec![0f32; 3];
            for i in 0..3 {
                let mut row = 0.0;
                for j in 0..3 {
                    val += x[i] * a[i][j] * x[j];
                    row += a[i][j] * x[j];
                }
                grad[i] = (2.0 * row) as f32;
            }
            Ok((val, grad))
        };
        let err = finite_diff_check(f, &[0.3, -0.7, 1.1], 1e-3).unwrap();
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn cubic_is_exact_at_large_step() {
        // a plain central difference is off by h² here; the extrapolated one is not
        let f = |x: &[f32]| -> Result<(f64, Vec<f32>)> {
            let v = x[0] as f64;
            Ok((v * v * v, vec![(3.0 * v * v) as f32]))
        };
        let err = finite_diff_check(f, &[0.75], 1e-2).unwrap();
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn rejects_bad_epsilon() {
        let f = |_: &[f32]| Ok((0.0, vec![0.0]));
        assert!(finite_diff_check(f, &[0.0], 0.5).is_err());
    }
}
