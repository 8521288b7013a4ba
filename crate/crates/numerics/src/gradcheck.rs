//! Central finite-difference gradient check.

use crate::error::{NumericsError, Result};

/// Returns `max_i |a_i - c_i| / (|a_i| + |c_i| + 1e-8)` where `a` is the
/// analytic gradient reported by `f` at `point` and `c` the central
/// difference with step `eps`.
///
/// `f` maps a point to `(value, gradient)`.
pub fn grad_check<F>(mut f: F, point: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(eps > 0.0) {
        return Err(NumericsError::InvalidEps(eps));
    }
    let (_, analytic) = f(point)?;
    if analytic.len() != point.len() {
        return Err(NumericsError::InvalidTensor(format!(
            "gradient has {} entries for a {}-dimensional point",
            analytic.len(),
            point.len()
        )));
    }
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let (fp, _) = f(&x)?;
        x[i] = orig - eps;
        let (fm, _) = f(&x)?;
        x[i] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        let rel = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs() + 1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let err = grad_check(|x| Ok((x[0] * x[0], vec![2.0 * x[0]])), &[2.0], 1e-4).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let err = grad_check(|x| Ok((x[0] * x[0], vec![3.0 * x[0]])), &[2.0], 1e-4).unwrap();
        assert!(err > 0.1);
    }

    #[test]
    fn rejects_nonpositive_eps() {
        assert!(grad_check(|x| Ok((x[0], vec![1.0])), &[0.0], 0.0).is_err());
        assert!(grad_check(|x| Ok((x[0], vec![1.0])), &[0.0], -1.0).is_err());
    }
}
