use crate::error::{PalError, Result};
use crate::par::Exec;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Index of the entry with the largest error.
    pub worst_index: usize,
    pub errors: Vec<f64>,
}

/// |a - n| / max(1e-8, |a| + |n|).
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn central_difference<F>(theta: &mut [f64], i: usize, eps: f64, loss: &F) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let orig = theta[i];
    theta[i] = orig + eps;
    let plus = loss(theta)?;
    theta[i] = orig - eps;
    let minus = loss(theta)?;
    theta[i] = orig;
    if !plus.is_finite() || !minus.is_finite() {
        return Err(PalError::NonFinite(format!("loss at parameter {i}")));
    }
    Ok((plus - minus) / (2.0 * eps))
}

fn report(errors: Vec<f64>) -> GradCheckReport {
    let (worst_index, max_rel_error) = errors
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |acc, (i, e)| if e > acc.1 { (i, e) } else { acc });
    GradCheckReport {
        max_rel_error,
        worst_index,
        errors,
    }
}

/// Compares `analytic` against central differences of `loss` around `theta`.
/// `theta` is restored before returning.
pub fn grad_check<F>(theta: &mut [f64], analytic: &[f64], eps: f64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if theta.len() != analytic.len() {
        return Err(PalError::Shape("gradient and parameter lengths differ".into()));
    }
    if !loss(theta)?.is_finite() {
        return Err(PalError::NonFinite("loss at the base point".into()));
    }
    let mut errors = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let numeric = central_difference(theta, i, eps, &loss)?;
        errors.push(relative_error(analytic[i], numeric));
    }
    Ok(report(errors))
}

/// Same as [`grad_check`], evaluating entries through `exec`. Each entry
/// perturbs a private copy of `theta`.
pub fn grad_check_with<F>(
    theta: &[f64],
    analytic: &[f64],
    eps: f64,
    exec: Exec,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> Result<f64> + Sync + Send,
{
    if theta.len() != analytic.len() {
        return Err(PalError::Shape("gradient and parameter lengths differ".into()));
    }
    if !loss(theta)?.is_finite() {
        return Err(PalError::NonFinite("loss at the base point".into()));
    }
    let errors = exec.map_range(theta.len(), |i| {
        let mut local = theta.to_vec();
        central_difference(&mut local, i, eps, &loss).map(|n| relative_error(analytic[i], n))
    });
    Ok(report(errors.into_iter().collect::<Result<Vec<_>>>()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let mut w = [3.0];
        let r = grad_check(&mut w, &[6.0], 1e-5, |t| Ok(t[0] * t[0])).unwrap();
        assert!(r.max_rel_error < 1e-8);
        assert_eq!(w, [3.0]);
    }

    #[test]
    fn detects_a_zeroed_gradient() {
        let theta = [1.0, 2.0, -0.5];
        let f = |t: &[f64]| Ok(t[0] * t[1] + t[2].sin());
        let good = [2.0, 1.0, (-0.5f64).cos()];
        let r = grad_check_with(&theta, &good, 1e-5, Exec::Sequential, f).unwrap();
        assert!(r.max_rel_error < 1e-8);
        let mut bad = good;
        bad[1] = 0.0;
        let r = grad_check_with(&theta, &bad, 1e-5, Exec::Parallel, f).unwrap();
        assert!(r.max_rel_error > 1e-2);
        assert_eq!(r.worst_index, 1);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut w = [0.0];
        assert!(grad_check(&mut w, &[0.0], 1e-5, |_| Ok(f64::NAN)).is_err());
    }
}
