//! Central-finite-difference gradient checking.

/// Maximum relative error between an analytic gradient and central finite
/// differences `(f(θ+ε) − f(θ−ε)) / 2ε`, coordinate by coordinate. The
/// relative error denominator is `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(mut f: F, theta: &[f64], analytic: &[f64], eps: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(theta.len(), analytic.len());
    let mut buf = theta.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let orig = buf[i];
        buf[i] = orig + eps;
        let fp = f(&buf);
        buf[i] = orig - eps;
        let fm = f(&buf);
        buf[i] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    worst
}

/// Like [`finite_diff_check`], but evaluates every stencil width in `epss`
/// and scores each coordinate by its best stencil. Central differences trade
/// roundoff (shrinks with larger ε) against truncation (grows with ε), and
/// the optimum depends on the coordinate's own gradient scale; a single ε
/// cannot serve both O(1) and O(1e-8) gradients at once. A wrong analytic
/// gradient still fails at every ε.
pub fn finite_diff_check_sweep<F>(mut f: F, theta: &[f64], analytic: &[f64], epss: &[f64]) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(theta.len(), analytic.len());
    assert!(!epss.is_empty());
    let mut buf = theta.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let a = analytic[i];
        let orig = buf[i];
        let mut best = f64::INFINITY;
        for &eps in epss {
            buf[i] = orig + eps;
            let fp = f(&buf);
            buf[i] = orig - eps;
            let fm = f(&buf);
            let numeric = (fp - fm) / (2.0 * eps);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            best = best.min(err);
        }
        buf[i] = orig;
        worst = worst.max(best);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_at_three() {
        let err = finite_diff_check(|t| t[0] * t[0], &[3.0], &[6.0], 1e-5);
        assert!(err < 1e-9, "error {err}");
    }

    #[test]
    fn sweep_rejects_wrong_gradient_at_every_eps() {
        let err = finite_diff_check_sweep(
            |t| t[0] * t[0],
            &[3.0],
            &[6.3],
            &[1e-6, 1e-5, 1e-4, 1e-3],
        );
        assert!(err > 0.04, "error {err}");
    }

    #[test]
    fn constant_function_zero_error() {
        let err = finite_diff_check(|_| 4.2, &[1.0, 2.0], &[0.0, 0.0], 1e-5);
        assert_eq!(err, 0.0);
    }
}
