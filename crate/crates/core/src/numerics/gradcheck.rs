use super::Real;

/// `|a - n| / max(1e-6, |a| + |n|)`. The floor keeps round-off on exactly
/// cancelling coordinates from reading as a relative error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Compares `analytic` against central finite differences of `loss` at the
/// listed coordinates of `params` and returns the largest relative error.
/// `params` is restored before returning.
pub fn grad_check<F: Real>(
    mut loss: impl FnMut(&[F]) -> F,
    params: &mut [F],
    analytic: &[F],
    coords: &[usize],
    step: f64,
) -> f64 {
    assert_eq!(params.len(), analytic.len());
    let h = F::lit(step);
    let mut worst = 0.0f64;
    for &i in coords {
        let orig = params[i];
        params[i] = orig + h;
        let plus = loss(params);
        params[i] = orig - h;
        let minus = loss(params);
        params[i] = orig;
        let numeric = (plus - minus).as_f64() / (2.0 * step);
        worst = worst.max(relative_error(analytic[i].as_f64(), numeric));
    }
    worst
}
