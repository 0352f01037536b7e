//! Central finite-difference gradient checking.

/// Entries whose gradients are both below this magnitude are compared absolutely.
pub const REL_FLOOR: f64 = 1e-7;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Central differences of `f` at `x`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            let orig = probe[k];
            probe[k] = orig + step;
            let plus = f(&probe);
            probe[k] = orig - step;
            let minus = f(&probe);
            probe[k] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Largest relative error between an analytic gradient and central differences.
pub fn gradcheck(f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64], step: f64) -> f64 {
    assert_eq!(x.len(), analytic.len(), "gradient length");
    numeric_gradient(f, x, step)
        .iter()
        .zip(analytic)
        .map(|(n, a)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}
