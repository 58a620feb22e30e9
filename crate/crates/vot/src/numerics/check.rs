//! Finite-difference scaffolding shared by the unit and acceptance tests:
//! central differences with step 1e-5 against a relative tolerance of 1e-4.

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;

/// Central finite differences of a scalar function at `x`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    (0..xs.len())
        .map(|i| {
            let orig = xs[i];
            xs[i] = orig + step;
            let hi = f(&xs);
            xs[i] = orig - step;
            let lo = f(&xs);
            xs[i] = orig;
            (hi - lo) / (2.0 * step)
        })
        .collect()
}

/// max_i |a_i - b_i| / (max(|a_i|, |b_i|) + 1e-6)
pub fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient length mismatch");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / (x.abs().max(y.abs()) + 1e-6))
        .fold(0.0, f64::max)
}
