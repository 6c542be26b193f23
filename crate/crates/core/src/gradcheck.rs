//! Central finite-difference oracle for gradient verification.
//!
//! Evaluates forward passes only, so it stays independent of the tape's
//! backward rules it is used to check. Run in 64-bit mode: 32-bit finite
//! differences are too noisy for the tolerances used here.

/// Central finite-difference gradient of a scalar function at `x`.
///
/// Step per coordinate is `h0 * (1 + |x_i|)`.
pub fn finite_difference<F>(x: &[f64], mut f: F, h0: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = h0 * (1.0 + x[i].abs());
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Worst relative disagreement between two gradient vectors.
///
/// The denominator is floored at 1e-3 so finite-difference noise on
/// near-zero components does not register as a large relative error.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient length mismatch");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y).abs();
            d / x.abs().max(y.abs()).max(1e-3)
        })
        .fold(0.0, f64::max)
}
