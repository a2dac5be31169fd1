//! Central finite differences for gradient verification.
//!
//! The checker re-evaluates a scalar loss function at perturbed points and
//! never touches the tape's backward pass, so it is an independent oracle
//! for reverse-mode gradients.

/// Central-difference gradient of `f` at `point` with step `step`.
pub fn finite_diff_gradient<F>(f: F, point: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut perturbed = point.to_vec();
    let mut grads = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        perturbed[i] = point[i] + step;
        let plus = f(&perturbed);
        perturbed[i] = point[i] - step;
        let minus = f(&perturbed);
        perturbed[i] = point[i];
        grads.push((plus - minus) / (2.0 * step));
    }
    grads
}

/// Worst relative error between two gradient vectors, with an absolute
/// floor so near-zero entries compare on absolute terms.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| {
            let denom = a.abs().max(n.abs()).max(1.0);
            (a - n).abs() / denom
        })
        .fold(0.0, f64::max)
}
