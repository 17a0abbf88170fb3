//! Central finite differences for verifying analytic gradients at float64.

use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|, 1e-8)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Numerical gradient of a scalar function by central differences.
pub fn finite_difference(
    mut f: impl FnMut(&Tensor<f64>) -> f64,
    x: &Tensor<f64>,
    step: f64,
) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape().to_vec());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe);
        probe.data_mut()[i] = orig - step;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * step);
    }
    grad
}

/// Largest element-wise [`relative_error`] between two gradients.
pub fn max_relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Nudges every entry at least `margin` away from the ReLU6 kinks at 0 and 6.
pub fn avoid_relu6_kinks(x: &mut Tensor<f64>, margin: f64) {
    for v in x.data_mut() {
        for kink in [0.0, 6.0] {
            if (*v - kink).abs() < margin {
                *v = if *v >= kink {
                    kink + margin
                } else {
                    kink - margin
                };
            }
        }
    }
}
