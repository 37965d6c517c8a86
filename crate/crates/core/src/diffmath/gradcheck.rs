//! Central finite differences, used to check analytic gradients.

use super::Tensor;

pub const STEP: f64 = 1e-5;

/// Numerical gradient of a scalar function at `x`.
pub fn central_difference(x: &Tensor, step: f64, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = x.data()[i];
            probe.data_mut()[i] = orig + step;
            let hi = f(&probe);
            probe.data_mut()[i] = orig - step;
            let lo = f(&probe);
            probe.data_mut()[i] = orig;
            (hi - lo) / (2.0 * step)
        })
        .collect()
}

/// Numerical partial derivatives at selected coordinates only.
pub fn central_difference_at(
    x: &Tensor,
    coords: &[usize],
    step: f64,
    mut f: impl FnMut(&Tensor) -> f64,
) -> Vec<f64> {
    let mut probe = x.clone();
    coords
        .iter()
        .map(|&i| {
            let orig = x.data()[i];
            probe.data_mut()[i] = orig + step;
            let hi = f(&probe);
            probe.data_mut()[i] = orig - step;
            let lo = f(&probe);
            probe.data_mut()[i] = orig;
            (hi - lo) / (2.0 * step)
        })
        .collect()
}

/// `||analytic - numeric|| / max(||numeric||, 1e-12)` in the Euclidean norm.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}
