use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// Central-difference gradient of a scalar function:
/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every element `i`.
///
/// This uses forward evaluations only, so it serves as an oracle for
/// [`super::Graph::backward`].
pub fn finite_diff_grad<T, F>(mut f: F, x: &Tensor<T>, h: T) -> Result<Tensor<T>>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> Result<T>,
{
    if h <= T::zero() {
        return Err(Error::Contract("finite difference step must be positive".into()));
    }
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.push((up - down) / (h + h));
    }
    Tensor::new(x.shape(), out)
}

/// Floor on the relative-error denominator so that two near-zero gradients
/// are compared absolutely.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_ERROR_FLOOR)
}

pub fn max_relative_error<T: Scalar>(analytic: &[T], numeric: &[T]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(a.as_f64(), n.as_f64()))
        .fold(0.0, f64::max)
}
