use crate::error::Result;
use crate::tensor::{Real, Tensor};

pub fn relu6_forward<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let six = T::from_f64(6.0);
    input.map(|v| v.max(T::zero()).min(six))
}

/// Gradient passes only where `0 < x < 6`.
pub fn relu6_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let six = T::from_f64(6.0);
    input.zip_map(grad_out, |x, g| {
        if x > T::zero() && x < six {
            g
        } else {
            T::zero()
        }
    })
}
