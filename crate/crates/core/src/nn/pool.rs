use crate::error::Result;
use crate::tensor::{Real, Tensor};

/// Adaptive average pooling to 1×1, flattened: `N×C×H×W → N×C`.
pub fn global_avg_pool_forward<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    input.expect_rank("global_avg_pool", 4)?;
    let (n, c, plane) = (input.dim(0), input.dim(1), input.dim(2) * input.dim(3));
    let inv = T::one() / T::from_usize(plane.max(1));
    let data = input
        .data()
        .chunks(plane.max(1))
        .take(n * c)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::new(vec![n, c], data)
}

pub fn global_avg_pool_backward<T: Real>(
    input_shape: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, plane) = (
        input_shape[0],
        input_shape[1],
        input_shape[2] * input_shape[3],
    );
    grad_out.expect_shape("global_avg_pool backward", &[n, c])?;
    let inv = T::one() / T::from_usize(plane.max(1));
    let data = grad_out
        .data()
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g * inv, plane))
        .collect();
    Tensor::new(input_shape.to_vec(), data)
}
