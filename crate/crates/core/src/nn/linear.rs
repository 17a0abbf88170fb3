use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// `input (N×D) · weight (D×K) + bias (K)`.
pub fn dense_forward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    input.expect_rank("dense", 2)?;
    weight.expect_rank("dense", 2)?;
    let (n, d) = (input.dim(0), input.dim(1));
    let k = weight.dim(1);
    if weight.dim(0) != d {
        return Err(Error::shape("dense", input.shape(), weight.shape()));
    }
    if bias.shape() != [k] {
        return Err(Error::shape("dense", weight.shape(), bias.shape()));
    }
    let mut out = Vec::with_capacity(n * k);
    for row in input.data().chunks(d.max(1)).take(n) {
        let mut acc = bias.data().to_vec();
        for (i, &x) in row.iter().enumerate() {
            for (a, &w) in acc.iter_mut().zip(&weight.data()[i * k..(i + 1) * k]) {
                *a += x * w;
            }
        }
        out.extend(acc);
    }
    if d == 0 {
        out = (0..n).flat_map(|_| bias.data().to_vec()).collect();
    }
    Tensor::new(vec![n, k], out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn dense_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, d, k) = (input.dim(0), input.dim(1), weight.dim(1));
    grad_out.expect_shape("dense backward", &[n, k])?;
    let mut gx = Tensor::zeros(vec![n, d]);
    let mut gw = Tensor::zeros(vec![d, k]);
    let mut gb = Tensor::zeros(vec![k]);
    for b in 0..n {
        let go = grad_out.outer(b);
        for (a, &g) in gb.data_mut().iter_mut().zip(go) {
            *a += g;
        }
        let x = input.outer(b);
        for i in 0..d {
            let wrow = &weight.data()[i * k..(i + 1) * k];
            gx.data_mut()[b * d + i] = wrow.iter().zip(go).map(|(&w, &g)| w * g).sum();
            let xv = x[i];
            for (a, &g) in gw.data_mut()[i * k..(i + 1) * k].iter_mut().zip(go) {
                *a += xv * g;
            }
        }
    }
    Ok((gx, gw, gb))
}
