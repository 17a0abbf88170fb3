//! Row-wise softmax and log-softmax over `N×K` logits, with temperature.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::invalid(format!(
            "temperature must be positive and finite, got {t}"
        )));
    }
    Ok(())
}

fn rows<T: Real>(op: &'static str, logits: &Tensor<T>) -> Result<(usize, usize)> {
    logits.expect_rank(op, 2)?;
    Ok((logits.dim(0), logits.dim(1)))
}

/// `log softmax(z / T)` per row, computed with max subtraction.
pub fn log_softmax_with_temperature<T: Real>(
    logits: &Tensor<T>,
    temperature: f64,
) -> Result<Tensor<T>> {
    check_temperature(temperature)?;
    let (_, k) = rows("log_softmax", logits)?;
    let inv_t = T::from_f64(1.0 / temperature);
    let mut out = logits.map(|v| v * inv_t);
    for row in out.data_mut().chunks_mut(k.max(1)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    Ok(out)
}

pub fn softmax_with_temperature<T: Real>(
    logits: &Tensor<T>,
    temperature: f64,
) -> Result<Tensor<T>> {
    check_temperature(temperature)?;
    let (_, k) = rows("softmax", logits)?;
    let inv_t = T::from_f64(1.0 / temperature);
    let mut out = logits.map(|v| v * inv_t);
    for row in out.data_mut().chunks_mut(k.max(1)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.iter_mut().for_each(|v| *v = (*v - max).exp());
        let total: T = row.iter().copied().sum();
        row.iter_mut().for_each(|v| *v /= total);
    }
    Ok(out)
}
