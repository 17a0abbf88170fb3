//! Training objectives: hard-label cross-entropy, temperature-scaled KL
//! distillation, attention maps and attention transfer, and their weighted
//! composition.
//!
//! Each loss has a `*_grad` companion returning the gradient of the scalar
//! loss with respect to its first argument.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{log_softmax_with_temperature, softmax_with_temperature};
use crate::tensor::{Real, Tensor};

/// Hyperparameters of the combined objective and its optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Weight on the distillation term; `1 - alpha` goes to cross-entropy.
    pub alpha: f64,
    pub temperature: f64,
    /// Weight on the attention-transfer term.
    pub gamma: f64,
    /// Probability of blending an attribution overlay into a training image.
    pub overlay_p: f64,
    /// Exponent applied to activation magnitudes in attention maps.
    pub attention_power: u32,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self::tuned()
    }
}

impl HyperParams {
    /// Best values found by the grid search on the 4.12× student.
    pub fn tuned() -> Self {
        Self {
            alpha: 0.01,
            temperature: 2.5,
            gamma: 0.8,
            overlay_p: 0.1,
            attention_power: 2,
            lr: 1e-3,
            epochs: 100,
            batch_size: 64,
        }
    }

    /// Starting point before tuning.
    pub fn untuned() -> Self {
        Self {
            alpha: 0.5,
            temperature: 2.0,
            gamma: 0.5,
            overlay_p: 0.5,
            ..Self::tuned()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("alpha", self.alpha)?;
        unit("gamma", self.gamma)?;
        unit("overlay_p", self.overlay_p)?;
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.attention_power == 0 {
            return Err(Error::Config("attention_power must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub kl: f64,
    pub at: f64,
    pub total: f64,
}

fn check_labels<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(usize, usize)> {
    logits.expect_rank("cross_entropy", 2)?;
    let (n, k) = (logits.dim(0), logits.dim(1));
    if labels.len() != n {
        return Err(Error::shape(
            "cross_entropy",
            logits.shape(),
            &[labels.len()],
        ));
    }
    if n == 0 {
        return Err(Error::invalid("cross_entropy on an empty batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    Ok((n, k))
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let (n, k) = check_labels(logits, labels)?;
    let logp = log_softmax_with_temperature(logits, 1.0)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -logp.data()[i * k + l].to_f64())
        .sum();
    Ok(total / n as f64)
}

/// `(softmax(logits) - onehot) / N`
pub fn cross_entropy_grad<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let (n, k) = check_labels(logits, labels)?;
    let mut g = softmax_with_temperature(logits, 1.0)?;
    let inv_n = T::from_f64(1.0 / n as f64);
    for (i, &l) in labels.iter().enumerate() {
        g.data_mut()[i * k + l] -= T::one();
    }
    g.data_mut().iter_mut().for_each(|v| *v *= inv_n);
    Ok(g)
}

fn check_pair<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<usize> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    if a.rank() < 1 || a.dim(0) == 0 {
        return Err(Error::invalid(format!("{op} on an empty batch")));
    }
    Ok(a.dim(0))
}

/// `KL(softmax(z_t/T) ‖ softmax(z_s/T)) · T² / N`, summed over classes.
pub fn kd_loss<T: Real>(student: &Tensor<T>, teacher: &Tensor<T>, temperature: f64) -> Result<f64> {
    let n = check_pair("kd_loss", student, teacher)?;
    let log_ps = log_softmax_with_temperature(student, temperature)?;
    let log_pt = log_softmax_with_temperature(teacher, temperature)?;
    let mut total = 0.0;
    for (&ls, &lt) in log_ps.data().iter().zip(log_pt.data()) {
        let (ls, lt) = (ls.to_f64(), lt.to_f64());
        let pt = lt.exp();
        if pt > 0.0 {
            total += pt * (lt - ls);
        }
    }
    Ok(total * temperature * temperature / n as f64)
}

/// Gradient of [`kd_loss`] with respect to the student logits:
/// `T · (p_s - p_t) / N`.
pub fn kd_loss_grad<T: Real>(
    student: &Tensor<T>,
    teacher: &Tensor<T>,
    temperature: f64,
) -> Result<Tensor<T>> {
    let n = check_pair("kd_loss", student, teacher)?;
    let ps = softmax_with_temperature(student, temperature)?;
    let pt = softmax_with_temperature(teacher, temperature)?;
    let scale = T::from_f64(temperature / n as f64);
    ps.zip_map(&pt, |s, t| (s - t) * scale)
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{name} must lie in [0, 1], got {v}"
        )))
    }
}

/// `(1 - alpha) · ce + alpha · kl`
pub fn combine_kd(ce: f64, kl: f64, alpha: f64) -> Result<f64> {
    check_unit("alpha", alpha)?;
    Ok((1.0 - alpha) * ce + alpha * kl)
}

/// `(1 - alpha) · ce + alpha · kl + gamma · at`
pub fn total_loss(ce: f64, kl: f64, at: f64, alpha: f64, gamma: f64) -> Result<LossBreakdown> {
    check_unit("gamma", gamma)?;
    let total = combine_kd(ce, kl, alpha)? + gamma * at;
    Ok(LossBreakdown { ce, kl, at, total })
}

fn check_activation<T: Real>(activation: &Tensor<T>, power: u32) -> Result<(usize, usize, usize)> {
    activation.expect_rank("attention_map", 4)?;
    if power == 0 {
        return Err(Error::invalid("attention power must be at least 1"));
    }
    Ok((
        activation.dim(0),
        activation.dim(1),
        activation.dim(2) * activation.dim(3),
    ))
}

fn channel_mean_power<T: Real>(activation: &Tensor<T>, power: u32) -> Result<Tensor<T>> {
    let (n, c, plane) = check_activation(activation, power)?;
    let inv_c = T::one() / T::from_usize(c.max(1));
    let mut q = Tensor::zeros(vec![n, activation.dim(2), activation.dim(3)]);
    for b in 0..n {
        let img = activation.outer(b);
        let out = q.outer_mut(b);
        for ch in 0..c {
            for (o, &a) in out.iter_mut().zip(&img[ch * plane..(ch + 1) * plane]) {
                *o += a.abs().powi(power as i32);
            }
        }
        out.iter_mut().for_each(|v| *v *= inv_c);
    }
    Ok(q)
}

/// Per image: channel mean of `|a|^power`, then L2-normalized over pixels.
/// An all-zero activation maps to an all-zero map.
pub fn attention_map<T: Real>(activation: &Tensor<T>, power: u32) -> Result<Tensor<T>> {
    let mut q = channel_mean_power(activation, power)?;
    for b in 0..q.dim(0) {
        let row = q.outer_mut(b);
        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm > T::zero() {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(q)
}

/// Backpropagates a gradient on the attention map to the activation.
pub fn attention_map_grad<T: Real>(
    activation: &Tensor<T>,
    power: u32,
    grad_map: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, plane) = check_activation(activation, power)?;
    let q = channel_mean_power(activation, power)?;
    grad_map.expect_shape("attention_map backward", q.shape())?;
    let p = T::from_usize(power as usize);
    let inv_c = T::one() / T::from_usize(c.max(1));
    let mut out = Tensor::zeros(activation.shape().to_vec());
    for b in 0..n {
        let qb = q.outer(b);
        let norm = qb.iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm == T::zero() {
            continue;
        }
        let gm = grad_map.outer(b);
        // d(q/|q|) = (I - â âᵀ) / |q|
        let a_dot_g: T = qb.iter().zip(gm).map(|(&v, &g)| v * g).sum::<T>() / norm;
        let gq: Vec<T> = qb
            .iter()
            .zip(gm)
            .map(|(&v, &g)| (g - v / norm * a_dot_g) / norm)
            .collect();
        let img = activation.outer(b);
        let dst = out.outer_mut(b);
        for ch in 0..c {
            let range = ch * plane..(ch + 1) * plane;
            for ((d, &a), &g) in dst[range.clone()].iter_mut().zip(&img[range]).zip(&gq) {
                let dpow = if power == 1 {
                    a.signum()
                } else {
                    p * a.abs().powi(power as i32 - 1) * a.signum()
                };
                *d = g * inv_c * if a == T::zero() { T::zero() } else { dpow };
            }
        }
    }
    Ok(out)
}

/// Mean over the batch of the per-image squared L2 distance between maps.
pub fn at_loss<T: Real>(student: &Tensor<T>, teacher: &Tensor<T>) -> Result<f64> {
    let n = check_pair("at_loss", student, teacher)?;
    let sq: f64 = student
        .data()
        .iter()
        .zip(teacher.data())
        .map(|(&s, &t)| {
            let d = (s - t).to_f64();
            d * d
        })
        .sum();
    Ok(sq / n as f64)
}

pub fn at_loss_grad<T: Real>(student: &Tensor<T>, teacher: &Tensor<T>) -> Result<Tensor<T>> {
    let n = check_pair("at_loss", student, teacher)?;
    let scale = T::from_f64(2.0 / n as f64);
    student.zip_map(teacher, |s, t| (s - t) * scale)
}
