//! Per-channel batch normalization over NCHW activations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::tensor::{Real, Tensor};

pub const BN_EPS: f64 = 1e-5;
/// Weight kept on the old running statistic at each training step.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T: Real> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(vec![channels]),
            var: Tensor::ones(vec![channels]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        Self {
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }
}

/// What the backward pass needs from a forward call.
#[derive(Clone, Debug)]
pub struct BnCache<T: Real> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

fn check<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &RunningStats<T>,
) -> Result<usize> {
    input.expect_rank("batchnorm", 4)?;
    let c = input.dim(1);
    for t in [gamma, beta, &stats.mean, &stats.var] {
        if t.shape() != [c] {
            return Err(Error::shape("batchnorm", input.shape(), t.shape()));
        }
    }
    Ok(c)
}

pub fn batchnorm_forward<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut RunningStats<T>,
    mode: Mode,
    cfg: BnConfig,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let c = check(input, gamma, beta, stats)?;
    let (n, plane) = (input.dim(0), input.dim(2) * input.dim(3));
    let count = n * plane;
    let eps = T::from_f64(cfg.eps);
    let x = input.data();
    // contiguous run of channel `ch` in image `b`
    let span = |b: usize, ch: usize| (b * c + ch) * plane..(b * c + ch + 1) * plane;

    let mut out = vec![T::zero(); input.len()];
    let mut normalized = vec![T::zero(); input.len()];
    let mut inv_std = Vec::with_capacity(c);
    for ch in 0..c {
        let (mean, var) = match mode {
            Mode::Train => {
                if count == 0 {
                    return Err(Error::invalid("batchnorm: empty batch in train mode"));
                }
                let m = (0..n)
                    .map(|b| x[span(b, ch)].iter().copied().sum::<T>())
                    .sum::<T>()
                    / T::from_usize(count);
                let v = (0..n)
                    .map(|b| {
                        x[span(b, ch)]
                            .iter()
                            .map(|&xi| (xi - m) * (xi - m))
                            .sum::<T>()
                    })
                    .sum::<T>()
                    / T::from_usize(count);
                let mom = T::from_f64(cfg.momentum);
                let unbiased = if count > 1 {
                    v * T::from_usize(count) / T::from_usize(count - 1)
                } else {
                    v
                };
                let rm = &mut stats.mean.data_mut()[ch];
                *rm = mom * *rm + (T::one() - mom) * m;
                let rv = &mut stats.var.data_mut()[ch];
                *rv = mom * *rv + (T::one() - mom) * unbiased;
                (m, v)
            }
            Mode::Eval => (stats.mean.data()[ch], stats.var.data()[ch]),
        };
        let is = T::one() / (var + eps).sqrt();
        inv_std.push(is);
        let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
        for b in 0..n {
            let r = span(b, ch);
            for ((o, nz), &xi) in out[r.clone()]
                .iter_mut()
                .zip(&mut normalized[r.clone()])
                .zip(&x[r])
            {
                let xh = (xi - mean) * is;
                *nz = xh;
                *o = g * xh + bt;
            }
        }
    }
    let shape = input.shape().to_vec();
    Ok((
        Tensor::new(shape.clone(), out)?,
        BnCache {
            normalized: Tensor::new(shape, normalized)?,
            inv_std,
            mode,
        },
    ))
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batchnorm_backward<T: Real>(
    cache: &BnCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    grad_out.expect_shape("batchnorm backward", cache.normalized.shape())?;
    let shape = grad_out.shape();
    let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    let count = T::from_usize(n * plane);
    let mut gx = vec![T::zero(); grad_out.len()];
    let mut ggamma = Tensor::zeros(vec![c]);
    let mut gbeta = Tensor::zeros(vec![c]);
    let go = grad_out.data();
    let xh = cache.normalized.data();
    let span = |b: usize, ch: usize| (b * c + ch) * plane..(b * c + ch + 1) * plane;
    for ch in 0..c {
        let sum_g: T = (0..n)
            .map(|b| go[span(b, ch)].iter().copied().sum::<T>())
            .sum();
        let sum_gx: T = (0..n)
            .map(|b| {
                go[span(b, ch)]
                    .iter()
                    .zip(&xh[span(b, ch)])
                    .map(|(&g, &x)| g * x)
                    .sum::<T>()
            })
            .sum();
        ggamma.data_mut()[ch] = sum_gx;
        gbeta.data_mut()[ch] = sum_g;
        let scale = gamma.data()[ch] * cache.inv_std[ch];
        let (mg, mgx) = match cache.mode {
            Mode::Train => (sum_g / count, sum_gx / count),
            Mode::Eval => (T::zero(), T::zero()),
        };
        for b in 0..n {
            let r = span(b, ch);
            for ((d, &g), &x) in gx[r.clone()].iter_mut().zip(&go[r.clone()]).zip(&xh[r]) {
                *d = match cache.mode {
                    Mode::Train => scale * (g - mg - x * mgx),
                    Mode::Eval => scale * g,
                };
            }
        }
    }
    let gx = Tensor::new(shape.to_vec(), gx)?;
    Ok((gx, ggamma, gbeta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_channel_maps_to_beta() {
        let x = Tensor::<f64>::full(vec![3, 2, 2, 2], 4.2);
        let gamma = Tensor::new(vec![2], vec![1.5, -0.5]).unwrap();
        let beta = Tensor::new(vec![2], vec![0.25, 3.0]).unwrap();
        let mut stats = RunningStats::new(2);
        let (y, _) = batchnorm_forward(
            &x,
            &gamma,
            &beta,
            &mut stats,
            Mode::Train,
            BnConfig::default(),
        )
        .unwrap();
        for (i, v) in y.data().iter().enumerate() {
            let ch = (i / 4) % 2;
            assert!((v - beta.data()[ch]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_sample_batch_is_finite() {
        let x = Tensor::<f64>::full(vec![1, 3, 1, 1], -2.0);
        let mut stats = RunningStats::new(3);
        let (y, _) = batchnorm_forward(
            &x,
            &Tensor::ones(vec![3]),
            &Tensor::zeros(vec![3]),
            &mut stats,
            Mode::Train,
            BnConfig::default(),
        )
        .unwrap();
        assert!(y.all_finite());
    }

    #[test]
    fn standardized_input_is_nearly_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 4096;
        let mut x = Tensor::<f64>::from_fn(vec![n, 2, 1, 1], |_| rng.gen_range(-1.0..1.0));
        // standardize each channel exactly
        for ch in 0..2 {
            let vals: Vec<f64> = (0..n).map(|b| x.data()[b * 2 + ch]).collect();
            let m = vals.iter().sum::<f64>() / n as f64;
            let s = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
            for b in 0..n {
                x.data_mut()[b * 2 + ch] = (vals[b] - m) / s;
            }
        }
        let mut stats = RunningStats::new(2);
        let (y, _) = batchnorm_forward(
            &x,
            &Tensor::ones(vec![2]),
            &Tensor::zeros(vec![2]),
            &mut stats,
            Mode::Train,
            BnConfig::default(),
        )
        .unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn matches_direct_statistics_and_updates_running_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f64>::from_fn(vec![3, 2, 2, 3], |_| rng.gen_range(-2.0..2.0));
        let gamma = Tensor::new(vec![2], vec![0.7, 1.9]).unwrap();
        let beta = Tensor::new(vec![2], vec![-0.1, 0.4]).unwrap();
        let mut stats = RunningStats::new(2);
        let (y, _) = batchnorm_forward(
            &x,
            &gamma,
            &beta,
            &mut stats,
            Mode::Train,
            BnConfig::default(),
        )
        .unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|b| x.data()[(b * 2 + ch) * 6..(b * 2 + ch + 1) * 6].to_vec())
                .collect();
            let m = vals.iter().sum::<f64>() / 18.0;
            let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 18.0;
            for b in 0..3 {
                for p in 0..6 {
                    let i = (b * 2 + ch) * 6 + p;
                    let want =
                        gamma.data()[ch] * (x.data()[i] - m) / (v + 1e-5).sqrt() + beta.data()[ch];
                    assert!((y.data()[i] - want).abs() < 1e-6);
                }
            }
            assert!((stats.mean.data()[ch] - 0.1 * m).abs() < 1e-12);
            assert!((stats.var.data()[ch] - (0.9 + 0.1 * v * 18.0 / 17.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let x = Tensor::<f64>::full(vec![2, 1, 2, 2], 3.0);
        let mut stats = RunningStats {
            mean: Tensor::full(vec![1], 1.0),
            var: Tensor::full(vec![1], 4.0 - 1e-5),
        };
        let (y, _) = batchnorm_forward(
            &x,
            &Tensor::ones(vec![1]),
            &Tensor::zeros(vec![1]),
            &mut stats,
            Mode::Eval,
            BnConfig::default(),
        )
        .unwrap();
        assert!(y.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert_eq!(stats.mean.data(), &[1.0]);
    }

    #[test]
    fn channel_count_mismatch_is_rejected() {
        let x = Tensor::<f64>::zeros(vec![1, 3, 2, 2]);
        let mut stats = RunningStats::new(3);
        let r = batchnorm_forward(
            &x,
            &Tensor::ones(vec![2]),
            &Tensor::zeros(vec![3]),
            &mut stats,
            Mode::Train,
            BnConfig::default(),
        );
        assert!(r.is_err());
    }
}
