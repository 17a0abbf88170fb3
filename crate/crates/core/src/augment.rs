//! Attribution-overlay augmentation: power-scale a stored map by a
//! log-uniform exponent, min-max normalize it, and with probability
//! `overlay_p` blend it into the image.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ig::IgStore;
use crate::seed::rng_for;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub overlay_p: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Weights on (image, map); must sum to 1.
    pub blend: (f64, f64),
    pub rng_seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            overlay_p: 0.1,
            scale_min: 1.0,
            scale_max: 2.0,
            blend: (0.5, 0.5),
            rng_seed: 0,
        }
    }
}

impl AugmentPolicy {
    pub fn with_p(overlay_p: f64, rng_seed: u64) -> Self {
        Self {
            overlay_p,
            rng_seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.overlay_p) {
            return Err(Error::Config(format!(
                "overlay_p must lie in [0, 1], got {}",
                self.overlay_p
            )));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max && self.scale_max.is_finite())
        {
            return Err(Error::Config(format!(
                "scale range [{}, {}] must be positive and ordered",
                self.scale_min, self.scale_max
            )));
        }
        let (a, b) = self.blend;
        if a < 0.0 || b < 0.0 || (a + b - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "blend weights ({a}, {b}) must be nonnegative and sum to 1"
            )));
        }
        Ok(())
    }
}

/// `exp(U[ln scale_min, ln scale_max])`
pub fn sample_scale(rng: &mut impl Rng, policy: &AugmentPolicy) -> f64 {
    let (lo, hi) = (policy.scale_min.ln(), policy.scale_max.ln());
    if lo >= hi {
        return policy.scale_min;
    }
    rng.gen_range(lo..=hi).exp()
}

/// Elementwise `ig^s` of a nonnegative map.
pub fn scale_map<T: Real>(ig: &Tensor<T>, s: f64) -> Result<Tensor<T>> {
    if let Some(v) = ig.data().iter().find(|&&v| !(v >= T::zero())) {
        return Err(Error::invalid(format!(
            "scale_map needs a nonnegative aggregated map, found {v}"
        )));
    }
    let s = T::from_f64(s);
    Ok(ig.map(|v| v.powf(s)))
}

/// Min-max normalization to `[0, 1]`; a constant map becomes all zeros.
pub fn normalize_map<T: Real>(v: &Tensor<T>) -> Tensor<T> {
    let (lo, hi) = v
        .data()
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if !(hi > lo) {
        return Tensor::zeros(v.shape().to_vec());
    }
    let range = hi - lo;
    v.map(|x| (x - lo) / range)
}

/// With probability `overlay_p`, `a·x + b·ig_hat` (map repeated over
/// channels); otherwise `x`. Consumes exactly one draw from `rng`.
pub fn overlay<T: Real>(
    x: &Tensor<T>,
    ig_hat: &Tensor<T>,
    rng: &mut impl Rng,
    policy: &AugmentPolicy,
) -> Result<Tensor<T>> {
    x.expect_rank("overlay", 3)?;
    ig_hat.expect_shape("overlay", &x.shape()[1..])?;
    if let Some(v) = x
        .data()
        .iter()
        .find(|&&v| !(v >= T::zero() && v <= T::one()))
    {
        return Err(Error::invalid(format!(
            "overlay input pixel {v} outside [0, 1]"
        )));
    }
    let draw: f64 = rng.gen();
    if draw >= policy.overlay_p {
        return Ok(x.clone());
    }
    let (a, b) = (T::from_f64(policy.blend.0), T::from_f64(policy.blend.1));
    let plane = ig_hat.len();
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        // clamp guards the last ulp of rounding in the blend
        *v = (a * *v + b * ig_hat.data()[i % plane])
            .max(T::zero())
            .min(T::one());
    }
    Ok(out)
}

/// Full pipeline for one image with its own RNG stream.
pub fn augment_image(
    x: &Tensor<f32>,
    ig: &Tensor<f32>,
    rng: &mut impl Rng,
    policy: &AugmentPolicy,
) -> Result<Tensor<f32>> {
    let s = sample_scale(rng, policy);
    let ig_hat = normalize_map(&scale_map(ig, s)?);
    overlay(x, &ig_hat, rng, policy)
}

/// Augments `images` (rows drawn from dataset positions `indices`). Each image
/// uses the stream `(policy.rng_seed, epoch, index)`, so the result does not
/// depend on batch composition or thread count. Excluded maps pass through.
pub fn augment_batch(
    images: &Tensor<f32>,
    indices: &[usize],
    store: &IgStore,
    policy: &AugmentPolicy,
    epoch: usize,
) -> Result<Tensor<f32>> {
    images.expect_rank("augment_batch", 4)?;
    if images.dim(0) != indices.len() {
        return Err(Error::shape(
            "augment_batch",
            images.shape(),
            &[indices.len()],
        ));
    }
    if (images.dim(2), images.dim(3)) != (store.height, store.width) {
        return Err(Error::shape(
            "augment_batch",
            &images.shape()[2..],
            &[store.height, store.width],
        ));
    }
    if policy.overlay_p == 0.0 {
        return Ok(images.clone());
    }
    let img_shape = images.shape()[1..].to_vec();
    let rows: Vec<Vec<f32>> = indices
        .par_iter()
        .enumerate()
        .map(|(row, &idx)| -> Result<Vec<f32>> {
            let map = store.map(idx)?;
            let x = Tensor::new(img_shape.clone(), images.outer(row).to_vec())?;
            if store.is_excluded(idx) {
                return Ok(x.into_data());
            }
            let ig = Tensor::new(vec![store.height, store.width], map.to_vec())?;
            let mut rng = rng_for(policy.rng_seed, &[epoch as u64, idx as u64]);
            Ok(augment_image(&x, &ig, &mut rng, policy)?.into_data())
        })
        .collect::<Result<_>>()?;
    Tensor::new(images.shape().to_vec(), rows.concat())
}
