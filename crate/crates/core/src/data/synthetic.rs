//! Seeded synthetic image classes built from parametric patterns.
//!
//! Each class is a pattern family (gradients, bars at several orientations
//! and frequencies, rings, checkers, blobs) with per-image random phase,
//! frequency jitter, colour tint and contrast, plus Gaussian pixel noise.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::tensor::Tensor;

pub const MAX_CLASSES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_per_class: usize,
    pub classes: usize,
    pub size: usize,
    pub seed: u64,
    /// Standard deviation of the additive pixel noise.
    pub noise: f64,
}

impl SyntheticConfig {
    pub fn new(n_per_class: usize, seed: u64) -> Self {
        Self {
            n_per_class,
            classes: MAX_CLASSES,
            size: 32,
            seed,
            noise: 0.15,
        }
    }
}

/// Intensity in roughly `[0, 1]` of class `class` at `(u, v) ∈ [0,1)²`.
fn pattern(class: usize, u: f64, v: f64, p: &Params) -> f64 {
    let wave = |t: f64| 0.5 + 0.5 * (TAU * p.freq * t + p.phase).sin();
    match class {
        0 => u,
        1 => v,
        2 => wave(v),
        3 => wave(u),
        4 => wave((u + v) * 0.5f64.sqrt()),
        5 => wave((u - v) * 0.5f64.sqrt()),
        6 => {
            let r = ((u - p.cx).powi(2) + (v - p.cy).powi(2)).sqrt();
            wave(r)
        }
        7 => {
            let s =
                (TAU * p.freq * 0.5 * u + p.phase).sin() * (TAU * p.freq * 0.5 * v + p.phase).sin();
            if s >= 0.0 {
                1.0
            } else {
                0.0
            }
        }
        8 => {
            let d2 = (u - p.cx).powi(2) + (v - p.cy).powi(2);
            (-d2 / (2.0 * 0.12f64.powi(2))).exp()
        }
        9 => 0.5 + 0.5 * (TAU * 2.0 * p.freq * v + p.phase).sin(),
        _ => unreachable!("class index checked by caller"),
    }
}

struct Params {
    freq: f64,
    phase: f64,
    cx: f64,
    cy: f64,
}

fn render(class: usize, size: usize, noise: f64, rng: &mut impl Rng) -> Vec<f32> {
    let p = Params {
        freq: rng.gen_range(2.0..3.5),
        phase: rng.gen_range(0.0..TAU),
        cx: rng.gen_range(0.25..0.75),
        cy: rng.gen_range(0.25..0.75),
    };
    let contrast = rng.gen_range(0.5..1.0);
    let offset = rng.gen_range(0.0..1.0 - contrast);
    let tint: [f64; 3] = [
        rng.gen_range(0.6..1.0),
        rng.gen_range(0.6..1.0),
        rng.gen_range(0.6..1.0),
    ];
    let flip = class <= 1 && rng.gen_bool(0.5);
    let gauss = Normal::new(0.0, noise.max(0.0)).expect("finite noise level");
    let plane = size * size;
    let mut out = vec![0f32; 3 * plane];
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (
                (x as f64 + 0.5) / size as f64,
                (y as f64 + 0.5) / size as f64,
            );
            let mut base = pattern(class, u, v, &p);
            if flip {
                base = 1.0 - base;
            }
            let base = offset + contrast * base;
            for (c, t) in tint.iter().enumerate() {
                let n = if noise > 0.0 { gauss.sample(rng) } else { 0.0 };
                out[c * plane + y * size + x] = (base * t + n).clamp(0.0, 1.0) as f32;
            }
        }
    }
    out
}

/// `n_per_class` images of each class, interleaved by class
/// (`label(i) = i mod classes`).
pub fn generate_synthetic(config: &SyntheticConfig, split: Split) -> Result<Dataset> {
    if config.n_per_class == 0 {
        return Err(Error::invalid("n_per_class must be at least 1"));
    }
    if config.classes == 0 || config.classes > MAX_CLASSES {
        return Err(Error::invalid(format!(
            "classes must be in 1..={MAX_CLASSES}"
        )));
    }
    if config.size < 4 {
        return Err(Error::invalid("image size must be at least 4"));
    }
    let n = config.n_per_class * config.classes;
    let stream = match split {
        Split::Train => 0,
        Split::Test => 1,
    };
    let images: Vec<Vec<f32>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(config.seed, &[stream, i as u64]);
            render(i % config.classes, config.size, config.noise, &mut rng)
        })
        .collect();
    let labels = (0..n).map(|i| i % config.classes).collect();
    let images = Tensor::new(vec![n, 3, config.size, config.size], images.concat())?;
    Dataset::new(images, labels, config.classes, split)
}

/// Train and test sets from independent streams of the same seed.
pub fn synthetic_splits(
    config: &SyntheticConfig,
    n_test_per_class: usize,
) -> Result<(Dataset, Dataset)> {
    let train = generate_synthetic(config, Split::Train)?;
    let test = generate_synthetic(
        &SyntheticConfig {
            n_per_class: n_test_per_class,
            ..*config
        },
        Split::Test,
    )?;
    Ok((train, test))
}
