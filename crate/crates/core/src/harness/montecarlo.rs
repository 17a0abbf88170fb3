//! Repeated training on random training subsets.

use rand::seq::index::sample;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::harness::train::RunRecord;
use crate::seed::{derive_seed, rng_for};

const SUBSET: u64 = 3;

/// Sorted positions of run `k`'s subset: `⌊fraction·n⌋` distinct indices
/// drawn without replacement from the stream `(master_seed, k)`.
pub fn mc_subset(n: usize, fraction: f64, master_seed: u64, k: usize) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "subsample fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let size = (fraction * n as f64).floor() as usize;
    let mut rng = rng_for(master_seed, &[SUBSET, k as u64]);
    let mut idx = sample(&mut rng, n, size).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Runs `n_runs` independent trainings, run `k` seeing subset `k` and
/// seeded with `derive_seed(master_seed, [k])`.
pub fn monte_carlo<F>(
    train: &Dataset,
    n_runs: usize,
    fraction: f64,
    batch_size: usize,
    master_seed: u64,
    runner: F,
) -> Result<Vec<RunRecord>>
where
    F: Fn(&Dataset, u64) -> Result<RunRecord> + Sync,
{
    if n_runs == 0 {
        return Err(Error::Config("monte carlo needs at least one run".into()));
    }
    let size = (fraction * train.len() as f64).floor() as usize;
    if size < batch_size {
        return Err(Error::Config(format!(
            "a {fraction} subset of {} images has {size} images, fewer than the batch size {batch_size}",
            train.len()
        )));
    }
    (0..n_runs)
        .into_par_iter()
        .map(|k| {
            let subset = train.subset(&mc_subset(train.len(), fraction, master_seed, k)?)?;
            let mut rec = runner(&subset, derive_seed(master_seed, &[k as u64]))?;
            rec.subsample_fraction = fraction;
            Ok(rec)
        })
        .collect()
}
