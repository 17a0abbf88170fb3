//! Summary statistics, paired t-tests and the Lilliefors normality test.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Null-distribution draws used by [`lilliefors`].
pub const LILLIEFORS_SIMULATIONS: usize = 10_000;
pub const LILLIEFORS_SEED: u64 = 0x11ef;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (divisor `n - 1`); zero for fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    /// The differences had zero variance but a nonzero mean; `t` is ±∞ and
    /// `p` is 0.
    pub degenerate: bool,
}

/// Two-sided paired t-test on `a - b`.
///
/// Identical differences with zero mean give `t = 0, p = 1`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::invalid("paired t-test needs at least two pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len();
    let df = n - 1;
    let m = mean(&d);
    let sd = std_dev(&d);
    if sd == 0.0 {
        return Ok(if m == 0.0 {
            TTest {
                t: 0.0,
                p: 1.0,
                df,
                degenerate: false,
            }
        } else {
            TTest {
                t: f64::INFINITY.copysign(m),
                p: 0.0,
                df,
                degenerate: true,
            }
        });
    }
    let t = m / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::invalid(e.to_string()))?;
    let p = (2.0 * dist.cdf(-t.abs())).clamp(0.0, 1.0);
    Ok(TTest {
        t,
        p,
        df,
        degenerate: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lilliefors {
    pub ksstat: f64,
    pub p_value: f64,
    pub variance: f64,
}

/// Kolmogorov–Smirnov distance between the sample and a normal with the
/// sample's own mean and standard deviation.
pub fn ks_normal_stat(samples: &[f64]) -> Result<f64> {
    let sd = std_dev(samples);
    if !(sd > 0.0) {
        return Err(Error::Degenerate("sample variance is zero".into()));
    }
    let normal = Normal::new(mean(samples), sd).map_err(|e| Error::invalid(e.to_string()))?;
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    Ok(v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max))
}

type NullKey = (usize, usize, u64);

fn null_cache() -> &'static Mutex<HashMap<NullKey, Arc<Vec<f64>>>> {
    static CACHE: OnceLock<Mutex<HashMap<NullKey, Arc<Vec<f64>>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Sorted KS statistics of `sims` standard-normal samples of size `n`.
pub fn lilliefors_null(n: usize, sims: usize, seed: u64) -> Arc<Vec<f64>> {
    let key = (n, sims, seed);
    if let Some(hit) = null_cache().lock().expect("cache lock").get(&key) {
        return hit.clone();
    }
    let mut stats: Vec<f64> = (0..sims)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, &[n as u64, i as u64]);
            let xs: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            ks_normal_stat(&xs).unwrap_or(0.0)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let table = Arc::new(stats);
    null_cache()
        .lock()
        .expect("cache lock")
        .insert(key, table.clone());
    table
}

/// Lilliefors test with a Monte Carlo p-value:
/// `(1 + #{null ≥ observed}) / (1 + sims)`.
pub fn lilliefors_with(samples: &[f64], sims: usize, seed: u64) -> Result<Lilliefors> {
    if samples.len() < 4 {
        return Err(Error::invalid(
            "Lilliefors test needs at least four samples",
        ));
    }
    let ksstat = ks_normal_stat(samples)?;
    let null = lilliefors_null(samples.len(), sims, seed);
    let below = null.partition_point(|&s| s < ksstat);
    let at_least = null.len() - below;
    Ok(Lilliefors {
        ksstat,
        p_value: (1 + at_least) as f64 / (1 + null.len()) as f64,
        variance: variance(samples),
    })
}

pub fn lilliefors(samples: &[f64]) -> Result<Lilliefors> {
    lilliefors_with(samples, LILLIEFORS_SIMULATIONS, LILLIEFORS_SEED)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub max: f64,
    pub min: f64,
    pub t_stat: Option<f64>,
    pub p_value: Option<f64>,
    pub ksstat: Option<f64>,
    pub lilliefors_p: Option<f64>,
    pub ci95_halfwidth: f64,
}

/// Statistics of `values`, paired against `baseline` when given. The
/// normality test is skipped for fewer than four values or zero variance.
pub fn summarize(values: &[f64], baseline: Option<&[f64]>) -> Result<StatsSummary> {
    if values.is_empty() {
        return Err(Error::invalid("cannot summarize an empty sample"));
    }
    let std = std_dev(values);
    let test = baseline.map(|b| paired_t_test(values, b)).transpose()?;
    let normality = if values.len() >= 4 && std > 0.0 {
        Some(lilliefors(values)?)
    } else {
        None
    };
    Ok(StatsSummary {
        n: values.len(),
        mean: mean(values),
        median: median(values),
        std,
        max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        min: values.iter().cloned().fold(f64::INFINITY, f64::min),
        t_stat: test.map(|t| t.t),
        p_value: test.map(|t| t.p),
        ksstat: normality.map(|l| l.ksstat),
        lilliefors_p: normality.map(|l| l.p_value),
        ci95_halfwidth: 1.96 * std / (values.len() as f64).sqrt(),
    })
}

/// Share of the teacher–baseline gap recovered, in percent.
pub fn relative_delta_acc(teacher: f64, baseline: f64, distilled: f64) -> Result<f64> {
    if teacher == baseline {
        return Err(Error::Degenerate(
            "teacher and baseline accuracies are equal".into(),
        ));
    }
    Ok(100.0 * (distilled - baseline) / (teacher - baseline))
}
