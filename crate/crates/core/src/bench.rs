//! Parameter, memory and latency accounting.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::stats::{mean, std_dev};
use crate::netblocks::{compression_factor, Model, ModelSpec};
use crate::tensor::{Real, Tensor};

pub const BYTES_PER_PARAM: usize = 4;
pub const DEFAULT_BATCH: usize = 64;

/// Monotonic time source.
pub trait Clock: Send {
    fn now(&mut self) -> Duration;
}

/// Wall clock backed by [`Instant`].
#[derive(Debug)]
pub struct MonotonicClock {
    origin: Instant,
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Clock for MonotonicClock {
    fn now(&mut self) -> Duration {
        self.origin.elapsed()
    }
}

/// Trainable parameters × 4 bytes; activations are not counted.
pub fn memory_estimate(spec: &ModelSpec) -> usize {
    spec.param_count() * BYTES_PER_PARAM
}

/// Kilobytes of 1024 bytes.
pub fn memory_kb(bytes: usize) -> f64 {
    bytes as f64 / 1024.0
}

pub fn host_descriptor() -> String {
    let cpus = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    format!(
        "{}-{}-{cpus}cpu",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean_s: f64,
    pub std_s: f64,
    pub samples: Vec<f64>,
    pub host: String,
}

/// Runs `warmup` untimed forward passes, then `measured` timed ones, on a
/// single worker thread.
pub fn time_inference<T: Real>(
    model: &Model<T>,
    batch: &Tensor<T>,
    warmup: usize,
    measured: usize,
    clock: &mut impl Clock,
) -> Result<Timing> {
    if warmup < 1 || measured < 5 {
        return Err(Error::invalid(
            "timing needs at least 1 warmup and 5 measured iterations",
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| {
        for _ in 0..warmup {
            std::hint::black_box(model.infer(batch)?);
        }
        let mut samples = Vec::with_capacity(measured);
        for _ in 0..measured {
            let start = clock.now();
            std::hint::black_box(model.infer(batch)?);
            samples.push((clock.now() - start).as_secs_f64());
        }
        Ok(Timing {
            mean_s: mean(&samples),
            std_s: std_dev(&samples),
            samples,
            host: host_descriptor(),
        })
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model_id: String,
    pub param_count: usize,
    pub est_memory_bytes: usize,
    pub compression_factor: f64,
    pub mean_batch_latency_s: f64,
    pub latency_std: f64,
    /// Reference latency divided by this model's latency.
    pub speedup_vs_reference: f64,
}

/// Builds one report per model against `reference` (usually the teacher,
/// which is also expected as the first entry so its speedup is 1).
pub fn bench_reports(
    reference: (&ModelSpec, &Timing),
    models: &[(&ModelSpec, &Timing)],
) -> Result<Vec<BenchReport>> {
    let (ref_spec, ref_timing) = reference;
    models
        .iter()
        .map(|(spec, timing)| {
            if !(timing.mean_s > 0.0) {
                return Err(Error::invalid(format!(
                    "{} has non-positive latency",
                    spec.name
                )));
            }
            Ok(BenchReport {
                model_id: spec.name.clone(),
                param_count: spec.param_count(),
                est_memory_bytes: memory_estimate(spec),
                compression_factor: compression_factor(ref_spec.param_count(), spec.param_count())?,
                mean_batch_latency_s: timing.mean_s,
                latency_std: timing.std_s,
                speedup_vs_reference: ref_timing.mean_s / timing.mean_s,
            })
        })
        .collect()
}
