//! End-to-end wiring shared by the command-line tool: data loading, teacher
//! training and method-by-method student runs.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, Family};
use crate::data::{load_cifar10_binary, synthetic_splits, Dataset, SyntheticConfig};
use crate::error::{Error, Result};
use crate::harness::stats::{mean, paired_t_test, summarize, TTest};
use crate::harness::teacher::TeacherOutputs;
use crate::harness::train::{train_student_with, RunRecord, Signals, TrainOptions};
use crate::ig::IgStore;
use crate::losses::HyperParams;
use crate::netblocks::{build_student, build_teacher, Model, ModelSpec};
use crate::report::MethodSummary;
use crate::seed::derive_seed;

// stream tag for student initialization
const INIT: u64 = 4;

/// Training and test splits for a data source. Synthetic images take the
/// family's input size.
pub fn load_data(source: &DataSource, family: &Family) -> Result<(Dataset, Dataset)> {
    match source {
        DataSource::Synthetic {
            n_per_class,
            n_test_per_class,
            classes,
            noise,
            seed,
        } => {
            let [_, size, _] = family.width_config().input_shape;
            let cfg = SyntheticConfig {
                n_per_class: *n_per_class,
                classes: *classes,
                size,
                seed: *seed,
                noise: *noise,
            };
            synthetic_splits(&cfg, *n_test_per_class)
        }
        DataSource::Cifar10 { dir } => {
            let splits = load_cifar10_binary(dir)?;
            Ok((splits.train, splits.test))
        }
    }
}

/// Trains a full-depth network of `family` from scratch with cross-entropy.
pub fn train_teacher(
    family: &Family,
    train: &Dataset,
    test: &Dataset,
    hyper: &HyperParams,
    seed: u64,
    options: &TrainOptions,
) -> Result<(Model<f32>, RunRecord)> {
    let width = family.width_config();
    if train.image_shape() != width.input_shape {
        return Err(Error::Config(format!(
            "family {family} expects {:?} images, the data has {:?}",
            width.input_shape,
            train.image_shape()
        )));
    }
    let mut teacher = build_teacher::<f32>(train.num_classes, &width, derive_seed(seed, &[INIT]))?;
    let plain = HyperParams {
        alpha: 0.0,
        gamma: 0.0,
        overlay_p: 0.0,
        ..*hyper
    };
    let mut rec = train_student_with(
        &mut teacher,
        train,
        test,
        Signals::default(),
        &plain,
        seed,
        options,
    )?;
    rec.config_id = "teacher".into();
    Ok((teacher, rec))
}

/// Student training variants compared in the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Baseline,
    Kd,
    KdIg,
    KdAt,
    KdIgAt,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Baseline,
        Method::Kd,
        Method::KdIg,
        Method::KdAt,
        Method::KdIgAt,
    ];

    pub fn uses_teacher(self) -> bool {
        self != Method::Baseline
    }

    pub fn uses_ig(self) -> bool {
        matches!(self, Method::KdIg | Method::KdIgAt)
    }

    pub fn uses_attention(self) -> bool {
        matches!(self, Method::KdAt | Method::KdIgAt)
    }

    /// `base` with the weights of unused terms set to zero.
    pub fn hyper(self, base: &HyperParams) -> HyperParams {
        HyperParams {
            alpha: if self.uses_teacher() { base.alpha } else { 0.0 },
            gamma: if self.uses_attention() {
                base.gamma
            } else {
                0.0
            },
            overlay_p: if self.uses_ig() { base.overlay_p } else { 0.0 },
            ..*base
        }
    }

    pub fn signals<'a>(
        self,
        teacher: Option<&'a TeacherOutputs>,
        ig: Option<&'a IgStore>,
    ) -> Result<Signals<'a>> {
        let teacher = match (self.uses_teacher(), teacher) {
            (true, None) => {
                return Err(Error::Config(format!(
                    "{self} needs precomputed teacher outputs"
                )))
            }
            (true, t) => t,
            (false, _) => None,
        };
        let ig = match (self.uses_ig(), ig) {
            (true, None) => {
                return Err(Error::Config(format!(
                    "{self} needs an attribution map store"
                )))
            }
            (true, s) => s,
            (false, _) => None,
        };
        if self.uses_attention() && teacher.and_then(|t| t.attention.as_ref()).is_none() {
            return Err(Error::Config(format!(
                "{self} needs teacher attention maps"
            )));
        }
        Ok(Signals { teacher, ig })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Baseline => "baseline",
            Method::Kd => "KD",
            Method::KdIg => "KD & IG",
            Method::KdAt => "KD & AT",
            Method::KdIgAt => "KD & IG & AT",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(' ', "").as_str() {
            "baseline" => Ok(Method::Baseline),
            "kd" => Ok(Method::Kd),
            "kd&ig" | "kd+ig" | "kd-ig" => Ok(Method::KdIg),
            "kd&at" | "kd+at" | "kd-at" => Ok(Method::KdAt),
            "kd&ig&at" | "kd+ig+at" | "kd-ig-at" => Ok(Method::KdIgAt),
            _ => Err(Error::Config(format!("unknown method {s:?}"))),
        }
    }
}

/// Everything a student run needs besides its seed.
#[derive(Clone, Copy, Debug)]
pub struct StudentSetup<'a> {
    pub teacher: &'a ModelSpec,
    pub blocks_removed: usize,
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub teacher_outputs: Option<&'a TeacherOutputs>,
    pub ig: Option<&'a IgStore>,
    pub hyper: HyperParams,
    pub options: TrainOptions,
}

impl StudentSetup<'_> {
    /// Trains one student with `method`. The initialization depends only on
    /// `seed`, so methods run with the same seed are paired.
    pub fn run(&self, method: Method, seed: u64) -> Result<(Model<f32>, RunRecord)> {
        let mut student = build_student::<f32>(
            self.teacher,
            self.blocks_removed,
            derive_seed(seed, &[INIT]),
        )?;
        let hyper = method.hyper(&self.hyper);
        let signals = method.signals(self.teacher_outputs, self.ig)?;
        let mut rec = train_student_with(
            &mut student,
            self.train,
            self.test,
            signals,
            &hyper,
            seed,
            &self.options,
        )?;
        rec.config_id = format!("{method}/r{}", self.blocks_removed);
        Ok((student, rec))
    }

    /// `runs` paired seeds per method; returns accuracies and records in
    /// the order of `methods`.
    pub fn compare(
        &self,
        methods: &[Method],
        runs: usize,
        master_seed: u64,
    ) -> Result<Vec<(Method, Vec<RunRecord>)>> {
        let jobs: Vec<(usize, usize)> = (0..methods.len())
            .flat_map(|m| (0..runs).map(move |r| (m, r)))
            .collect();
        let records: Vec<RunRecord> = jobs
            .par_iter()
            .map(|&(m, r)| {
                self.run(methods[m], derive_seed(master_seed, &[r as u64]))
                    .map(|(_, rec)| rec)
            })
            .collect::<Result<_>>()?;
        Ok(methods
            .iter()
            .enumerate()
            .map(|(m, &method)| (method, records[m * runs..(m + 1) * runs].to_vec()))
            .collect())
    }
}

/// Per-method statistics with paired tests against the first method (the
/// baseline) and `delta_acc` relative to its mean.
pub fn summarize_methods(results: &[(Method, Vec<RunRecord>)]) -> Result<Vec<MethodSummary>> {
    let accs: Vec<Vec<f64>> = results
        .iter()
        .map(|(_, recs)| recs.iter().map(|r| r.final_test_accuracy).collect())
        .collect();
    let base = accs
        .first()
        .ok_or_else(|| Error::invalid("no methods to summarize"))?;
    results
        .iter()
        .zip(&accs)
        .enumerate()
        .map(|(i, ((method, _), acc))| {
            let summary = summarize(acc, if i == 0 { None } else { Some(base) })?;
            Ok(MethodSummary {
                method: method.to_string(),
                delta_acc: (i > 0).then(|| summary.mean - mean(base)),
                summary,
            })
        })
        .collect()
}

/// Paired comparison of two methods' accuracies.
pub fn paired(a: &[RunRecord], b: &[RunRecord]) -> Result<TTest> {
    let acc = |r: &[RunRecord]| r.iter().map(|x| x.final_test_accuracy).collect::<Vec<_>>();
    paired_t_test(&acc(a), &acc(b))
}
