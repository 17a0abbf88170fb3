//! Mini-batch Adam training with optional distillation, attention transfer
//! and attribution-overlay augmentation.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_batch, AugmentPolicy};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::harness::eval::accuracy;
use crate::harness::teacher::TeacherOutputs;
use crate::ig::IgStore;
use crate::losses::{
    at_loss, at_loss_grad, attention_map, attention_map_grad, cross_entropy, cross_entropy_grad,
    kd_loss, kd_loss_grad, total_loss, HyperParams, LossBreakdown,
};
use crate::netblocks::Model;
use crate::nn::{adam_step, AdamConfig, AdamState, Mode};
use crate::seed::{derive_seed, rng_for};
use crate::tensor::Tensor;

// stream tags for seed derivation
const SHUFFLE: u64 = 1;
const AUGMENT: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` for epochs skipped by [`TrainOptions::eval_every`].
    pub test_accuracy: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainOptions {
    /// Evaluate on the test set every this many epochs; the last epoch is
    /// always evaluated.
    pub eval_every: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { eval_every: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_id: String,
    pub seed: u64,
    pub subsample_fraction: f64,
    pub epoch_curve: Vec<EpochStats>,
    pub final_test_accuracy: f64,
    pub wall_time_s: f64,
}

/// Precomputed teacher signals and attribution maps, indexed by the source
/// ids of the training set (`Dataset::ids`).
#[derive(Clone, Copy, Debug, Default)]
pub struct Signals<'a> {
    pub teacher: Option<&'a TeacherOutputs>,
    pub ig: Option<&'a IgStore>,
}

/// Teacher targets for one batch.
#[derive(Clone, Debug, Default)]
pub struct BatchTargets {
    pub logits: Option<Tensor<f32>>,
    pub attention: Option<Tensor<f32>>,
}

/// Loss and parameter gradients of one batch. Distillation terms are
/// included only when their weight is nonzero and the targets exist.
pub fn loss_and_grads(
    model: &mut Model<f32>,
    x: &Tensor<f32>,
    labels: &[usize],
    targets: &BatchTargets,
    hyper: &HyperParams,
) -> Result<(LossBreakdown, Vec<Tensor<f32>>)> {
    let use_kd = hyper.alpha > 0.0 && targets.logits.is_some();
    let use_at = hyper.gamma > 0.0 && targets.attention.is_some();
    let alpha = if use_kd { hyper.alpha } else { 0.0 };
    let source = model.spec.attention_source;

    let (logits, act) = if use_at {
        let (l, a) = model.forward_with_tap(x, Mode::Train, source)?;
        (l, Some(a))
    } else {
        (model.forward(x, Mode::Train)?, None)
    };
    let ce = cross_entropy(&logits, labels)?;
    let mut grad = cross_entropy_grad(&logits, labels)?;
    let mut kl = 0.0;
    if use_kd {
        let t = targets.logits.as_ref().expect("checked above");
        kl = kd_loss(&logits, t, hyper.temperature)?;
        grad = grad.scale(1.0 - alpha as f32);
        grad.axpy(alpha as f32, &kd_loss_grad(&logits, t, hyper.temperature)?)?;
    }
    let mut at = 0.0;
    let mut tap_grad = None;
    if let (Some(act), Some(teacher_map)) = (&act, &targets.attention) {
        let map = attention_map(act, hyper.attention_power)?;
        at = at_loss(&map, teacher_map)?;
        let g_map = at_loss_grad(&map, teacher_map)?.scale(hyper.gamma as f32);
        tap_grad = Some(attention_map_grad(act, hyper.attention_power, &g_map)?);
    }
    let breakdown = total_loss(ce, kl, at, alpha, if use_at { hyper.gamma } else { 0.0 })?;
    let grads = model.backward(&grad, tap_grad.as_ref().map(|g| (source, g)))?;
    Ok((breakdown, grads.params))
}

/// One Adam update on a batch; returns the loss before the update.
pub fn train_step(
    model: &mut Model<f32>,
    state: &mut AdamState<f32>,
    x: &Tensor<f32>,
    labels: &[usize],
    targets: &BatchTargets,
    hyper: &HyperParams,
    step_index: usize,
) -> Result<LossBreakdown> {
    let (loss, grads) = loss_and_grads(model, x, labels, targets, hyper)?;
    if grads.iter().any(|g| !g.all_finite()) || !loss.total.is_finite() {
        return Err(Error::NonFiniteGradient { step: step_index });
    }
    let cfg = AdamConfig {
        lr: hyper.lr,
        ..AdamConfig::default()
    };
    adam_step(&mut model.params_mut(), &grads, state, &cfg)?;
    Ok(loss)
}

fn check_signals(
    student: &Model<f32>,
    train: &Dataset,
    signals: &Signals,
    hyper: &HyperParams,
) -> Result<()> {
    let max_id = train.ids.iter().copied().max().unwrap_or(0);
    if let Some(t) = signals.teacher {
        if t.len() <= max_id {
            return Err(Error::Data(format!(
                "teacher outputs cover {} images, training set refers to index {max_id}",
                t.len()
            )));
        }
        if t.logits.dim(1) != student.num_classes() {
            return Err(Error::shape(
                "teacher logits",
                t.logits.shape(),
                &[t.len(), student.num_classes()],
            ));
        }
        if let Some(a) = &t.attention {
            let [_, h, w] = student
                .spec
                .activation_shape(student.spec.attention_source)?;
            if a.shape()[1..] != [h, w] {
                return Err(Error::shape("teacher attention", &a.shape()[1..], &[h, w]));
            }
            if t.header.attention_power != hyper.attention_power {
                return Err(Error::Config(format!(
                    "teacher attention maps use power {}, hyperparameters ask for {}",
                    t.header.attention_power, hyper.attention_power
                )));
            }
        }
    }
    if let Some(ig) = signals.ig {
        if ig.len() <= max_id {
            return Err(Error::Data(format!(
                "attribution store covers {} images, training set refers to index {max_id}",
                ig.len()
            )));
        }
    }
    Ok(())
}

/// Trains `student` in place for `hyper.epochs` epochs and evaluates on
/// `test` after each. Without a teacher the objective is plain
/// cross-entropy; results are a pure function of the inputs and `seed`.
pub fn train_student(
    student: &mut Model<f32>,
    train: &Dataset,
    test: &Dataset,
    signals: Signals,
    hyper: &HyperParams,
    seed: u64,
) -> Result<RunRecord> {
    train_student_with(
        student,
        train,
        test,
        signals,
        hyper,
        seed,
        &TrainOptions::default(),
    )
}

pub fn train_student_with(
    student: &mut Model<f32>,
    train: &Dataset,
    test: &Dataset,
    signals: Signals,
    hyper: &HyperParams,
    seed: u64,
    options: &TrainOptions,
) -> Result<RunRecord> {
    hyper.validate()?;
    if train.len() < 2 {
        return Err(Error::Data("training set needs at least two images".into()));
    }
    check_signals(student, train, &signals, hyper)?;
    let started = Instant::now();
    let mut state = AdamState::for_shapes(student.params().iter().map(|p| p.shape()));
    let policy = AugmentPolicy::with_p(hyper.overlay_p, derive_seed(seed, &[AUGMENT]));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(hyper.epochs);
    let mut step = 0;
    for epoch in 0..hyper.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_for(seed, &[SHUFFLE, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut seen = 0;
        for batch in order.chunks(hyper.batch_size) {
            // batch statistics need at least two samples
            if batch.len() < 2 {
                continue;
            }
            let (mut x, labels) = train.batch(batch)?;
            let ids: Vec<usize> = batch.iter().map(|&i| train.ids[i]).collect();
            if let Some(store) = signals.ig {
                x = augment_batch(&x, &ids, store, &policy, epoch)?;
            }
            let targets = match signals.teacher {
                Some(t) => BatchTargets {
                    logits: Some(t.logits_for(&ids)?),
                    attention: t.attention_for(&ids)?,
                },
                None => BatchTargets::default(),
            };
            let loss = train_step(student, &mut state, &x, &labels, &targets, hyper, step)?;
            loss_sum += loss.total * batch.len() as f64;
            seen += batch.len();
            step += 1;
        }
        let last = epoch + 1 == hyper.epochs;
        let test_accuracy = if last || (epoch + 1) % options.eval_every.max(1) == 0 {
            Some(accuracy(student, test)?)
        } else {
            None
        };
        let train_loss = loss_sum / seen.max(1) as f64;
        log::debug!("epoch {epoch}: loss {train_loss:.4}, test accuracy {test_accuracy:?}");
        curve.push(EpochStats {
            epoch,
            train_loss,
            test_accuracy,
        });
    }
    student.clear_cache();
    let final_test_accuracy = match curve.last().and_then(|e| e.test_accuracy) {
        Some(a) => a,
        None => accuracy(student, test)?,
    };
    Ok(RunRecord {
        config_id: String::new(),
        seed,
        subsample_fraction: 1.0,
        epoch_curve: curve,
        final_test_accuracy,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}
