use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::netblocks::Model;
use crate::tensor::{Real, Tensor};

/// Index of the largest value; the first one on ties.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode logits for `images` in slices of `chunk`.
pub fn batched_infer<T: Real>(
    model: &Model<T>,
    images: &Tensor<T>,
    chunk: usize,
) -> Result<Tensor<T>> {
    images.expect_rank("batched_infer", 4)?;
    let n = images.dim(0);
    let k = model.num_classes();
    let mut out = Vec::with_capacity(n * k);
    let indices: Vec<usize> = (0..n).collect();
    for part in indices.chunks(chunk.max(1)) {
        out.extend_from_slice(model.infer(&images.select(part)?)?.data());
    }
    Tensor::new(vec![n, k], out)
}

pub fn predictions<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    (0..logits.dim(0))
        .map(|i| argmax(logits.outer(i)))
        .collect()
}

/// Fraction of `dataset` classified correctly.
pub fn accuracy(model: &Model<f32>, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Data("accuracy of an empty dataset".into()));
    }
    let preds = predictions(&batched_infer(model, &dataset.images, 256)?);
    let hits = preds
        .iter()
        .zip(&dataset.labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / dataset.len() as f64)
}

/// Mean per-class recall over the classes present in `labels`.
pub fn balanced_accuracy(preds: &[usize], labels: &[usize], num_classes: usize) -> f64 {
    let mut hit = vec![0usize; num_classes];
    let mut total = vec![0usize; num_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        total[l] += 1;
        if p == l {
            hit[l] += 1;
        }
    }
    let recalls: Vec<f64> = hit
        .iter()
        .zip(&total)
        .filter(|(_, &t)| t > 0)
        .map(|(&h, &t)| h as f64 / t as f64)
        .collect();
    recalls.iter().sum::<f64>() / recalls.len().max(1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilteredEval {
    pub total: usize,
    pub kept: usize,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
}

/// Scores `model` only on the images `teacher` classifies correctly.
pub fn filtered_eval(
    model: &Model<f32>,
    dataset: &Dataset,
    teacher: &Model<f32>,
) -> Result<FilteredEval> {
    if model.input_shape() != teacher.input_shape() {
        return Err(Error::shape(
            "filtered_eval",
            &model.input_shape(),
            &teacher.input_shape(),
        ));
    }
    let teacher_preds = predictions(&batched_infer(teacher, &dataset.images, 256)?);
    let keep: Vec<usize> = (0..dataset.len())
        .filter(|&i| teacher_preds[i] == dataset.labels[i])
        .collect();
    if keep.is_empty() {
        return Err(Error::Data(
            "the teacher classifies no image correctly; filtered set is empty".into(),
        ));
    }
    let subset = dataset.subset(&keep)?;
    let preds = predictions(&batched_infer(model, &subset.images, 256)?);
    let hits = preds
        .iter()
        .zip(&subset.labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(FilteredEval {
        total: dataset.len(),
        kept: keep.len(),
        accuracy: hits as f64 / keep.len() as f64,
        balanced_accuracy: balanced_accuracy(&preds, &subset.labels, dataset.num_classes),
    })
}
