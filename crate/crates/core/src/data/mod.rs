//! Labelled image sets: CIFAR-10 binary ingestion and a seeded synthetic
//! generator.

pub mod cifar;
pub mod synthetic;

use serde::{Deserialize, Serialize};

use crate::codec::sha256_hex;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use cifar::{load_cifar10_binary, parse_cifar_records, CifarSplits};
pub use synthetic::{generate_synthetic, synthetic_splits, SyntheticConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

/// `N×C×H×W` images with pixels in `[0, 1]` and integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
    /// Position of each image in the source it was loaded from.
    pub ids: Vec<usize>,
}

impl Dataset {
    pub fn new(
        images: Tensor<f32>,
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        images.expect_rank("dataset images", 4)?;
        if images.dim(0) != labels.len() {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                images.dim(0),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if let Some(v) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("pixel value {v} outside [0, 1]")));
        }
        let ids = (0..labels.len()).collect();
        Ok(Self {
            images,
            labels,
            num_classes,
            split,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `C×H×W`
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn image(&self, i: usize) -> &[f32] {
        self.images.outer(i)
    }

    /// Images and labels at `indices`, in that order, keeping source ids.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self {
            images: self.images.select(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            split: self.split,
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
        })
    }

    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        Ok((
            self.images.select(indices)?,
            indices.iter().map(|&i| self.labels[i]).collect(),
        ))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// SHA-256 over the shape, pixel bytes and labels.
    pub fn checksum(&self) -> String {
        let mut bytes = Vec::with_capacity(self.images.len() * 4 + self.len() * 4 + 32);
        for &d in self.images.shape() {
            bytes.extend_from_slice(&(d as u64).to_le_bytes());
        }
        bytes.extend_from_slice(&self.images.to_le_bytes());
        for &l in &self.labels {
            bytes.extend_from_slice(&(l as u32).to_le_bytes());
        }
        sha256_hex(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_validates_ranges() {
        let img = Tensor::full(vec![2, 1, 2, 2], 0.5f32);
        let ds = Dataset::new(img.clone(), vec![0, 1], 2, Split::Train).unwrap();
        assert_eq!(ds.class_counts(), vec![1, 1]);
        assert!(Dataset::new(img.clone(), vec![0, 2], 2, Split::Train).is_err());
        assert!(Dataset::new(img.clone(), vec![0], 2, Split::Train).is_err());
        assert!(Dataset::new(
            Tensor::full(vec![1, 1, 1, 1], 1.5),
            vec![0],
            2,
            Split::Train
        )
        .is_err());
    }

    #[test]
    fn subset_keeps_source_ids() {
        let img = Tensor::from_fn(vec![4, 1, 1, 1], |i| i as f32 / 4.0);
        let ds = Dataset::new(img, vec![0, 1, 0, 1], 2, Split::Test).unwrap();
        let sub = ds.subset(&[3, 1]).unwrap();
        assert_eq!(sub.ids, vec![3, 1]);
        assert_eq!(sub.labels, vec![1, 1]);
        assert_eq!(sub.image(0), &[0.75]);
        assert_ne!(sub.checksum(), ds.checksum());
    }
}
