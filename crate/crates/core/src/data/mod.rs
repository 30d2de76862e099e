//! Labeled datasets: MNIST ingestion and synthetic generators.

mod mnist;
mod synthetic;

pub use mnist::{load_mnist, read_idx_images, read_idx_labels};
pub use synthetic::{
    cancellation_network, generate_synthetic, SharedBlock, SyntheticKind, SyntheticSpec,
};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{stream, tag};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Samples of one shape stored contiguously, with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    sample_shape: Vec<usize>,
    features: Vec<T>,
    labels: Vec<usize>,
    classes: usize,
    split: Split,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(
        sample_shape: Vec<usize>,
        features: Vec<T>,
        labels: Vec<usize>,
        classes: usize,
        split: Split,
    ) -> Result<Self> {
        let sample_len: usize = sample_shape.iter().product();
        if sample_len == 0 {
            return Err(Error::InvalidTensor(format!(
                "sample shape {sample_shape:?} is empty"
            )));
        }
        if features.len() != sample_len * labels.len() {
            return Err(Error::InvalidTensor(format!(
                "{} labels need {} feature values, got {}",
                labels.len(),
                sample_len * labels.len(),
                features.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidConfig(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(LabeledDataset {
            sample_shape,
            features,
            labels,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    #[cfg(test)]
    pub(crate) fn features_mut(&mut self) -> &mut [T] {
        &mut self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn input(&self, index: usize) -> &[T] {
        let n = self.sample_len();
        &self.features[index * n..(index + 1) * n]
    }

    pub fn tensor(&self, index: usize) -> Tensor<T> {
        Tensor::from_parts(self.sample_shape.clone(), self.input(index).to_vec())
    }

    pub fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    /// Copies the given samples, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let n = self.sample_len();
        let mut features = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            features.extend_from_slice(self.input(i));
        }
        LabeledDataset {
            sample_shape: self.sample_shape.clone(),
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            split: self.split,
        }
    }

    /// Seeded class-stratified sample of `round(fraction * count)` items per
    /// class (at least one for non-empty classes). Returned indices are sorted.
    pub fn stratified_indices(&self, fraction: f64, seed: u64) -> Vec<usize> {
        if fraction >= 1.0 {
            return (0..self.len()).collect();
        }
        let mut rng = stream(seed, &[tag::SUBSET]);
        let mut chosen = Vec::new();
        for class in 0..self.classes {
            let mut members: Vec<usize> = (0..self.len())
                .filter(|&i| self.labels[i] == class)
                .collect();
            if members.is_empty() {
                continue;
            }
            members.shuffle(&mut rng);
            let take = ((members.len() as f64 * fraction).round() as usize).clamp(1, members.len());
            chosen.extend_from_slice(&members[..take]);
        }
        chosen.sort_unstable();
        chosen
    }

    /// Per-feature mean over all samples.
    pub fn feature_means(&self) -> Vec<f64> {
        let n = self.sample_len();
        let mut acc = vec![0.0; n];
        for i in 0..self.len() {
            for (a, v) in acc.iter_mut().zip(self.input(i)) {
                *a += v.widen();
            }
        }
        let count = self.len().max(1) as f64;
        acc.into_iter().map(|a| a / count).collect()
    }

    /// SHA-256 over shape, class count, labels and little-endian f32 features.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for d in &self.sample_shape {
            h.update((*d as u64).to_le_bytes());
        }
        h.update((self.classes as u64).to_le_bytes());
        h.update((self.labels.len() as u64).to_le_bytes());
        for l in &self.labels {
            h.update((*l as u32).to_le_bytes());
        }
        for v in &self.features {
            h.update((v.widen() as f32).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn cast<U: Scalar>(&self) -> LabeledDataset<U> {
        LabeledDataset {
            sample_shape: self.sample_shape.clone(),
            features: self.features.iter().map(|v| U::narrow(v.widen())).collect(),
            labels: self.labels.clone(),
            classes: self.classes,
            split: self.split,
        }
    }
}

/// Train and test splits of one dataset.
#[derive(Debug, Clone)]
pub struct DataSplit<T> {
    pub train: LabeledDataset<T>,
    pub test: LabeledDataset<T>,
}

impl<T: Scalar> DataSplit<T> {
    /// Hash over both splits.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.train.content_hash().as_bytes());
        h.update(self.test.content_hash().as_bytes());
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> LabeledDataset<f32> {
        let features: Vec<f32> = (0..20).map(|v| v as f32).collect();
        LabeledDataset::new(
            vec![2],
            features,
            vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1],
            2,
            Split::Train,
        )
        .unwrap()
    }

    #[test]
    fn rejects_out_of_range_labels() {
        assert!(LabeledDataset::<f32>::new(vec![1], vec![0.0], vec![3], 2, Split::Test).is_err());
        assert!(LabeledDataset::<f32>::new(vec![2], vec![0.0], vec![0], 2, Split::Test).is_err());
    }

    #[test]
    fn stratified_subset_is_balanced_and_seeded() {
        let d = toy();
        let a = d.stratified_indices(0.4, 3);
        assert_eq!(a, d.stratified_indices(0.4, 3));
        let sub = d.subset(&a);
        assert_eq!(sub.labels().iter().filter(|&&l| l == 0).count(), 2);
        assert_eq!(sub.labels().iter().filter(|&&l| l == 1).count(), 2);
    }

    #[test]
    fn hash_is_stable_and_content_sensitive() {
        let d = toy();
        assert_eq!(d.content_hash(), toy().content_hash());
        let mut e = toy();
        e.features_mut()[3] = 100.0;
        assert_ne!(d.content_hash(), e.content_hash());
    }
}
