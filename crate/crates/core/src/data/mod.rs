//! Datasets: idx and CIFAR binary loaders, a seeded synthetic task, and
//! client partitioning.

mod cifar;
mod idx;
mod partition;
mod synth;

pub use cifar::load_cifar_batches;
pub use idx::{load_idx, IMAGES_MAGIC, LABELS_MAGIC};
pub use partition::{partition, PartitionPlan, Scheme};
pub use synth::{synth_dataset, SynthTask};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images `(n, channels, height, width)` in [0, 1] with labels in [0, 10).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::Shape(format!(
                "images must be (n, c, h, w), got {:?}",
                images.shape()
            )));
        }
        if images.batch() != labels.len() {
            return Err(Error::Dimension {
                axis: "samples",
                expected: images.batch(),
                actual: labels.len(),
            });
        }
        Ok(Dataset { images, labels })
    }

    pub fn empty(sample_shape: &[usize]) -> Self {
        let mut shape = vec![0];
        shape.extend_from_slice(sample_shape);
        Dataset {
            images: Tensor::zeros(&shape),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.gather_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Consecutive samples `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        Dataset {
            images: self.images.slice_batch(start, end),
            labels: self.labels[start..end].to_vec(),
        }
    }

    /// First `n` samples and the rest.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        (self.slice(0, n), self.slice(n, self.len()))
    }

    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.sample_shape() != other.sample_shape() {
            return Err(Error::Shape(format!(
                "cannot join samples of shape {:?} and {:?}",
                self.sample_shape(),
                other.sample_shape()
            )));
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] += other.len();
        let mut data = self.images.data().to_vec();
        data.extend_from_slice(other.images.data());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Dataset::new(Tensor::from_vec(&shape, data)?, labels)
    }
}
