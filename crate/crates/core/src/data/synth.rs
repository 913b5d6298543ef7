use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::Tensor;

/// A seeded classification task of single-channel blob images. Every class
/// has a fixed prototype made of a few Gaussian bumps; samples are the
/// prototype plus per-pixel Gaussian noise, clamped to [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTask {
    pub classes: usize,
    pub side: usize,
    pub noise: f64,
    pub seed: u64,
}

impl SynthTask {
    pub fn new(classes: usize, seed: u64) -> Self {
        SynthTask {
            classes,
            side: 14,
            noise: 0.3,
            seed,
        }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn prototypes(&self) -> Vec<Vec<f32>> {
        let mut rng = stream(self.seed, "synth-prototype", &[]);
        let s = self.side as f64;
        (0..self.classes)
            .map(|_| {
                let bumps: Vec<(f64, f64, f64, f64)> = (0..3)
                    .map(|_| {
                        (
                            rng.gen_range(0.15 * s..0.85 * s),
                            rng.gen_range(0.15 * s..0.85 * s),
                            rng.gen_range(0.1 * s..0.18 * s),
                            rng.gen_range(0.6..1.0),
                        )
                    })
                    .collect();
                (0..self.side * self.side)
                    .map(|p| {
                        let (y, x) = ((p / self.side) as f64, (p % self.side) as f64);
                        let v: f64 = bumps
                            .iter()
                            .map(|&(cy, cx, w, a)| {
                                a * (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * w * w)).exp()
                            })
                            .sum();
                        v.min(1.0) as f32
                    })
                    .collect()
            })
            .collect()
    }

    /// `n` samples with balanced labels in shuffled order, drawn from the
    /// `draw` stream of this task.
    pub fn generate(&self, n: usize, draw: u64) -> Result<Dataset> {
        if self.classes == 0 || self.classes > 10 {
            return Err(Error::Config(format!(
                "synthetic task needs 1..=10 classes, got {}",
                self.classes
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!(
                "noise must be non-negative, got {}",
                self.noise
            )));
        }
        let protos = self.prototypes();
        let mut rng = stream(self.seed, "synth-samples", &[draw]);
        let mut labels: Vec<usize> = (0..n).map(|i| i % self.classes).collect();
        labels.shuffle(&mut rng);
        let normal = Normal::new(0.0, self.noise).expect("validated noise");
        let pixels = self.side * self.side;
        let mut data = Vec::with_capacity(n * pixels);
        for &label in &labels {
            data.extend(
                protos[label]
                    .iter()
                    .map(|&p| (p as f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32),
            );
        }
        Dataset::new(
            Tensor::from_vec(&[n, 1, self.side, self.side], data)?,
            labels,
        )
    }

    /// Disjoint train and test sets.
    pub fn split(&self, train: usize, test: usize) -> Result<(Dataset, Dataset)> {
        Ok((self.generate(train, 0)?, self.generate(test, 1)?))
    }
}

pub fn synth_dataset(n: usize, classes: usize, seed: u64) -> Result<Dataset> {
    SynthTask::new(classes, seed).generate(n, 0)
}
