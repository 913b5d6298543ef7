use serde::{Deserialize, Serialize};

use super::model::{shapes_through, ModelSpec, TrainingPlan};
use crate::error::{Error, Result};

/// Per-sample multiply-accumulate costs of training one unit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitCost {
    /// Forward pass through every frozen layer before the unit.
    pub prefix_forward: u64,
    pub forward: u64,
    pub backward: u64,
    pub head_forward: u64,
    pub head_backward: u64,
}

impl UnitCost {
    pub fn per_sample(&self) -> u64 {
        self.prefix_forward + self.forward + self.backward + self.head_forward + self.head_backward
    }
}

/// Closed-form training cost of a plan. All totals are for a single client
/// training `samples` examples for `epochs` epochs per unit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostProfile {
    pub units: Vec<UnitCost>,
    /// Whole-model forward and backward costs per sample.
    pub model_forward: u64,
    pub model_backward: u64,
    pub batch: u64,
    pub samples: u64,
    pub steps_per_epoch: u64,
    pub epochs: u64,
}

impl CostProfile {
    fn scale(&self, per_sample: u64) -> u64 {
        per_sample * self.batch * self.steps_per_epoch * self.epochs
    }

    /// Training the whole model end to end.
    pub fn end_to_end_total(&self) -> u64 {
        self.scale(self.model_forward + self.model_backward)
    }

    /// Training unit `u` with its head, re-running the frozen prefix.
    pub fn unit_total(&self, u: usize) -> u64 {
        self.scale(self.units[u].per_sample())
    }

    pub fn layerwise_total(&self) -> u64 {
        (0..self.units.len()).map(|u| self.unit_total(u)).sum()
    }
}

/// Backward passes cost twice the forward pass of the same layer.
pub const BACKWARD_FACTOR: u64 = 2;

pub fn cost_profile(
    spec: &ModelSpec,
    plan: &TrainingPlan,
    batch: usize,
    samples: usize,
    epochs: usize,
) -> Result<CostProfile> {
    if batch == 0 || samples == 0 || epochs == 0 {
        return Err(Error::Config(
            "cost profile needs positive batch, samples and epochs".into(),
        ));
    }
    let shapes = spec.shapes()?;
    let layer_macs = spec
        .layers
        .iter()
        .zip(&shapes)
        .map(|(l, s)| l.macs(s))
        .collect::<Result<Vec<_>>>()?;
    let sum = |r: std::ops::Range<usize>| layer_macs[r].iter().sum::<u64>();
    let model_forward = sum(0..spec.layers.len());
    let units = plan
        .units
        .iter()
        .map(|unit| {
            let forward = sum(unit.layers.clone());
            let head_shapes = shapes_through(&shapes[unit.layers.end], &unit.head)?;
            let head_forward = unit
                .head
                .iter()
                .zip(&head_shapes)
                .map(|(l, s)| l.macs(s))
                .sum::<Result<u64>>()?;
            Ok(UnitCost {
                prefix_forward: sum(0..unit.layers.start),
                forward,
                backward: BACKWARD_FACTOR * forward,
                head_forward,
                head_backward: BACKWARD_FACTOR * head_forward,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CostProfile {
        units,
        model_forward,
        model_backward: BACKWARD_FACTOR * model_forward,
        batch: batch as u64,
        samples: samples as u64,
        steps_per_epoch: samples.div_ceil(batch) as u64,
        epochs: epochs as u64,
    })
}
