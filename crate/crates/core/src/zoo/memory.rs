use serde::{Deserialize, Serialize};

use super::model::{shapes_through, ModelSpec, Unit};
use super::spec::LayerSpec;
use crate::error::Result;

/// Element counts resident in the enclave while one unit trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBreakdown {
    pub params: u64,
    pub param_grads: u64,
    pub velocity: u64,
    pub activations: u64,
    pub activation_grads: u64,
}

impl MemoryBreakdown {
    pub fn elements(&self) -> u64 {
        self.params + self.param_grads + self.velocity + self.activations + self.activation_grads
    }

    pub fn bytes(&self) -> u64 {
        4 * self.elements()
    }
}

/// Footprint of training `layers` on inputs of shape `input`: parameters
/// with their gradients and momentum buffers, the stack input plus every
/// layer output, and a gradient for every layer output. The stack input
/// needs no gradient because everything before it is frozen.
pub fn stack_memory(
    input: &[usize],
    layers: &[LayerSpec],
    batch: usize,
) -> Result<MemoryBreakdown> {
    let shapes = shapes_through(input, layers)?;
    let params: usize = layers
        .iter()
        .zip(&shapes)
        .map(|(l, s)| l.param_count(s))
        .sum();
    let outputs: usize = shapes[1..]
        .iter()
        .map(|s| s.iter().product::<usize>())
        .sum();
    let inputs: usize = shapes[0].iter().product();
    let b = batch as u64;
    Ok(MemoryBreakdown {
        params: params as u64,
        param_grads: params as u64,
        velocity: params as u64,
        activations: b * (inputs + outputs) as u64,
        activation_grads: b * outputs as u64,
    })
}

/// Bytes needed inside the enclave to train `unit` together with its head.
pub fn memory_usage(spec: &ModelSpec, unit: &Unit, batch: usize) -> Result<u64> {
    Ok(memory_breakdown(spec, unit, batch)?.bytes())
}

pub fn memory_breakdown(spec: &ModelSpec, unit: &Unit, batch: usize) -> Result<MemoryBreakdown> {
    let mut layers = spec.layers[unit.layers.clone()].to_vec();
    layers.extend_from_slice(&unit.head);
    stack_memory(&spec.shape_at(unit.layers.start), &layers, batch)
}
