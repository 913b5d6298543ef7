use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::enclave::{EnclaveRegion, ParamLayout, SealedBlob, Secret};
use crate::error::{Error, Result};
use crate::network::Stack;
use crate::nn::LayerParams;
use crate::zoo::ModelSpec;

/// A simulated device: its enclave, local data and enclave-resident head.
#[derive(Debug)]
pub struct ClientState {
    pub id: usize,
    pub region: EnclaveRegion,
    pub data: Dataset,
    /// Local epochs trained so far, driving the learning-rate decay.
    pub epochs_done: usize,
    pub(crate) head: Option<(usize, Secret<Vec<LayerParams>>)>,
}

impl ClientState {
    pub fn new(id: usize, region: EnclaveRegion, data: Dataset) -> Self {
        ClientState {
            id,
            region,
            data,
            epochs_done: 0,
            head: None,
        }
    }

    pub fn budget(&self) -> u64 {
        self.region.budget_bytes()
    }
}

/// The last trained unit, kept sealed by the server.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtectedUnit {
    /// Model indices of the sealed parameterized layers.
    pub layers: Vec<usize>,
    pub layout: ParamLayout,
    pub blob: SealedBlob,
}

/// Layers whose training has finished, indexed by model layer.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GlobalModelState {
    pub finalized: BTreeMap<usize, LayerParams>,
    pub protected: Option<ProtectedUnit>,
}

impl GlobalModelState {
    /// Parameters of the layers in `range`, in order.
    pub fn params_for(
        &self,
        spec: &ModelSpec,
        range: std::ops::Range<usize>,
    ) -> Result<Vec<LayerParams>> {
        spec.param_layers()
            .into_iter()
            .filter(|i| range.contains(i))
            .map(|i| {
                self.finalized
                    .get(&i)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("layer {i} has not been finalized")))
            })
            .collect()
    }

    /// Untrusted stack of the finalized layers before `end`.
    pub fn prefix(&self, spec: &ModelSpec, end: usize) -> Result<Stack> {
        Stack::with_params(
            &spec.layers[..end],
            &spec.input,
            self.params_for(spec, 0..end)?,
        )
    }

    /// Stack of every finalized layer, for use when nothing is protected.
    pub fn full_model(&self, spec: &ModelSpec) -> Result<Stack> {
        self.prefix(spec, spec.layers.len())
    }
}
