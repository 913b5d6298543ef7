use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::enclave::{Exposure, ExposureKind, ExposureLedger};
use crate::error::{Error, Result};
use crate::nn::LayerParams;
use crate::tensor::Tensor;
use crate::zoo::ModelSpec;

/// What an adversary outside every enclave can observe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExposurePolicy {
    /// Plain federated learning: every broadcast and update is visible.
    E2e,
    /// Only finalized layers and frozen-layer activations are visible.
    Ppfl,
    /// As `Ppfl`, with the output layer also kept hidden.
    PpflLastLayer,
}

impl ExposurePolicy {
    pub fn allowed_kinds(self) -> BTreeSet<ExposureKind> {
        let mut kinds = BTreeSet::from([
            ExposureKind::Sealed,
            ExposureKind::FrozenLayer,
            ExposureKind::FrozenActivations,
        ]);
        if self == ExposurePolicy::E2e {
            kinds.insert(ExposureKind::PlainParams);
        }
        kinds
    }

    pub fn hides_last_layer(self) -> bool {
        self == ExposurePolicy::PpflLastLayer
    }
}

impl fmt::Display for ExposurePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExposurePolicy::E2e => "e2e",
            ExposurePolicy::Ppfl => "ppfl",
            ExposurePolicy::PpflLastLayer => "ppfl-lastlayer",
        })
    }
}

impl FromStr for ExposurePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "e2e" => Ok(ExposurePolicy::E2e),
            "ppfl" => Ok(ExposurePolicy::Ppfl),
            "ppfl-lastlayer" => Ok(ExposurePolicy::PpflLastLayer),
            _ => Err(Error::Attack(format!(
                "unknown policy `{s}` (expected e2e, ppfl or ppfl-lastlayer)"
            ))),
        }
    }
}

/// The exposures an adversary may read under a policy.
#[derive(Clone, Debug)]
pub struct AttackerView {
    pub policy: ExposurePolicy,
    exposures: Vec<Exposure>,
}

/// Gradients recovered from one plain single-step client update.
#[derive(Clone, Debug)]
pub struct ObservedGradients {
    pub unit: usize,
    pub round: usize,
    pub client: usize,
    /// Parameters the client started from.
    pub params: Vec<LayerParams<f64>>,
    pub grads: Vec<LayerParams<f64>>,
}

impl AttackerView {
    pub fn from_ledger(ledger: &ExposureLedger, policy: ExposurePolicy) -> Self {
        Self::from_exposures(ledger.snapshot(), policy)
    }

    pub fn from_exposures(exposures: Vec<Exposure>, policy: ExposurePolicy) -> Self {
        let allowed = policy.allowed_kinds();
        AttackerView {
            policy,
            exposures: exposures
                .into_iter()
                .filter(|e| allowed.contains(&e.kind))
                .collect(),
        }
    }

    pub fn exposures(&self) -> &[Exposure] {
        &self.exposures
    }

    /// Count of visible in-training parameter tensors.
    pub fn plain_updates(&self) -> usize {
        self.exposures
            .iter()
            .filter(|e| e.kind == ExposureKind::PlainParams)
            .count()
    }

    /// Gradients of the first visible client update, assuming it was a
    /// single SGD step from fresh momentum at `learning_rate`, so that
    /// `update = broadcast - learning_rate * grad`. `None` when the view
    /// holds no plain updates covering the whole model.
    pub fn observed_gradients(
        &self,
        spec: &ModelSpec,
        learning_rate: f64,
    ) -> Result<Option<ObservedGradients>> {
        let plain: Vec<&Exposure> = self
            .exposures
            .iter()
            .filter(|e| e.kind == ExposureKind::PlainParams)
            .collect();
        let Some(first) = plain.iter().find(|e| e.client.is_some()) else {
            return Ok(None);
        };
        let (unit, round, client) = (first.unit, first.round, first.client);
        let layers = spec.param_layers();
        let shapes = spec.shapes()?;
        let pick = |client: Option<usize>, layer: usize| -> Result<&Exposure> {
            plain
                .iter()
                .find(|e| {
                    e.unit == unit
                        && e.round == round
                        && e.client == client
                        && e.layer == Some(layer)
                })
                .copied()
                .ok_or_else(|| {
                    Error::Attack(format!("view lacks layer {layer} of round {round:?}"))
                })
        };
        let mut params = Vec::new();
        let mut grads = Vec::new();
        for &l in &layers {
            let (before, after) = (pick(None, l)?, pick(client, l)?);
            let (Some(b), Some(a)) = (&before.payload, &after.payload) else {
                return Err(Error::Attack("the ledger kept no payloads".into()));
            };
            let (ws, bs) = spec.layers[l]
                .param_shapes(&shapes[l])
                .expect("parameterized layer");
            let split = ws.iter().product::<usize>();
            let to_params = |v: Vec<f64>| -> Result<LayerParams<f64>> {
                let kind = if spec.layers[l].is_conv() {
                    crate::nn::ParamKind::Conv
                } else {
                    crate::nn::ParamKind::Fc
                };
                LayerParams::new(
                    kind,
                    Tensor::from_vec(&ws, v[..split].to_vec())?,
                    Tensor::from_vec(&bs, v[split..].to_vec())?,
                )
            };
            let start: Vec<f64> = b.iter().map(|&v| v as f64).collect();
            let grad: Vec<f64> = b
                .iter()
                .zip(a)
                .map(|(&b, &a)| (b as f64 - a as f64) / learning_rate)
                .collect();
            params.push(to_params(start)?);
            grads.push(to_params(grad)?);
        }
        Ok(Some(ObservedGradients {
            unit: unit.unwrap_or(0),
            round: round.unwrap_or(0),
            client: client.unwrap_or(0),
            params,
            grads,
        }))
    }
}
