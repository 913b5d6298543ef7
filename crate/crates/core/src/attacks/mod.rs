//! Passive adversaries that read only what an exposure policy permits.

mod dra;
mod mia;
mod policy;

use serde::{Deserialize, Serialize};

pub use dra::{dra_invert, infer_label, matching_objective, DescentRule, DraConfig, DraResult};
pub use mia::{
    choose_threshold, mia_confidence, per_sample_losses, threshold_attack, MiaResult, ModelView,
    ThresholdStrategy,
};
pub use policy::{AttackerView, ExposurePolicy, ObservedGradients};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Dra,
    Mia,
}

/// One attack outcome. `metric` is reconstruction MSE for DRA and
/// precision for MIA; `baseline` is the random-init MSE or chance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub attack: AttackKind,
    pub policy: ExposurePolicy,
    pub metric: f64,
    pub baseline: f64,
    pub seeds: Vec<u64>,
    pub iterations: usize,
}
