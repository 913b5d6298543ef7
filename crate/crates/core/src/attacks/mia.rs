use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::Stack;
use crate::nn::{softmax_cross_entropy, LayerParams};
use crate::proto::{train_centralized, CentralConfig};
use crate::rng::stream;
use crate::tensor::Tensor;
use crate::zoo::ModelSpec;

/// How the adversary picks its loss threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdStrategy {
    Fixed(f64),
    /// Median of the pooled member and non-member losses, so exactly half
    /// the candidates are called members.
    PooledMedian,
}

/// The model as the adversary can evaluate it.
pub enum ModelView {
    Full(Stack),
    /// Every layer before the output layer, topped by a head the adversary
    /// trained itself.
    Surrogate {
        features: Stack,
        head: Stack,
    },
}

impl ModelView {
    pub fn full(spec: &ModelSpec, params: Vec<LayerParams>) -> Result<Self> {
        Ok(ModelView::Full(Stack::with_params(
            &spec.layers,
            &spec.input,
            params,
        )?))
    }

    /// Keeps the layers before `hidden_from`, whose parameters are
    /// `visible`, and fits a fresh copy of the remaining layers on `aux`
    /// through them.
    pub fn surrogate(
        spec: &ModelSpec,
        hidden_from: usize,
        visible: Vec<LayerParams>,
        aux: &Dataset,
        cfg: &CentralConfig,
        seed: u64,
    ) -> Result<Self> {
        if hidden_from == 0 || hidden_from >= spec.layers.len() {
            return Err(Error::Attack(format!(
                "cannot hide layers from {hidden_from} of a {}-layer model",
                spec.layers.len()
            )));
        }
        let features = Stack::with_params(&spec.layers[..hidden_from], &spec.input, visible)?;
        let embedded = Dataset::new(
            as_image(features.forward(&aux.images)?)?,
            aux.labels.clone(),
        )?;
        let mut head = Stack::init(&spec.layers[hidden_from..], embedded.sample_shape(), |i| {
            stream(seed, "surrogate-init", &[i as u64])
        })?;
        train_centralized(
            &mut head,
            &embedded,
            cfg,
            0,
            &mut stream(seed, "surrogate-train", &[]),
        )?;
        Ok(ModelView::Surrogate { features, head })
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            ModelView::Full(stack) => stack.forward(x),
            ModelView::Surrogate { features, head } => {
                head.forward(&as_image(features.forward(x)?)?)
            }
        }
    }
}

/// Features as `(n, c, h, w)` images; flat ones become `(n, width, 1, 1)`.
fn as_image(t: Tensor) -> Result<Tensor> {
    if t.rank() == 4 {
        return Ok(t);
    }
    let (n, w) = (t.batch(), t.row_len());
    t.reshape(&[n, w, 1, 1])
}

/// Cross-entropy of each sample under the view.
pub fn per_sample_losses(view: &ModelView, data: &Dataset) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len());
    for start in (0..data.len()).step_by(250) {
        let chunk = data.slice(start, (start + 250).min(data.len()));
        let logits = view.logits(&chunk.images)?;
        let k = logits.row_len();
        for (row, &label) in logits.data().chunks(k).zip(&chunk.labels) {
            let row = Tensor::from_vec(&[1, k], row.iter().map(|&v| v as f64).collect())?;
            out.push(softmax_cross_entropy(&row, &[label])?.0);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiaResult {
    pub threshold: f64,
    /// Fraction of predicted members that really were members; 0 when
    /// nothing was predicted.
    pub precision: f64,
    pub true_positives: usize,
    pub false_positives: usize,
}

pub fn choose_threshold(members: &[f64], nonmembers: &[f64], strategy: ThresholdStrategy) -> f64 {
    match strategy {
        ThresholdStrategy::Fixed(t) => t,
        ThresholdStrategy::PooledMedian => {
            let mut pooled: Vec<f64> = members.iter().chain(nonmembers).copied().collect();
            pooled.sort_by(f64::total_cmp);
            pooled[(pooled.len() / 2).saturating_sub(1)]
        }
    }
}

/// Loss-threshold membership inference: a sample is called a member when
/// its loss is at most the threshold.
pub fn threshold_attack(
    members: &[f64],
    nonmembers: &[f64],
    strategy: ThresholdStrategy,
) -> Result<MiaResult> {
    if members.len() != nonmembers.len() || members.is_empty() {
        return Err(Error::Attack(format!(
            "member and non-member sets must be equal and non-empty, got {} and {}",
            members.len(),
            nonmembers.len()
        )));
    }
    let threshold = choose_threshold(members, nonmembers, strategy);
    let tp = members.iter().filter(|&&l| l <= threshold).count();
    let fp = nonmembers.iter().filter(|&&l| l <= threshold).count();
    Ok(MiaResult {
        threshold,
        precision: if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        },
        true_positives: tp,
        false_positives: fp,
    })
}

pub fn mia_confidence(
    view: &ModelView,
    members: &Dataset,
    nonmembers: &Dataset,
    strategy: ThresholdStrategy,
) -> Result<MiaResult> {
    threshold_attack(
        &per_sample_losses(view, members)?,
        &per_sample_losses(view, nonmembers)?,
        strategy,
    )
}
