use rand::seq::index::sample;
use rand::Rng;

use super::state::ClientState;
use crate::data::Dataset;
use crate::enclave::{EnclaveSession, ParamLayout, SealedBlob, Secret};
use crate::error::{Error, Result};
use crate::network::Stack;
use crate::nn::LayerParams;
use crate::rng::stream;
use crate::tensor::Tensor;
use crate::zoo::{shapes_through, ModelSpec, Unit};

/// Number of participants for a round: `round(fraction * n)`, at least one.
pub fn participants(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).max(1)
}

/// Samples participants without replacement among clients whose enclave
/// can hold `needed` bytes. Returned ids are sorted.
pub fn select_clients<R: Rng + ?Sized>(
    states: &[ClientState],
    needed: u64,
    fraction: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let eligible: Vec<usize> = states
        .iter()
        .filter(|c| c.budget() >= needed && !c.data.is_empty())
        .map(|c| c.id)
        .collect();
    if eligible.is_empty() {
        return Err(Error::NoEligibleClients {
            needed,
            max_budget: states.iter().map(ClientState::budget).max().unwrap_or(0),
        });
    }
    let k = participants(states.len(), fraction).min(eligible.len());
    let mut picked: Vec<usize> = sample(rng, eligible.len(), k)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Fresh parameters for the layers of `unit`. Each model layer has its own
/// stream, so every plan initializes a given layer identically.
pub fn server_init_unit(spec: &ModelSpec, unit: &Unit, seed: u64) -> Vec<LayerParams> {
    let shapes = spec.shapes().expect("validated spec");
    unit.layers
        .clone()
        .filter_map(|i| {
            spec.layers[i].init_params(&shapes[i], &mut stream(seed, "layer-init", &[i as u64]))
        })
        .collect()
}

/// Initial head parameters of unit `index`, shared by every client.
pub fn init_head(spec: &ModelSpec, unit: &Unit, index: usize, seed: u64) -> Vec<LayerParams> {
    let shapes =
        shapes_through(&spec.shape_at(unit.layers.end), &unit.head).expect("validated head");
    unit.head
        .iter()
        .enumerate()
        .filter_map(|(j, l)| {
            l.init_params(
                &shapes[j],
                &mut stream(seed, "head-init", &[index as u64, j as u64]),
            )
        })
        .collect()
}

/// Elementwise mean, accumulated in 64-bit in the given order.
pub fn fedavg(updates: &[Vec<LayerParams>]) -> Result<Vec<LayerParams>> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Aggregation("no updates to aggregate".into()))?;
    for (j, u) in updates.iter().enumerate() {
        if ParamLayout::of(u) != ParamLayout::of(first) {
            return Err(Error::Aggregation(format!(
                "update {j} has a different parameter layout"
            )));
        }
    }
    let n = updates.len() as f64;
    let mean = |pick: &dyn Fn(&LayerParams) -> &Tensor| -> Vec<Vec<f32>> {
        (0..first.len())
            .map(|l| {
                let mut acc = vec![0f64; pick(&first[l]).len()];
                for u in updates {
                    for (a, &v) in acc.iter_mut().zip(pick(&u[l]).data()) {
                        *a += v as f64;
                    }
                }
                acc.into_iter().map(|a| (a / n) as f32).collect()
            })
            .collect()
    };
    let weights = mean(&|p| &p.weights);
    let biases = mean(&|p| &p.biases);
    first
        .iter()
        .zip(weights.into_iter().zip(biases))
        .map(|(p, (w, b))| {
            LayerParams::new(
                p.kind,
                Tensor::from_vec(p.weights.shape(), w)?,
                Tensor::from_vec(p.biases.shape(), b)?,
            )
        })
        .collect()
}

/// Unseals every update inside the server enclave and averages them there.
pub fn fedavg_sealed(
    session: &EnclaveSession<'_>,
    updates: &[SealedBlob],
    layout: &ParamLayout,
) -> Result<Secret<Vec<LayerParams>>> {
    let plain = updates
        .iter()
        .map(|b| session.unseal(b, layout).map(|s| session.take(s)))
        .collect::<Result<Vec<_>>>()?;
    Ok(session.protect(fedavg(&plain)?))
}

pub(crate) fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of `data` classified correctly by `prefix` followed by `model`.
pub fn accuracy(prefix: Option<&Stack>, model: &Stack, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    const CHUNK: usize = 250;
    let mut correct = 0;
    for start in (0..data.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(data.len());
        let mut x = data.images.slice_batch(start, end);
        if let Some(p) = prefix {
            x = p.forward(&x)?;
        }
        let logits = model.forward(&x)?;
        let k = logits.row_len();
        correct += logits
            .data()
            .chunks(k)
            .zip(&data.labels[start..end])
            .filter(|(row, &y)| argmax(row) == y)
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}
