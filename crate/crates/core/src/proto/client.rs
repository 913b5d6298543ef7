use rand::seq::SliceRandom;

use super::config::FederationConfig;
use super::state::ClientState;
use crate::enclave::{
    ree_to_tee_activations, EnclaveTrace, ExposureLedger, ExposureTag, ParamLayout, SealedBlob,
    SecretKind, SharedBuffer,
};
use crate::error::{Error, Result};
use crate::network::Stack;
use crate::nn::{softmax_cross_entropy, LayerParams};
use crate::optim::{sgd_step, OptimState};
use crate::rng::stream;
use crate::zoo::{LayerSpec, ModelSpec, Unit};

/// Everything a client needs to train one unit for one round.
pub struct UnitJob<'a> {
    /// Unit position in the plan, from 0.
    pub index: usize,
    /// Global round number, from 1.
    pub round: usize,
    /// Unit layers followed by the head.
    pub layers: Vec<LayerSpec>,
    pub input_shape: Vec<usize>,
    pub layout: ParamLayout,
    pub head_init: &'a [LayerParams],
    /// Frozen layers before the unit, run in untrusted memory.
    pub prefix: &'a Stack,
    /// Enclave bytes the unit needs.
    pub memory: u64,
    pub config: &'a FederationConfig,
    pub ledger: &'a ExposureLedger,
    pub trace: Option<&'a EnclaveTrace>,
}

impl<'a> UnitJob<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        spec: &ModelSpec,
        unit: &Unit,
        index: usize,
        round: usize,
        layout: ParamLayout,
        head_init: &'a [LayerParams],
        prefix: &'a Stack,
        memory: u64,
        config: &'a FederationConfig,
        ledger: &'a ExposureLedger,
        trace: Option<&'a EnclaveTrace>,
    ) -> Self {
        let mut layers = spec.layers[unit.layers.clone()].to_vec();
        layers.extend_from_slice(&unit.head);
        UnitJob {
            index,
            round,
            layers,
            input_shape: spec.shape_at(unit.layers.start),
            layout,
            head_init,
            prefix,
            memory,
            config,
            ledger,
            trace,
        }
    }
}

/// Sealed results a client returns after a round.
#[derive(Debug)]
pub struct ClientReport {
    pub client: usize,
    pub update: SealedBlob,
    /// Sealed head, uploaded only for evaluation.
    pub head: Option<SealedBlob>,
    /// Multiply-accumulates spent, frozen prefix included.
    pub macs: u64,
}

/// Trains the broadcast unit plus the client's own head for the configured
/// number of local epochs inside the client's enclave.
pub fn client_update(
    client: &mut ClientState,
    job: &UnitJob<'_>,
    broadcast: &SealedBlob,
) -> Result<ClientReport> {
    if client.data.is_empty() {
        return Err(Error::EmptyShard(client.id));
    }
    let cfg = job.config;
    let prefix = job.prefix.clone();
    prefix.reset_macs();
    let tag = ExposureTag {
        unit: Some(job.index),
        round: Some(job.round),
        client: Some(client.id),
        layer: None,
    };
    let epochs_before = client.epochs_done;
    let stored_head = match client.head.take() {
        Some((unit, head)) if unit == job.index => Some(head),
        _ => None,
    };
    let session = client.region.enter(job.memory)?;
    let theta = session.unseal(broadcast, &job.layout)?;
    let mut params = session.take(theta);
    let unit_sets = params.len();
    params.extend(match stored_head {
        Some(h) => session.take(h),
        None => job.head_init.to_vec(),
    });
    let mut stack = Stack::with_params(&job.layers, &job.input_shape, params)?;
    let mut opt = OptimState::new(cfg.sgd, stack.params()).with_epochs_elapsed(epochs_before);
    let mut rng = stream(
        cfg.seed,
        "client",
        &[job.index as u64, job.round as u64, client.id as u64],
    );
    let n = client.data.len();
    let in_elems: usize = job.input_shape.iter().product();
    let mut buffer = SharedBuffer::new(4 * cfg.batch.min(n) * in_elems);
    let steps_per_epoch = n.div_ceil(cfg.batch);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut step = 0;
    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(cfg.batch) {
            let batch = client.data.subset(chunk);
            let x = if job.prefix.specs().is_empty() {
                batch.images
            } else {
                let frozen_out = prefix.forward(&batch.images)?;
                ree_to_tee_activations(&mut buffer, &frozen_out, &session, job.ledger, tag)?
            };
            let trace = stack.forward_train(&x, &mut rng)?;
            let (_, grad) = softmax_cross_entropy(trace.output(), &batch.labels)?;
            let (_, grads) = stack.backward(&trace, &grad, false)?;
            if let Some(t) = job.trace {
                if step == 0 || step + 1 == total_steps {
                    t.record(SecretKind::Gradient, &grads);
                }
            }
            sgd_step(stack.params_mut(), &grads, &mut opt)?;
            step += 1;
        }
        opt.end_epoch();
        client.epochs_done += 1;
    }
    let macs = prefix.macs() + stack.macs();
    let mut params = stack.into_params();
    let head = params.split_off(unit_sets);
    if let Some(t) = job.trace {
        t.record(SecretKind::ClientUpdate, &params);
        t.record(SecretKind::ClientHead, &head);
    }
    let mut iv_rng = stream(
        cfg.seed,
        "client-iv",
        &[job.index as u64, job.round as u64, client.id as u64],
    );
    let update = session.seal(&params, &mut iv_rng);
    let head_blob = (!head.is_empty()).then(|| session.seal(&head, &mut iv_rng));
    client.head = Some((job.index, session.protect(head)));
    Ok(ClientReport {
        client: client.id,
        update,
        head: head_blob,
        macs,
    })
}
