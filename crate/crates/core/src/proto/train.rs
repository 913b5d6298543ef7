use std::time::Instant;

use super::client::{client_update, ClientReport, UnitJob};
use super::config::{FederationConfig, Protection, Scheduler};
use super::server::{accuracy, fedavg_sealed, init_head, select_clients, server_init_unit};
use super::state::{ClientState, GlobalModelState, ProtectedUnit};
use crate::costkit::{account_round, Direction, RoundLedger, Transfer};
use crate::data::Dataset;
use crate::enclave::{
    bytes_fingerprint, EnclaveRegion, EnclaveTrace, ExposureKind, ExposureLedger, ExposureTag,
    FederationKey, ParamLayout, Party, SealedBlob, SecretKind,
};
use crate::error::{Error, Result};
use crate::network::Stack;
use crate::nn::LayerParams;
use crate::rng::stream;
use crate::zoo::{memory_usage, ModelSpec, TrainingPlan, Unit};

/// A server, its clients and the shared audit logs.
#[derive(Debug)]
pub struct Federation {
    pub config: FederationConfig,
    pub spec: ModelSpec,
    pub clients: Vec<ClientState>,
    pub server: EnclaveRegion,
    pub global: GlobalModelState,
    pub test: Dataset,
    pub ledger: ExposureLedger,
    pub trace: Option<EnclaveTrace>,
}

impl Federation {
    /// One client per shard, with per-client enclave budgets.
    pub fn new(
        config: FederationConfig,
        spec: ModelSpec,
        shards: Vec<Dataset>,
        budgets: &[u64],
        test: Dataset,
    ) -> Result<Self> {
        config.validate()?;
        if shards.len() != config.clients || budgets.len() != config.clients {
            return Err(Error::Config(format!(
                "{} clients configured but {} shards and {} budgets supplied",
                config.clients,
                shards.len(),
                budgets.len()
            )));
        }
        if let Some(s) = shards
            .iter()
            .find(|s| !s.is_empty() && s.sample_shape() != spec.input)
        {
            return Err(Error::Shape(format!(
                "model expects samples of shape {:?}, data has {:?}",
                spec.input,
                s.sample_shape()
            )));
        }
        let key = FederationKey::FIXTURE;
        let clients = shards
            .into_iter()
            .zip(budgets)
            .enumerate()
            .map(|(i, (data, &b))| {
                ClientState::new(
                    i,
                    EnclaveRegion::new(Party::Client(i), b, key.clone()),
                    data,
                )
            })
            .collect();
        Ok(Federation {
            ledger: if config.retain_payloads {
                ExposureLedger::retaining_payloads()
            } else {
                ExposureLedger::new()
            },
            trace: config.audit.then(EnclaveTrace::new),
            server: EnclaveRegion::new(Party::Server, config.server_budget_bytes, key),
            global: GlobalModelState::default(),
            clients,
            spec,
            config,
            test,
        })
    }

    /// The complete trained model, unsealing a protected output layer
    /// inside the server enclave.
    pub fn final_model(&mut self) -> Result<Stack> {
        let mut finalized = self.global.finalized.clone();
        if let Some(p) = &self.global.protected {
            let session = self.server.enter(0)?;
            let layers = session.take(session.unseal(&p.blob, &p.layout)?);
            finalized.extend(p.layers.iter().copied().zip(layers));
        }
        let params = self
            .spec
            .param_layers()
            .into_iter()
            .map(|i| {
                finalized
                    .remove(&i)
                    .ok_or_else(|| Error::Config(format!("layer {i} has not been trained")))
            })
            .collect::<Result<Vec<_>>>()?;
        Stack::with_params(&self.spec.layers, &self.spec.input, params)
    }
}

/// Round records and every transfer behind them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOutput {
    pub rounds: Vec<RoundLedger>,
    pub transfers: Vec<Transfer>,
}

impl RunOutput {
    pub fn final_accuracy(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.accuracy)
    }
}

/// Where trained units start from.
#[derive(Clone, Copy, Debug)]
pub enum UnitInit<'a> {
    Fresh,
    Pretrained(&'a GlobalModelState),
}

/// Unit granularity for [`train_layerwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Blocking {
    PerLayer,
    Block(usize),
}

impl Blocking {
    /// Layers per unit.
    pub fn size(self) -> usize {
        match self {
            Blocking::PerLayer => 1,
            Blocking::Block(k) => k,
        }
    }
}

/// Per-layer or block-wise training of the whole model from scratch.
pub fn train_layerwise(fed: &mut Federation, mode: Blocking) -> Result<RunOutput> {
    let plan = TrainingPlan::layerwise(&fed.spec, mode.size())?;
    run_plan(fed, &plan, UnitInit::Fresh, Protection::Enclave)
}

/// Plain federated learning of the whole model with visible updates.
pub fn train_end_to_end(fed: &mut Federation) -> Result<RunOutput> {
    let plan = TrainingPlan::end_to_end(&fed.spec);
    run_plan(fed, &plan, UnitInit::Fresh, Protection::None)
}

pub(crate) fn publish_frozen(
    fed: &mut Federation,
    layers: &[(usize, LayerParams)],
    unit: Option<usize>,
) {
    let refs: Vec<(usize, &LayerParams)> = layers.iter().map(|(i, p)| (*i, p)).collect();
    fed.ledger.record_params(
        ExposureKind::FrozenLayer,
        ExposureTag {
            unit,
            ..ExposureTag::default()
        },
        &refs,
    );
    for (i, p) in layers {
        fed.global.finalized.insert(*i, p.clone());
    }
}

/// Runs every unit of `plan` for the configured number of rounds.
pub fn run_plan(
    fed: &mut Federation,
    plan: &TrainingPlan,
    init: UnitInit<'_>,
    protection: Protection,
) -> Result<RunOutput> {
    if plan.frozen > 0 {
        let UnitInit::Pretrained(pre) = init else {
            return Err(Error::Config(
                "a frozen prefix needs pretrained weights".into(),
            ));
        };
        let frozen: Vec<(usize, LayerParams)> = fed
            .spec
            .param_layers()
            .into_iter()
            .filter(|&i| i < plan.frozen)
            .zip(pre.params_for(&fed.spec, 0..plan.frozen)?)
            .collect();
        publish_frozen(fed, &frozen, None);
    }
    let mut out = RunOutput::default();
    for (u, unit) in plan.units.iter().enumerate() {
        let is_last = u + 1 == plan.units.len();
        let mut theta = match init {
            UnitInit::Fresh => server_init_unit(&fed.spec, unit, fed.config.seed),
            UnitInit::Pretrained(pre) => pre.params_for(&fed.spec, unit.layers.clone())?,
        };
        let setup = UnitSetup::new(fed, unit, u)?;
        for r in 0..fed.config.rounds {
            let round_no = out.rounds.len() + 1;
            let (next, row, transfers) =
                federated_round(fed, &setup, &theta, round_no, protection)?;
            theta = next;
            if r + 1 < fed.config.rounds {
                if let Some(t) = &fed.trace {
                    t.record(SecretKind::RoundAggregate, &theta);
                }
            }
            out.rounds.push(row);
            out.transfers.extend(transfers);
        }
        finalize_unit(fed, unit, u, theta, is_last)?;
    }
    Ok(out)
}

/// Moves a trained unit to untrusted memory, unless it is the last unit
/// and protection is on, in which case it stays sealed.
pub(crate) fn finalize_unit(
    fed: &mut Federation,
    unit: &Unit,
    index: usize,
    theta: Vec<LayerParams>,
    is_last: bool,
) -> Result<()> {
    let ids: Vec<usize> = fed
        .spec
        .param_layers()
        .into_iter()
        .filter(|i| unit.layers.contains(i))
        .collect();
    if is_last && fed.config.protect_last_layer {
        if let Some(t) = &fed.trace {
            t.record(SecretKind::ProtectedUnit, &theta);
        }
        let mut iv = stream(fed.config.seed, "server-seal", &[index as u64]);
        let session = fed.server.enter(0)?;
        let layout = ParamLayout::of(&theta);
        let blob = session.seal(&theta, &mut iv);
        drop(session);
        fed.global.protected = Some(ProtectedUnit {
            layers: ids,
            layout,
            blob,
        });
        return Ok(());
    }
    let layers: Vec<(usize, LayerParams)> = ids.into_iter().zip(theta).collect();
    publish_frozen(fed, &layers, Some(index));
    Ok(())
}

/// Per-unit quantities shared by all rounds of the unit.
pub(crate) struct UnitSetup {
    pub unit: Unit,
    pub index: usize,
    pub layout: ParamLayout,
    pub head_layout: ParamLayout,
    pub head_init: Vec<LayerParams>,
    pub prefix: Stack,
    pub memory: u64,
}

impl UnitSetup {
    pub fn new(fed: &Federation, unit: &Unit, index: usize) -> Result<Self> {
        let theta = server_init_unit(&fed.spec, unit, fed.config.seed);
        let head_init = init_head(&fed.spec, unit, index, fed.config.seed);
        Ok(UnitSetup {
            unit: unit.clone(),
            index,
            layout: ParamLayout::of(&theta),
            head_layout: ParamLayout::of(&head_init),
            head_init,
            prefix: fed.global.prefix(&fed.spec, unit.layers.start)?,
            memory: memory_usage(&fed.spec, unit, fed.config.batch)?,
        })
    }
}

/// Selection, broadcast, local training, aggregation and evaluation.
pub(crate) fn federated_round(
    fed: &mut Federation,
    setup: &UnitSetup,
    theta: &[LayerParams],
    round_no: usize,
    protection: Protection,
) -> Result<(Vec<LayerParams>, RoundLedger, Vec<Transfer>)> {
    let started = Instant::now();
    let Federation {
        config,
        spec,
        clients,
        server,
        test,
        ledger,
        trace,
        ..
    } = fed;
    let (u, seed) = (setup.index as u64, config.seed);
    let chosen = select_clients(
        clients,
        setup.memory,
        config.fraction,
        &mut stream(seed, "select", &[u, round_no as u64]),
    )?;
    let server_bytes = 4 * setup.layout.values() as u64;
    let session = server.enter(server_bytes)?;
    let tag = ExposureTag {
        unit: Some(setup.index),
        round: Some(round_no),
        client: None,
        layer: None,
    };
    let blob = session.seal(theta, &mut stream(seed, "server-iv", &[u, round_no as u64]));
    ledger.record(
        ExposureKind::Sealed,
        tag,
        blob.wire_len() as u64,
        bytes_fingerprint(&blob.ciphertext),
        Vec::new,
    );
    if protection == Protection::None {
        record_plain(ledger, spec, &setup.unit, tag, theta);
    }
    let mut transfers: Vec<Transfer> = chosen
        .iter()
        .map(|&c| Transfer {
            round: round_no,
            unit: setup.index + 1,
            client: c,
            direction: Direction::Broadcast,
            bytes: blob.wire_len() as u64,
        })
        .collect();

    let job = UnitJob::new(
        spec,
        &setup.unit,
        setup.index,
        round_no,
        setup.layout.clone(),
        &setup.head_init,
        &setup.prefix,
        setup.memory,
        config,
        ledger,
        trace.as_ref(),
    );
    let mut selected: Vec<&mut ClientState> = clients
        .iter_mut()
        .filter(|c| chosen.contains(&c.id))
        .collect();
    let mut reports: Vec<ClientReport> = match config.scheduler {
        Scheduler::Sequential => selected
            .iter_mut()
            .map(|c| client_update(c, &job, &blob))
            .collect::<Result<_>>()?,
        Scheduler::Parallel { threads } => {
            let mut all = Vec::with_capacity(selected.len());
            for group in selected.chunks_mut(threads) {
                let results: Vec<Result<ClientReport>> = std::thread::scope(|s| {
                    let handles: Vec<_> = group
                        .iter_mut()
                        .map(|c| {
                            let (job, blob) = (&job, &blob);
                            s.spawn(move || client_update(c, job, blob))
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("client thread panicked"))
                        .collect()
                });
                for r in results {
                    all.push(r?);
                }
            }
            all
        }
    };
    reports.sort_by_key(|r| r.client);

    for r in &reports {
        let ctag = ExposureTag {
            client: Some(r.client),
            ..tag
        };
        for b in std::iter::once(&r.update).chain(&r.head) {
            ledger.record(
                ExposureKind::Sealed,
                ctag,
                b.wire_len() as u64,
                bytes_fingerprint(&b.ciphertext),
                Vec::new,
            );
            transfers.push(Transfer {
                round: round_no,
                unit: setup.index + 1,
                client: r.client,
                direction: Direction::Upload,
                bytes: b.wire_len() as u64,
            });
        }
    }
    let updates: Vec<SealedBlob> = reports.iter().map(|r| r.update.clone()).collect();
    if protection == Protection::None {
        for r in &reports {
            let plain = session.take(session.unseal(&r.update, &setup.layout)?);
            record_plain(
                ledger,
                spec,
                &setup.unit,
                ExposureTag {
                    client: Some(r.client),
                    ..tag
                },
                &plain,
            );
        }
    }
    let next = session.take(fedavg_sealed(&session, &updates, &setup.layout)?);
    let mut eval_params = next.clone();
    if !setup.head_init.is_empty() {
        let heads: Vec<SealedBlob> = reports.iter().filter_map(|r| r.head.clone()).collect();
        eval_params.extend(session.take(fedavg_sealed(&session, &heads, &setup.head_layout)?));
    }
    let mut layers = spec.layers[setup.unit.layers.clone()].to_vec();
    layers.extend_from_slice(&setup.unit.head);
    let model = Stack::with_params(
        &layers,
        &spec.shape_at(setup.unit.layers.start),
        eval_params,
    )?;
    let prefix = (!setup.prefix.specs().is_empty()).then_some(&setup.prefix);
    let acc = accuracy(prefix, &model, test)?;
    drop(session);
    let macs = reports.iter().map(|r| r.macs).sum();
    let row = account_round(
        round_no,
        setup.index + 1,
        &transfers,
        macs,
        acc,
        started.elapsed().as_secs_f64(),
    );
    Ok((next, row, transfers))
}

fn record_plain(
    ledger: &ExposureLedger,
    spec: &ModelSpec,
    unit: &Unit,
    tag: ExposureTag,
    params: &[LayerParams],
) {
    let refs: Vec<(usize, &LayerParams)> = spec
        .param_layers()
        .into_iter()
        .filter(|i| unit.layers.contains(i))
        .zip(params)
        .collect();
    ledger.record_params(ExposureKind::PlainParams, tag, &refs);
}
