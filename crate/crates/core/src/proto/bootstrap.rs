use super::central::{train_centralized, CentralConfig};
use super::config::Protection;
use super::server::{accuracy, server_init_unit};
use super::state::GlobalModelState;
use super::train::{
    federated_round, finalize_unit, publish_frozen, Federation, RunOutput, UnitSetup,
};
use crate::costkit::account_round;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::Stack;
use crate::nn::LayerParams;
use crate::rng::stream;
use crate::zoo::{ModelSpec, TrainingPlan, Unit};

impl GlobalModelState {
    /// Treats a fully trained model as finalized.
    pub fn from_model(spec: &ModelSpec, params: Vec<LayerParams>) -> Result<Self> {
        let ids = spec.param_layers();
        if ids.len() != params.len() {
            return Err(Error::Shape(format!(
                "{} parameter sets for {} parameterized layers",
                params.len(),
                ids.len()
            )));
        }
        Ok(GlobalModelState {
            finalized: ids.into_iter().zip(params).collect(),
            protected: None,
        })
    }
}

/// Plan that keeps the pretrained layers frozen and retrains only the last
/// `train_tail` parameterized layers; start the run from the pretrained
/// weights with `UnitInit::Pretrained`.
pub fn transfer_bootstrap(
    pretrained: &GlobalModelState,
    spec: &ModelSpec,
    train_tail: usize,
    block: usize,
) -> Result<TrainingPlan> {
    pretrained.params_for(spec, 0..spec.layers.len())?;
    TrainingPlan::transfer(spec, train_tail, block)
}

/// The server retrains the complete model on its public data before every
/// round and publishes the layers before the tail; clients then train the
/// last `tail_layers` parameterized layers in their enclaves. With no client
/// data this is centralized training on the public set.
pub fn public_data_bootstrap(
    fed: &mut Federation,
    public: &Dataset,
    tail_layers: usize,
) -> Result<RunOutput> {
    let spec = fed.spec.clone();
    let plan = TrainingPlan::transfer(&spec, tail_layers, usize::MAX)?;
    if plan.frozen == 0 || plan.units.len() != 1 {
        return Err(Error::Config(format!(
            "public bootstrap needs a dense tail; {tail_layers} layers reach into the convolutions"
        )));
    }
    let unit = plan.units[0].clone();
    let whole = Unit {
        layers: 0..spec.layers.len(),
        head: Vec::new(),
    };
    let mut model = Stack::with_params(
        &spec.layers,
        &spec.input,
        server_init_unit(&spec, &whole, fed.config.seed),
    )?;
    let frozen_sets = spec
        .param_layers()
        .iter()
        .filter(|&&i| i < plan.frozen)
        .count();
    let central = CentralConfig {
        epochs: fed.config.epochs,
        batch: fed.config.batch,
        sgd: fed.config.sgd,
        shuffle: fed.config.shuffle,
    };
    let federated = fed.clients.iter().any(|c| !c.data.is_empty());
    let mut server_epochs = 0;
    let mut out = RunOutput::default();
    for r in 0..fed.config.rounds {
        let round_no = r + 1;
        if !public.is_empty() {
            let mut rng = stream(fed.config.seed, "server-train", &[r as u64]);
            train_centralized(&mut model, public, &central, server_epochs, &mut rng)?;
            server_epochs += central.epochs;
        }
        let frozen: Vec<(usize, LayerParams)> = spec
            .param_layers()
            .into_iter()
            .zip(model.params()[..frozen_sets].iter().cloned())
            .collect();
        publish_frozen(fed, &frozen, None);
        let theta = model.params()[frozen_sets..].to_vec();
        let setup = UnitSetup::new(fed, &unit, 0)?;
        let (theta, row) = if federated {
            let (next, row, transfers) =
                federated_round(fed, &setup, &theta, round_no, Protection::Enclave)?;
            out.transfers.extend(transfers);
            (next, row)
        } else {
            let tail = Stack::with_params(
                &spec.layers[unit.layers.clone()],
                &spec.shape_at(unit.layers.start),
                theta.clone(),
            )?;
            let acc = accuracy(Some(&setup.prefix), &tail, &fed.test)?;
            (theta, account_round(round_no, 1, &[], 0, acc, 0.0))
        };
        model.params_mut()[frozen_sets..].clone_from_slice(&theta);
        out.rounds.push(row);
    }
    let theta = model.params()[frozen_sets..].to_vec();
    finalize_unit(fed, &unit, 0, theta, true)?;
    Ok(out)
}
