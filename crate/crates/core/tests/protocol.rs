mod common;

use std::collections::BTreeSet;

use common::*;
use teefl_core::data::{Dataset, SynthTask};
use teefl_core::enclave::{audit, ExposureKind};
use teefl_core::network::Stack;
use teefl_core::proto::{
    public_data_bootstrap, run_plan, server_init_unit, train_centralized, train_end_to_end,
    train_layerwise, transfer_bootstrap, Blocking, CentralConfig, Federation, FederationConfig,
    GlobalModelState, Protection, UnitInit,
};
use teefl_core::rng::stream;
use teefl_core::zoo::{memory_usage, ModelSpec, TrainingPlan};
use teefl_core::Error;

fn small_spec() -> ModelSpec {
    ModelSpec::from_arch(
        "small",
        "C4-MP-C6-MP-FC16-FC10",
        &[1, 14, 14],
        teefl_core::zoo::ArchOptions {
            kernel: 5,
            pad: 2,
            pool_window: 2,
        },
    )
    .unwrap()
}

fn config(clients: usize, rounds: usize, fraction: f64) -> FederationConfig {
    FederationConfig {
        clients,
        rounds,
        fraction,
        epochs: 1,
        batch: 16,
        seed: 11,
        ..FederationConfig::default()
    }
}

fn plain_federation(spec: ModelSpec, cfg: FederationConfig, train: usize) -> Federation {
    synth_federation(spec, cfg, train, 100, 0.3)
}

#[test]
fn single_client_matches_standalone_training_bitwise() {
    let spec = small_spec();
    let cfg = config(1, 1, 1.0);
    let mut fed = plain_federation(spec.clone(), cfg.clone(), 160);
    let data = fed.clients[0].data.clone();
    train_layerwise(&mut fed, Blocking::PerLayer).unwrap();
    let plan = TrainingPlan::layerwise(&spec, 1).unwrap();
    let prefix_ids: Vec<usize> = spec
        .param_layers()
        .into_iter()
        .filter(|&i| i < plan.units[1].layers.start)
        .collect();
    let prefix = prefix_ids
        .iter()
        .map(|i| fed.global.finalized[i].clone())
        .collect();
    let (expected, steps) = standalone_unit_training(&spec, &plan, 1, prefix, &data, &cfg, 2, 1);
    assert_eq!(steps, 10);
    let unit_ids: Vec<usize> = spec
        .param_layers()
        .into_iter()
        .filter(|i| plan.units[1].layers.contains(i))
        .collect();
    assert_eq!(unit_ids.len(), expected.len());
    for (i, p) in unit_ids.iter().zip(&expected) {
        assert_eq!(&fed.global.finalized[i], p, "layer {i}");
    }
}

#[test]
fn zero_local_epochs_keep_the_initial_unit() {
    let spec = small_spec();
    let mut cfg = config(2, 1, 1.0);
    cfg.epochs = 0;
    let mut fed = plain_federation(spec.clone(), cfg.clone(), 64);
    train_layerwise(&mut fed, Blocking::PerLayer).unwrap();
    let plan = TrainingPlan::layerwise(&spec, 1).unwrap();
    for unit in &plan.units {
        let init = server_init_unit(&spec, unit, cfg.seed);
        let ids: Vec<usize> = spec
            .param_layers()
            .into_iter()
            .filter(|i| unit.layers.contains(i))
            .collect();
        for (i, p) in ids.iter().zip(&init) {
            assert_eq!(&fed.global.finalized[i], p);
        }
    }
}

#[test]
fn units_finalize_in_order_and_stay_fixed() {
    let spec = small_spec();
    let cfg = config(4, 2, 0.5);
    let mut fed = plain_federation(spec.clone(), cfg, 128);
    train_layerwise(&mut fed, Blocking::PerLayer).unwrap();
    let frozen: Vec<_> = fed
        .ledger
        .snapshot()
        .into_iter()
        .filter(|e| e.kind == ExposureKind::FrozenLayer)
        .collect();
    let units: Vec<usize> = frozen.iter().map(|e| e.unit.unwrap()).collect();
    let mut sorted = units.clone();
    sorted.sort_unstable();
    assert_eq!(units, sorted);
    let layers: Vec<usize> = frozen.iter().map(|e| e.layer.unwrap()).collect();
    assert_eq!(layers, spec.param_layers());
    for e in &frozen {
        let p = &fed.global.finalized[&e.layer.unwrap()];
        assert_eq!(teefl_core::enclave::params_fingerprint(p), e.digest);
    }
    let rounds: Vec<usize> = fed
        .ledger
        .snapshot()
        .iter()
        .filter(|e| e.kind == ExposureKind::FrozenActivations)
        .filter_map(|e| e.unit.map(|u| (u, e.round.unwrap())))
        .map(|(u, r)| {
            assert!(r > 2 * u && r <= 2 * u + 2);
            r
        })
        .collect();
    assert!(!rounds.is_empty());
}

#[test]
fn layerwise_audit_allows_only_frozen_exposures() {
    let mut cfg = config(4, 2, 0.5);
    cfg.audit = true;
    let mut fed = plain_federation(small_spec(), cfg, 128);
    train_layerwise(&mut fed, Blocking::Block(2)).unwrap();
    let allowed: BTreeSet<_> = [
        ExposureKind::Sealed,
        ExposureKind::FrozenLayer,
        ExposureKind::FrozenActivations,
    ]
    .into();
    let report = audit(&fed.ledger, fed.trace.as_ref().unwrap(), &allowed);
    assert!(report.passed(), "{report:?}");
    assert!(report.secrets_checked > 0);
}

#[test]
fn end_to_end_exposes_plain_parameters() {
    let mut cfg = config(4, 2, 0.5);
    cfg.audit = true;
    let mut fed = plain_federation(small_spec(), cfg, 128);
    train_end_to_end(&mut fed).unwrap();
    assert!(fed.ledger.kinds().contains(&ExposureKind::PlainParams));
    let allowed: BTreeSet<_> = [
        ExposureKind::Sealed,
        ExposureKind::FrozenLayer,
        ExposureKind::FrozenActivations,
    ]
    .into();
    assert!(!audit(&fed.ledger, fed.trace.as_ref().unwrap(), &allowed).passed());
}

#[test]
fn protected_last_unit_is_never_published() {
    let spec = small_spec();
    let mut cfg = config(4, 2, 1.0);
    cfg.audit = true;
    cfg.protect_last_layer = true;
    let mut fed = plain_federation(spec.clone(), cfg, 128);
    train_layerwise(&mut fed, Blocking::PerLayer).unwrap();
    let protected = fed.global.protected.clone().unwrap();
    let last = *spec.param_layers().last().unwrap();
    assert!(protected.layers.contains(&last));
    for i in &protected.layers {
        assert!(!fed.global.finalized.contains_key(i));
    }
    let allowed: BTreeSet<_> = [
        ExposureKind::Sealed,
        ExposureKind::FrozenLayer,
        ExposureKind::FrozenActivations,
    ]
    .into();
    let report = audit(&fed.ledger, fed.trace.as_ref().unwrap(), &allowed);
    assert!(report.passed(), "{report:?}");
    assert!(fed
        .ledger
        .snapshot()
        .iter()
        .all(|e| e.layer.is_none_or(|l| !protected.layers.contains(&l))));
    let model = fed.final_model().unwrap();
    assert_eq!(model.params().len(), spec.param_layers().len());
}

#[test]
fn transfer_keeps_pretrained_convolutions_bitwise() {
    let spec = small_spec();
    let mut fed = plain_federation(spec.clone(), config(4, 1, 1.0), 128);
    train_end_to_end(&mut fed).unwrap();
    let pretrained = fed.global.clone();
    let mut fed = plain_federation(spec.clone(), config(4, 2, 0.5), 128);
    let plan = transfer_bootstrap(&pretrained, &spec, 2, 1).unwrap();
    run_plan(
        &mut fed,
        &plan,
        UnitInit::Pretrained(&pretrained),
        Protection::Enclave,
    )
    .unwrap();
    for i in spec.param_layers() {
        if spec.layers[i].is_conv() {
            assert_eq!(fed.global.finalized[&i], pretrained.finalized[&i]);
        } else {
            assert_ne!(fed.global.finalized[&i], pretrained.finalized[&i]);
        }
    }
}

#[test]
fn transfer_without_pretrained_weights_is_rejected() {
    let spec = small_spec();
    let mut fed = plain_federation(spec.clone(), config(2, 1, 1.0), 32);
    let plan = TrainingPlan::transfer(&spec, 1, 1).unwrap();
    assert!(matches!(
        run_plan(&mut fed, &plan, UnitInit::Fresh, Protection::Enclave),
        Err(Error::Config(_))
    ));
    assert!(transfer_bootstrap(&GlobalModelState::default(), &spec, 1, 1).is_err());
}

#[test]
fn public_bootstrap_trains_the_tail_federatedly() {
    let spec = small_spec();
    let cfg = config(4, 3, 0.5);
    let public = SynthTask::new(10, 99).generate(64, 0).unwrap();
    let mut fed = plain_federation(spec.clone(), cfg, 128);
    let out = public_data_bootstrap(&mut fed, &public, 2).unwrap();
    assert_eq!(out.rounds.len(), 3);
    assert!(!out.transfers.is_empty());
    assert_eq!(
        fed.final_model().unwrap().params().len(),
        spec.param_layers().len()
    );
}

#[test]
fn public_bootstrap_without_client_data_is_centralized() {
    let spec = small_spec();
    let cfg = config(2, 3, 1.0);
    let public = SynthTask::new(10, cfg.seed).generate(160, 0).unwrap();
    let test = SynthTask::new(10, cfg.seed).generate(100, 1).unwrap();
    let shards = vec![Dataset::empty(&spec.input), Dataset::empty(&spec.input)];
    let mut fed =
        Federation::new(cfg.clone(), spec.clone(), shards, &[1 << 30, 1 << 30], test).unwrap();
    let out = public_data_bootstrap(&mut fed, &public, 2).unwrap();
    assert!(out.transfers.is_empty());
    assert!(out.rounds.iter().all(|r| r.bytes() == 0));

    let whole = teefl_core::zoo::Unit {
        layers: 0..spec.layers.len(),
        head: Vec::new(),
    };
    let mut central = Stack::with_params(
        &spec.layers,
        &spec.input,
        server_init_unit(&spec, &whole, cfg.seed),
    )
    .unwrap();
    let schedule = CentralConfig {
        epochs: cfg.epochs,
        batch: cfg.batch,
        sgd: cfg.sgd,
        shuffle: true,
    };
    for r in 0..cfg.rounds {
        let mut rng = stream(cfg.seed, "server-train", &[r as u64]);
        train_centralized(&mut central, &public, &schedule, r * cfg.epochs, &mut rng).unwrap();
    }
    assert_eq!(fed.final_model().unwrap().params(), central.params());
}

#[test]
fn clients_without_enough_enclave_memory_sit_out() {
    let spec = small_spec();
    let cfg = config(3, 2, 1.0);
    let plan = TrainingPlan::layerwise(&spec, 1).unwrap();
    let needed = plan
        .units
        .iter()
        .map(|u| memory_usage(&spec, u, cfg.batch).unwrap())
        .max()
        .unwrap();
    let task = SynthTask::new(10, cfg.seed);
    let shards: Vec<Dataset> = (0..3).map(|d| task.generate(32, d).unwrap()).collect();
    let test = task.generate(50, 9).unwrap();
    let mut fed = Federation::new(
        cfg,
        spec.clone(),
        shards,
        &[needed, needed - 1, needed],
        test,
    )
    .unwrap();
    let out = train_layerwise(&mut fed, Blocking::PerLayer).unwrap();
    let largest = plan
        .units
        .iter()
        .position(|u| memory_usage(&spec, u, 16).unwrap() == needed)
        .unwrap();
    let in_largest: Vec<_> = out
        .transfers
        .iter()
        .filter(|t| t.unit == largest + 1)
        .collect();
    assert!(!in_largest.is_empty());
    assert!(in_largest.iter().all(|t| t.client != 1));
    assert!(out.transfers.iter().any(|t| t.client == 2));
}

#[test]
fn no_eligible_client_is_an_error() {
    let spec = small_spec();
    let cfg = config(2, 1, 1.0);
    let task = SynthTask::new(10, cfg.seed);
    let shards: Vec<Dataset> = (0..2).map(|d| task.generate(16, d).unwrap()).collect();
    let test = task.generate(20, 9).unwrap();
    let mut fed = Federation::new(cfg, spec, shards, &[1024, 1024], test).unwrap();
    assert!(matches!(
        train_layerwise(&mut fed, Blocking::PerLayer),
        Err(Error::NoEligibleClients {
            max_budget: 1024,
            ..
        })
    ));
}

#[test]
fn runs_are_deterministic() {
    let run = || {
        let mut fed = plain_federation(small_spec(), config(4, 2, 0.5), 96);
        let out = train_layerwise(&mut fed, Blocking::Block(2)).unwrap();
        (out.transfers, fed.global.finalized)
    };
    assert_eq!(run(), run());
}
