//! One test per acceptance criterion. Each prints a single
//! `criterion N: PASS|FAIL` line; run with `--nocapture` to see them.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use common::*;
use teefl_core::attacks::{
    mia_confidence, AttackKind, ExposurePolicy, ModelView, ThresholdStrategy,
};
use teefl_core::costkit::Comparison;
use teefl_core::data::SynthTask;
use teefl_core::enclave::{
    ciphertext_len, encode_params, seal_bytes, seal_bytes_with_iv, sealed_len, unseal_bytes,
    ExposureKind, FederationKey, ParamLayout, SealedBlob, SecretKind,
};
use teefl_core::experiment::{
    attack_run, execute, prepare, report_runs, run_experiment, ExperimentConfig,
};
use teefl_core::network::Stack;
use teefl_core::nn::{LayerParams, ParamKind};
use teefl_core::optim::SgdConfig;
use teefl_core::proto::{
    fedavg, train_centralized, train_end_to_end, train_layerwise, Blocking, CentralConfig,
    FederationConfig,
};
use teefl_core::rng::stream;
use teefl_core::zoo::{build_model, cost_profile, TrainingPlan};
use teefl_core::Tensor;

const DESK_PER_LAYER: &str = include_str!("../../../configs/desk-per-layer.toml");
const DESK_BLOCK2: &str = include_str!("../../../configs/desk-block2.toml");
const DESK_E2E: &str = include_str!("../../../configs/desk-e2e.toml");
const DRA_E2E: &str = include_str!("../../../configs/dra-e2e.toml");
const DRA_PPFL: &str = include_str!("../../../configs/dra-ppfl.toml");

fn verdict(n: usize, ok: bool, detail: String) {
    println!(
        "criterion {n}: {} {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {n} failed: {detail}");
}

fn config(text: &str, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(text).unwrap();
    cfg.seed = seed;
    cfg
}

#[test]
fn criterion_01_gradient_correctness() {
    let started = Instant::now();
    let f64_ops = all_op_errors::<f64>(1e-6, 101);
    let f32_ops = all_op_errors::<f32>(1e-2, 102);
    let elapsed = started.elapsed().as_secs_f64();
    let worst64 = f64_ops.iter().map(|o| o.worst).fold(0.0, f64::max);
    let worst32 = f32_ops.iter().map(|o| o.worst).fold(0.0, f64::max);
    let names: Vec<&str> = f64_ops.iter().map(|o| o.name).collect();
    verdict(
        1,
        worst64 < 1e-5 && worst32 < 1e-2 && elapsed < 10.0,
        format!(
            "{} ops x {GRADIENT_INSTANCES} instances {names:?}; worst f64 {worst64:.2e} (< 1e-5), worst f32 {worst32:.2e} (< 1e-2), {elapsed:.1}s (< 10s)",
            names.len()
        ),
    );
}

#[test]
fn criterion_02_protocol_equivalence() {
    let spec = desk_lenet();
    let cfg = FederationConfig {
        clients: 1,
        rounds: 1,
        fraction: 1.0,
        epochs: 1,
        batch: 16,
        seed: 202,
        ..FederationConfig::default()
    };
    let mut fed = synth_federation(spec.clone(), cfg.clone(), 800, 100, 0.3);
    let data = fed.clients[0].data.clone();
    train_layerwise(&mut fed, Blocking::PerLayer).unwrap();
    let plan = TrainingPlan::layerwise(&spec, 1).unwrap();
    let unit = &plan.units[1];
    let prefix = spec
        .param_layers()
        .into_iter()
        .filter(|&i| i < unit.layers.start)
        .map(|i| fed.global.finalized[&i].clone())
        .collect();
    let epochs_before = cfg.rounds * cfg.epochs;
    let (expected, steps) = standalone_unit_training(
        &spec,
        &plan,
        1,
        prefix,
        &data,
        &cfg,
        cfg.rounds + 1,
        epochs_before,
    );
    let ids: Vec<usize> = spec
        .param_layers()
        .into_iter()
        .filter(|i| unit.layers.contains(i))
        .collect();
    let identical = ids.len() == expected.len()
        && ids.iter().zip(&expected).all(|(i, p)| {
            let got = &fed.global.finalized[i];
            got.flat()
                .zip(p.flat())
                .all(|(a, b)| a.to_bits() == b.to_bits())
        });
    verdict(
        2,
        identical && steps == 50,
        format!("unit 1 after {steps} SGD steps: bitwise identical = {identical}"),
    );
}

fn random_update(seed: u64) -> Vec<LayerParams> {
    let mut r = rng(seed);
    vec![
        LayerParams::new(
            ParamKind::Conv,
            uniform(&[4, 2, 3, 3], -1.0, 1.0, &mut r),
            uniform(&[4], -1.0, 1.0, &mut r),
        )
        .unwrap(),
        LayerParams::new(
            ParamKind::Fc,
            uniform(&[10, 36], -1.0, 1.0, &mut r),
            uniform(&[10], -1.0, 1.0, &mut r),
        )
        .unwrap(),
    ]
}

#[test]
fn criterion_03_fedavg_oracle() {
    let updates: Vec<_> = (0..10).map(|c| random_update(300 + c)).collect();
    let avg = fedavg(&updates).unwrap();
    let mut worst = 0.0f64;
    for (l, layer) in avg.iter().enumerate() {
        let columns: Vec<Vec<f32>> = updates.iter().map(|u| u[l].flat().collect()).collect();
        for (k, got) in layer.flat().enumerate() {
            let mean = columns.iter().map(|c| c[k] as f64).sum::<f64>() / columns.len() as f64;
            worst = worst.max((got as f64 - mean).abs());
        }
    }
    let same = fedavg(&vec![updates[0].clone(); 10]).unwrap() == updates[0];
    let mut reversed = updates.clone();
    reversed.reverse();
    let symmetric = fedavg(&updates[..2]).unwrap()
        == fedavg(&[updates[1].clone(), updates[0].clone()]).unwrap()
        && fedavg(&reversed).unwrap().iter().zip(&avg).all(|(a, b)| {
            a.flat()
                .zip(b.flat())
                .all(|(x, y)| (x as f64 - y as f64).abs() <= 1e-6)
        });
    verdict(
        3,
        worst <= 1e-6 && same && symmetric,
        format!("max deviation from f64 mean {worst:.2e} (<= 1e-6); mean of equals exact = {same}; symmetric = {symmetric}"),
    );
}

#[test]
fn criterion_04_desk_scale_learning() {
    let cfg = ExperimentConfig::from_toml(DESK_PER_LAYER).unwrap();
    let started = Instant::now();
    let mut prepared = prepare(&cfg).unwrap();
    let out = execute(&cfg, &mut prepared.federation, &prepared.public).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    let acc = out.final_accuracy();
    let fed = &prepared.federation;
    verdict(
        4,
        acc >= 0.9 && elapsed < 300.0,
        format!(
            "per-layer, {} clients, fraction {}, R={} per unit: accuracy {acc:.4} (>= 0.9) in {elapsed:.0}s (< 300s)",
            fed.config.clients, fed.config.fraction, fed.config.rounds
        ),
    );
}

#[test]
fn criterion_05_confidentiality_audit() {
    let mut detail = Vec::new();
    let mut ok = true;
    for protect in [false, true] {
        let mut cfg = ExperimentConfig::from_toml(DESK_PER_LAYER).unwrap();
        cfg.federation.rounds = 3;
        cfg.federation.protect_last_layer = protect;
        let mut prepared = prepare(&cfg).unwrap();
        execute(&cfg, &mut prepared.federation, &prepared.public).unwrap();
        let fed = &prepared.federation;
        let trace = fed.trace.as_ref().unwrap();
        let report =
            teefl_core::enclave::audit(&fed.ledger, trace, &ExposurePolicy::Ppfl.allowed_kinds());
        let kinds = trace.kinds();
        let traced = [
            SecretKind::Gradient,
            SecretKind::ClientUpdate,
            SecretKind::ClientHead,
        ]
        .iter()
        .all(|k| kinds.contains(k));
        let protected_traced = !protect || kinds.contains(&SecretKind::ProtectedUnit);
        let no_plain = !fed.ledger.kinds().contains(&ExposureKind::PlainParams);
        ok &= report.passed() && traced && protected_traced && no_plain;
        detail.push(format!(
            "protect={protect}: {} secrets checked, {} leaks, disallowed {:?}",
            report.secrets_checked,
            report.leaks.len(),
            report.disallowed_kinds
        ));
    }
    verdict(5, ok, detail.join("; "));
}

#[test]
fn criterion_06_dra_differential() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for (name, text, policy) in [
        ("e2e", DRA_E2E, ExposurePolicy::E2e),
        ("ppfl", DRA_PPFL, ExposurePolicy::Ppfl),
    ] {
        let out = dir.path().join(name);
        run_experiment(&ExperimentConfig::from_toml(text).unwrap(), &out).unwrap();
        reports.push(attack_run(&out, AttackKind::Dra, policy).unwrap());
    }
    let elapsed = started.elapsed().as_secs_f64();
    let open = reports[0].metric / reports[0].baseline;
    let sealed = reports[1].metric / reports[1].baseline;
    verdict(
        6,
        open < 0.5 && reports[0].iterations <= 2000 && (sealed - 1.0).abs() <= 0.05 && elapsed < 180.0,
        format!(
            "E2E mse/baseline {open:.4} (< 0.5) after {} iterations; PPFL mse/baseline {sealed:.4} (within 5% of 1); {elapsed:.0}s (< 180s)",
            reports[0].iterations
        ),
    );
}

const MIA_SEEDS: u64 = 5;
const MIA_MEMBERS: usize = 200;
const MIA_AUX: usize = 1000;
const MIA_NOISE: f64 = 1.1;
const MIA_EPOCHS: usize = 30;

#[test]
fn criterion_07_mia_differential() {
    let spec = desk_lenet();
    let hidden_from = spec.tail_start();
    let visible_sets = spec
        .param_layers()
        .iter()
        .filter(|&&i| i < hidden_from)
        .count();
    let schedule = CentralConfig {
        epochs: MIA_EPOCHS,
        batch: 16,
        sgd: SgdConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            decay_per_epoch: 1.0,
        },
        shuffle: true,
    };
    let (mut full, mut hidden) = (Vec::new(), Vec::new());
    for seed in 0..MIA_SEEDS {
        let task = SynthTask::new(10, seed).with_noise(MIA_NOISE);
        let members = task.generate(MIA_MEMBERS, 0).unwrap();
        let nonmembers = task.generate(MIA_MEMBERS, 1).unwrap();
        let aux = task.generate(MIA_AUX, 2).unwrap();
        let mut model = Stack::init(&spec.layers, &spec.input, |i| {
            stream(seed, "init", &[i as u64])
        })
        .unwrap();
        train_centralized(
            &mut model,
            &members,
            &schedule,
            0,
            &mut stream(seed, "train", &[]),
        )
        .unwrap();
        let params = model.into_params();
        let view = ModelView::full(&spec, params.clone()).unwrap();
        full.push(
            mia_confidence(
                &view,
                &members,
                &nonmembers,
                ThresholdStrategy::PooledMedian,
            )
            .unwrap()
            .precision,
        );
        let surrogate = ModelView::surrogate(
            &spec,
            hidden_from,
            params[..visible_sets].to_vec(),
            &aux,
            &schedule,
            seed,
        )
        .unwrap();
        hidden.push(
            mia_confidence(
                &surrogate,
                &members,
                &nonmembers,
                ThresholdStrategy::PooledMedian,
            )
            .unwrap()
            .precision,
        );
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (full_mean, hidden_mean) = (mean(&full), mean(&hidden));
    verdict(
        7,
        full_mean > 0.6 && (0.45..=0.55).contains(&hidden_mean),
        format!(
            "mean over {MIA_SEEDS} seeds: full view {full_mean:.3} (> 0.6), last layer hidden {hidden_mean:.3} (in [0.45, 0.55]); per seed full {full:.3?} hidden {hidden:.3?}"
        ),
    );
}

#[test]
fn criterion_08_cost_model() {
    let spec = desk_lenet();
    let cfg = FederationConfig {
        clients: 4,
        rounds: 2,
        fraction: 1.0,
        epochs: 2,
        batch: 16,
        seed: 808,
        ..FederationConfig::default()
    };
    let samples = 64;
    let mut measured_ok = true;
    let mut detail = Vec::new();
    for (name, blocking) in [
        ("per-layer", Some(Blocking::PerLayer)),
        ("block2", Some(Blocking::Block(2))),
        ("e2e", None),
    ] {
        let mut fed = synth_federation(spec.clone(), cfg.clone(), cfg.clients * samples, 50, 0.3);
        let (out, plan) = match blocking {
            Some(b) => (
                train_layerwise(&mut fed, b).unwrap(),
                TrainingPlan::layerwise(&spec, b.size()).unwrap(),
            ),
            None => (
                train_end_to_end(&mut fed).unwrap(),
                TrainingPlan::end_to_end(&spec),
            ),
        };
        let profile = cost_profile(&spec, &plan, cfg.batch, samples, cfg.epochs).unwrap();
        for row in &out.rounds {
            let expected = match blocking {
                Some(_) => profile.unit_total(row.unit - 1),
                None => profile.end_to_end_total(),
            };
            measured_ok &= row.cost_units_client == cfg.clients as u64 * expected;
        }
        let measured: u64 = out.rounds.iter().map(|r| r.cost_units_client).sum();
        let per_client = match blocking {
            Some(_) => profile.layerwise_total(),
            None => profile.end_to_end_total(),
        };
        let closed = (cfg.rounds * cfg.clients) as u64 * per_client;
        measured_ok &= measured == closed;
        detail.push(format!("{name} measured {measured} = closed form {closed}"));
    }
    let mut dominates = true;
    let (mut lw, mut e2e) = (0, 0);
    for name in ["lenet", "alexnet", "vgg9"] {
        let zoo = build_model(name).unwrap();
        let one = cost_profile(&zoo, &TrainingPlan::end_to_end(&zoo), 16, 600, 1)
            .unwrap()
            .end_to_end_total();
        let each = cost_profile(&zoo, &TrainingPlan::layerwise(&zoo, 1).unwrap(), 16, 600, 1)
            .unwrap()
            .layerwise_total();
        dominates &= each >= one;
        detail.push(format!(
            "{name} Eq2/Eq1 = {each}/{one} = {:.3}",
            each as f64 / one as f64
        ));
        if name == "lenet" {
            (lw, e2e) = (each, one);
        }
    }
    let lenet_ratio = lw as f64 / e2e as f64;
    let ratio_ok = lw >= 3 * e2e;
    verdict(
        8,
        measured_ok && dominates && ratio_ok,
        format!(
            "measured = closed form: {measured_ok}; Eq2 >= Eq1 for all zoo models: {dominates}; LeNet ratio {lenet_ratio:.3} (>= 3: {ratio_ok}); {}",
            detail.join(", ")
        ),
    );
}

const COMM_SEEDS: [u64; 3] = [1, 2, 3];

fn desk_runs(root: &std::path::Path, seed: u64, tag: &str) -> Vec<PathBuf> {
    [
        ("e2e", DESK_E2E),
        ("per-layer", DESK_PER_LAYER),
        ("block2", DESK_BLOCK2),
    ]
    .iter()
    .map(|(name, text)| {
        let dir = root.join(format!("{tag}-{seed}-{name}"));
        run_experiment(&config(text, seed), &dir).unwrap();
        dir
    })
    .collect()
}

fn round_ratio(c: &Option<Comparison>) -> f64 {
    c.as_ref().map_or(f64::INFINITY, |c| c.round_ratio)
}

#[test]
fn criterion_09_communication_accounting() {
    let root = tempfile::tempdir().unwrap();
    let mut ordered = true;
    let mut detail = Vec::new();
    let mut first = None;
    for seed in COMM_SEEDS {
        let dirs = desk_runs(root.path(), seed, "a");
        let rows = report_runs(&dirs, Some(COMM_TARGET)).unwrap();
        let (per_layer, block2) = (
            round_ratio(&rows[1].comparison),
            round_ratio(&rows[2].comparison),
        );
        ordered &= block2.is_finite() && block2 <= per_layer;
        detail.push(format!(
            "seed {seed}: per-layer {per_layer:.3}, block2 {block2:.3} (acc {:.3}/{:.3}/{:.3})",
            rows[0].final_accuracy, rows[1].final_accuracy, rows[2].final_accuracy
        ));
        first.get_or_insert(rows);
    }
    let again = report_runs(
        &desk_runs(root.path(), COMM_SEEDS[0], "b"),
        Some(COMM_TARGET),
    )
    .unwrap();
    let reference = first.unwrap();
    let bits = |rows: &[teefl_core::costkit::SummaryRow]| -> Vec<Option<(u64, u64, usize, u64)>> {
        rows.iter()
            .map(|r| {
                r.comparison.as_ref().map(|c| {
                    (
                        c.round_ratio.to_bits(),
                        c.traffic_ratio.to_bits(),
                        c.rounds,
                        c.bytes,
                    )
                })
            })
            .collect()
    };
    let reproducible = bits(&reference) == bits(&again);
    verdict(
        9,
        ordered && reproducible,
        format!(
            "target {COMM_TARGET}; bit-exact rerun: {reproducible}; block2 <= per-layer round ratio: {ordered}; {}",
            detail.join("; ")
        ),
    );
}

const COMM_TARGET: f64 = 0.9;

/// Published CBC-AES128 vectors (NIST SP 800-38A, F.2.1) followed by the
/// PKCS#7 block for a 64-byte message.
const NIST_KEY: &str = "2b7e151628aed2a6abf7158809cf4f3c";
const NIST_PLAIN: &str = "6bc1bee22e409f96e93d7e117393172aae2d8a571e03ac9c9eb76fac45af8e5130c81c46a35ce411e5fbc1191a0a52eff69f2445df4f9b17ad2b417be66c3710";
const NIST_CIPHER: &str = "7649abac8119b246cee98e9b12e9197d5086cb9b507219ee95db113a917678b273bed6b8e3c1743b7116e69e222295163ff1caa1681fac09120eca307586e1a78cb82807230e1321d3fae00d18cc2012";
/// Fixture key, IV 00..0f, FC weights [[0.5, -1], [2, 0.25]] and biases [0, 1.5].
const FIXTURE_CIPHER: &str = "948164a2e525fc6503d2fcdc2b2fc06c7f8a7c786611aced10fec6fa0add4bda";

fn counting_iv() -> [u8; 16] {
    std::array::from_fn(|i| i as u8)
}

#[test]
fn criterion_10_sealing_format() {
    let mut tensors = 0;
    let mut lossless = true;
    let mut sizes = true;
    for name in ["lenet", "alexnet", "vgg9"] {
        let spec = build_model(name).unwrap();
        let stack: Stack = Stack::init(&spec.layers, &spec.input, |i| {
            stream(1010, "zoo", &[i as u64])
        })
        .unwrap();
        let mut iv = stream(1010, "iv", &[]);
        for p in stack.params() {
            for t in [&p.weights, &p.biases] {
                let single = LayerParams::new(p.kind, t.clone(), Tensor::zeros(&[0]))
                    .unwrap_or_else(|_| p.clone());
                let bytes = encode_params(std::slice::from_ref(&single));
                let blob = seal_bytes(&FederationKey::FIXTURE, &bytes, &mut iv);
                let wire = blob.to_bytes();
                let back = SealedBlob::from_bytes(&wire).unwrap();
                lossless &= unseal_bytes(&FederationKey::FIXTURE, &back).unwrap() == bytes;
                sizes &= blob.ciphertext.len() == ciphertext_len(bytes.len())
                    && wire.len() == sealed_len(bytes.len())
                    && ciphertext_len(bytes.len()) == 16 * (bytes.len() / 16 + 1);
                tensors += 1;
            }
            let layout = ParamLayout::of(std::slice::from_ref(p));
            let blob = seal_bytes(
                &FederationKey::FIXTURE,
                &encode_params(std::slice::from_ref(p)),
                &mut iv,
            );
            let decoded = teefl_core::enclave::decode_params(
                &unseal_bytes(&FederationKey::FIXTURE, &blob).unwrap(),
                &layout,
            )
            .unwrap();
            lossless &= decoded[0] == *p;
        }
    }
    let nist_key: [u8; 16] = hex::decode(NIST_KEY).unwrap().try_into().unwrap();
    let nist = seal_bytes_with_iv(
        &FederationKey::new(nist_key),
        counting_iv(),
        &hex::decode(NIST_PLAIN).unwrap(),
    );
    let nist_ok = hex::encode(&nist.ciphertext) == NIST_CIPHER;
    let fixture = LayerParams::new(
        ParamKind::Fc,
        Tensor::from_vec(&[2, 2], vec![0.5, -1.0, 2.0, 0.25]).unwrap(),
        Tensor::from_vec(&[2], vec![0.0, 1.5]).unwrap(),
    )
    .unwrap();
    let blob = seal_bytes_with_iv(
        &FederationKey::FIXTURE,
        counting_iv(),
        &encode_params(&[fixture]),
    );
    let fixture_ok = hex::encode(&blob.ciphertext) == FIXTURE_CIPHER && blob.iv == counting_iv();
    verdict(
        10,
        lossless && sizes && nist_ok && fixture_ok && tensors > 0,
        format!(
            "{tensors} zoo tensors lossless: {lossless}; size formula exact: {sizes}; NIST CBC vectors: {nist_ok}; fixed-IV fixture: {fixture_ok}"
        ),
    );
}
