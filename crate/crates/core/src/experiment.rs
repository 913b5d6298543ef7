//! File-driven experiments: configuration, run directories, attacks on
//! recorded runs and cross-run reports.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{
    dra_invert, mia_confidence, AttackKind, AttackReport, AttackerView, DraConfig, ExposurePolicy,
    ModelView, ThresholdStrategy,
};
use crate::costkit::{
    compare_to_e2e, read_jsonl, summary_table, write_jsonl, RoundLedger, SummaryRow, Transfer,
};
use crate::data::{
    load_cifar_batches, load_idx, partition, Dataset, PartitionPlan, Scheme, SynthTask,
};
use crate::enclave::{audit, AuditReport, Exposure, DEFAULT_BUDGET};
use crate::error::{Error, Result};
use crate::optim::SgdConfig;
use crate::proto::{
    config_hash, public_data_bootstrap, run_plan, train_end_to_end, train_layerwise,
    transfer_bootstrap, Blocking, CentralConfig, Checkpoint, Federation, FederationConfig,
    Protection, RunOutput, UnitInit,
};
use crate::rng::stream;
use crate::zoo::{ArchOptions, ModelSpec, ZooModel};

/// Everything one `train` invocation needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub federation: FederationParams,
    pub mode: Mode,
}

/// A zoo model by name, optionally reshaped; any other name needs `arch`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pad: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<usize>,
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelSpec> {
        let zoo = self.name.parse::<ZooModel>().ok();
        let arch = match (&self.arch, zoo) {
            (Some(a), _) => a.clone(),
            (None, Some(z)) => z.architecture().to_string(),
            (None, None) => return Err(Error::UnknownModel(self.name.clone())),
        };
        let base = zoo.map(ZooModel::default_options).unwrap_or_default();
        let opts = ArchOptions {
            kernel: self.kernel.unwrap_or(base.kernel),
            pad: self.pad.unwrap_or(base.pad),
            pool_window: self.pool.unwrap_or(base.pool_window),
        };
        let input = match (&self.input, zoo) {
            (Some(i), _) => i.clone(),
            (None, Some(z)) => z.default_input().to_vec(),
            (None, None) => {
                return Err(Error::Config(format!(
                    "model `{}` needs an input shape",
                    self.name
                )))
            }
        };
        ModelSpec::from_arch(&self.name, &arch, &input, opts)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic {
        #[serde(default = "ten")]
        classes: usize,
        train: usize,
        test: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default)]
        partition: PartitionKind,
    },
    Mnist {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        partition: PartitionKind,
    },
    Cifar {
        train_batches: Vec<PathBuf>,
        test_batches: Vec<PathBuf>,
        #[serde(default)]
        partition: PartitionKind,
    },
}

fn ten() -> usize {
    10
}

fn default_noise() -> f64 {
    SynthTask::new(10, 0).noise
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PartitionKind {
    #[default]
    Iid,
    NonIid {
        #[serde(default = "two")]
        classes_per_client: usize,
    },
}

fn two() -> usize {
    2
}

impl DataConfig {
    fn partition(&self) -> PartitionKind {
        match self {
            DataConfig::Synthetic { partition, .. }
            | DataConfig::Mnist { partition, .. }
            | DataConfig::Cifar { partition, .. } => *partition,
        }
    }

    /// Train and test sets, read from disk or generated from `seed`.
    pub fn load(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        match self {
            DataConfig::Synthetic {
                classes,
                train,
                test,
                noise,
                ..
            } => SynthTask::new(*classes, seed)
                .with_noise(*noise)
                .split(*train, *test),
            DataConfig::Mnist {
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => Ok((
                load_idx(train_images, train_labels)?,
                load_idx(test_images, test_labels)?,
            )),
            DataConfig::Cifar {
                train_batches,
                test_batches,
                ..
            } => Ok((
                load_cifar_batches(train_batches)?,
                load_cifar_batches(test_batches)?,
            )),
        }
    }
}

/// Federation hyperparameters as written in a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationParams {
    pub clients: usize,
    pub rounds: usize,
    pub fraction: f64,
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub decay: f64,
    pub protect_last_layer: bool,
    pub retain_payloads: bool,
    /// One budget for every client, or one per client.
    pub tee_budget_bytes: Budgets,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Budgets {
    Uniform(u64),
    PerClient(Vec<u64>),
}

impl Default for FederationParams {
    fn default() -> Self {
        let base = FederationConfig::default();
        FederationParams {
            clients: base.clients,
            rounds: base.rounds,
            fraction: base.fraction,
            epochs: base.epochs,
            batch: base.batch,
            learning_rate: base.sgd.learning_rate,
            momentum: base.sgd.momentum,
            decay: base.sgd.decay_per_epoch,
            protect_last_layer: false,
            retain_payloads: false,
            tee_budget_bytes: Budgets::Uniform(DEFAULT_BUDGET),
        }
    }
}

impl FederationParams {
    pub fn to_config(&self, seed: u64) -> FederationConfig {
        FederationConfig {
            clients: self.clients,
            rounds: self.rounds,
            fraction: self.fraction,
            epochs: self.epochs,
            batch: self.batch,
            sgd: SgdConfig {
                learning_rate: self.learning_rate,
                momentum: self.momentum,
                decay_per_epoch: self.decay,
            },
            seed,
            protect_last_layer: self.protect_last_layer,
            retain_payloads: self.retain_payloads,
            ..FederationConfig::default()
        }
    }

    pub fn budgets(&self) -> Result<Vec<u64>> {
        match &self.tee_budget_bytes {
            Budgets::Uniform(b) => Ok(vec![*b; self.clients]),
            Budgets::PerClient(v) if v.len() == self.clients => Ok(v.clone()),
            Budgets::PerClient(v) => Err(Error::Config(format!(
                "{} budgets listed for {} clients",
                v.len(),
                self.clients
            ))),
        }
    }
}

/// Which training procedure to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Mode {
    PerLayer,
    Block {
        size: usize,
    },
    EndToEnd,
    /// Retrain the last `train_tail` parameterized layers of a checkpoint.
    Transfer {
        pretrained: PathBuf,
        train_tail: usize,
        #[serde(default = "one")]
        block: usize,
    },
    /// Hand `fraction` of the training data to the server as public data.
    PublicBootstrap {
        fraction: f64,
        tail_layers: usize,
    },
}

fn one() -> usize {
    1
}

impl Mode {
    pub fn is_end_to_end(&self) -> bool {
        matches!(self, Mode::EndToEnd)
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.build()?;
        self.federation.to_config(self.seed).validate()?;
        self.federation.budgets()?;
        match &self.mode {
            Mode::Block { size: 0 } => Err(Error::Config("block size must be positive".into())),
            Mode::PublicBootstrap { fraction, .. } if !(0.0..=1.0).contains(fraction) => {
                Err(Error::Config(format!(
                    "public fraction must lie in [0, 1], got {fraction}"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// The federation a config describes, plus the server's public data.
pub struct Prepared {
    pub federation: Federation,
    pub public: Dataset,
    pub train: Dataset,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let spec = cfg.model.build()?;
    let (mut train, test) = cfg.data.load(cfg.seed)?;
    let mut public = Dataset::empty(train.sample_shape());
    if let Mode::PublicBootstrap { fraction, .. } = cfg.mode {
        let n = (fraction * train.len() as f64).round() as usize;
        (public, train) = train.split_at(n);
    }
    let plan = PartitionPlan {
        n_clients: cfg.federation.clients,
        scheme: match cfg.data.partition() {
            PartitionKind::Iid => Scheme::Iid,
            PartitionKind::NonIid { classes_per_client } => Scheme::NonIid { classes_per_client },
        },
        seed: cfg.seed,
    };
    let shards = partition(&train.labels, &plan)?
        .iter()
        .map(|idx| train.subset(idx))
        .collect();
    let mut config = cfg.federation.to_config(cfg.seed);
    config.audit = !cfg.mode.is_end_to_end();
    let federation = Federation::new(config, spec, shards, &cfg.federation.budgets()?, test)?;
    Ok(Prepared {
        federation,
        public,
        train,
    })
}

pub fn execute(
    cfg: &ExperimentConfig,
    fed: &mut Federation,
    public: &Dataset,
) -> Result<RunOutput> {
    match &cfg.mode {
        Mode::PerLayer => train_layerwise(fed, Blocking::PerLayer),
        Mode::Block { size } => train_layerwise(fed, Blocking::Block(*size)),
        Mode::EndToEnd => train_end_to_end(fed),
        Mode::Transfer {
            pretrained,
            train_tail,
            block,
        } => {
            let ckpt = Checkpoint::load(pretrained)?;
            if ckpt.model.layers != fed.spec.layers {
                return Err(Error::Config(format!(
                    "{} holds a different architecture",
                    pretrained.display()
                )));
            }
            let state = ckpt.state();
            let plan = transfer_bootstrap(&state, &fed.spec, *train_tail, *block)?;
            run_plan(
                fed,
                &plan,
                UnitInit::Pretrained(&state),
                Protection::Enclave,
            )
        }
        Mode::PublicBootstrap { tail_layers, .. } => {
            public_data_bootstrap(fed, public, *tail_layers)
        }
    }
}

/// Metadata written next to the artifacts of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub config: ExperimentConfig,
    pub config_sha256: String,
    pub model: String,
    pub final_accuracy: f64,
    pub rounds: usize,
    pub bytes: u64,
    pub audit: Option<AuditReport>,
}

pub const RUN_FILE: &str = "run.json";
pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const TRANSFER_FILE: &str = "transfers.jsonl";
pub const EXPOSURE_FILE: &str = "exposure.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

fn canonical_hash(cfg: &ExperimentConfig) -> Result<String> {
    Ok(config_hash(serde_json::to_string(cfg)?.as_bytes()))
}

/// Trains the configured experiment and writes its run directory.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<RunInfo> {
    cfg.validate()?;
    let Prepared {
        mut federation,
        public,
        ..
    } = prepare(cfg)?;
    let output = execute(cfg, &mut federation, &public)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let hash = canonical_hash(cfg)?;
    let audit = federation.trace.as_ref().map(|trace| {
        audit(
            &federation.ledger,
            trace,
            &ExposurePolicy::Ppfl.allowed_kinds(),
        )
    });
    let info = RunInfo {
        config: cfg.clone(),
        config_sha256: hash.clone(),
        model: federation.spec.name.clone(),
        final_accuracy: output.final_accuracy(),
        rounds: output.rounds.len(),
        bytes: output.rounds.iter().map(RoundLedger::bytes).sum(),
        audit,
    };
    write_json(&out.join(RUN_FILE), &info)?;
    write_jsonl(&out.join(LEDGER_FILE), &output.rounds)?;
    write_jsonl(&out.join(TRANSFER_FILE), &output.transfers)?;
    write_jsonl(&out.join(EXPOSURE_FILE), &federation.ledger.snapshot())?;
    Checkpoint::new(hash, &federation.spec, &federation.global).save(&out.join(CHECKPOINT_FILE))?;
    Ok(info)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_run_info(dir: &Path) -> Result<RunInfo> {
    read_json(&dir.join(RUN_FILE))
}

pub fn load_ledger(dir: &Path) -> Result<Vec<RoundLedger>> {
    read_jsonl(&dir.join(LEDGER_FILE))
}

pub fn load_transfers(dir: &Path) -> Result<Vec<Transfer>> {
    read_jsonl(&dir.join(TRANSFER_FILE))
}

/// Attacks a recorded run under `policy` and stores the report in the run
/// directory as `attack-<kind>-<policy>.json`.
pub fn attack_run(dir: &Path, kind: AttackKind, policy: ExposurePolicy) -> Result<AttackReport> {
    let info = load_run_info(dir)?;
    let cfg = &info.config;
    let exposures: Vec<Exposure> = read_jsonl(&dir.join(EXPOSURE_FILE))?;
    let view = AttackerView::from_exposures(exposures, policy);
    let prepared = prepare(cfg)?;
    let fed = &prepared.federation;
    let report = match kind {
        AttackKind::Dra => {
            let observed = view.observed_gradients(&fed.spec, cfg.federation.learning_rate)?;
            let victim = observed.as_ref().map_or(0, |o| o.client);
            let shard = &fed.clients[victim].data;
            if observed.is_some() && (shard.len() != 1 || cfg.federation.epochs != 1) {
                return Err(Error::Attack(format!(
                    "gradient inversion needs a victim that took one step on one sample; \
                     client {victim} holds {} samples over {} epochs",
                    shard.len(),
                    cfg.federation.epochs
                )));
            }
            if shard.is_empty() {
                return Err(Error::EmptyShard(victim));
            }
            let target = shard.slice(0, 1).images.cast::<f64>();
            let dra = DraConfig::default();
            let result = dra_invert(
                observed.as_ref(),
                &fed.spec,
                &target,
                &dra,
                &mut stream(cfg.seed, "attack-dra", &[]),
            )?;
            AttackReport {
                attack: kind,
                policy,
                metric: result.mse,
                baseline: result.baseline_mse,
                seeds: vec![cfg.seed],
                iterations: result.iterations,
            }
        }
        AttackKind::Mia => {
            let ckpt = Checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
            let state = ckpt.state();
            let hidden_from = match &state.protected {
                Some(p) => Some(p.layers[0]),
                None => policy.hides_last_layer().then(|| fed.spec.tail_start()),
            };
            let (members, nonmembers, aux) = mia_splits(&prepared.train, &fed.test, cfg.seed)?;
            let model = match hidden_from {
                Some(from) => {
                    let central = CentralConfig {
                        epochs: MIA_SURROGATE_EPOCHS,
                        batch: cfg.federation.batch,
                        sgd: SgdConfig {
                            learning_rate: cfg.federation.learning_rate,
                            momentum: 0.9,
                            decay_per_epoch: 1.0,
                        },
                        shuffle: true,
                    };
                    let visible = state.params_for(&fed.spec, 0..from)?;
                    ModelView::surrogate(&fed.spec, from, visible, &aux, &central, cfg.seed)?
                }
                None => ModelView::full(
                    &fed.spec,
                    state.params_for(&fed.spec, 0..fed.spec.layers.len())?,
                )?,
            };
            let result = mia_confidence(
                &model,
                &members,
                &nonmembers,
                ThresholdStrategy::PooledMedian,
            )?;
            AttackReport {
                attack: kind,
                policy,
                metric: result.precision,
                baseline: 0.5,
                seeds: vec![cfg.seed],
                iterations: if hidden_from.is_some() {
                    MIA_SURROGATE_EPOCHS
                } else {
                    0
                },
            }
        }
    };
    let name = format!(
        "attack-{}-{policy}.json",
        match kind {
            AttackKind::Dra => "dra",
            AttackKind::Mia => "mia",
        }
    );
    write_json(&dir.join(name), &report)?;
    Ok(report)
}

pub const MIA_SURROGATE_EPOCHS: usize = 30;

/// Equal-size members and non-members plus disjoint auxiliary data for a
/// surrogate head: non-members and auxiliary samples split the test set.
pub fn mia_splits(
    train: &Dataset,
    test: &Dataset,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    use rand::seq::SliceRandom;
    let half = test.len() / 2;
    let n = half.min(train.len());
    if n == 0 {
        return Err(Error::Attack(
            "membership inference needs training and test data".into(),
        ));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut stream(seed, "mia-members", &[]));
    order.truncate(n);
    Ok((
        train.subset(&order),
        test.slice(0, n),
        test.slice(half, test.len()),
    ))
}

/// One row per run; traffic and round ratios are relative to the first
/// end-to-end run, at `target` accuracy or that run's final accuracy.
pub fn report_runs(dirs: &[PathBuf], target: Option<f64>) -> Result<Vec<SummaryRow>> {
    let runs = dirs
        .iter()
        .map(|d| Ok((d, load_run_info(d)?, load_ledger(d)?)))
        .collect::<Result<Vec<_>>>()?;
    let baseline = runs
        .iter()
        .find(|(_, info, _)| info.config.mode.is_end_to_end());
    let target = target.or(baseline.map(|(_, info, _)| info.final_accuracy));
    runs.iter()
        .map(|(dir, info, ledger)| {
            let comparison = match (baseline, target) {
                (Some((_, _, e2e)), Some(t)) => compare_to_e2e(ledger, e2e, t).ok(),
                _ => None,
            };
            Ok(SummaryRow {
                run: dir.display().to_string(),
                final_accuracy: info.final_accuracy,
                comparison,
            })
        })
        .collect()
}

pub fn report_table(rows: &[SummaryRow]) -> String {
    summary_table(rows)
}
