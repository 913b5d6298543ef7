use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::SgdConfig;

/// Whether in-training parameters stay inside enclaves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protection {
    /// Updates are sealed end to end and unsealed only in enclaves.
    Enclave,
    /// The server sees every broadcast and client update in plain form.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduler {
    Sequential,
    Parallel { threads: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub clients: usize,
    /// Rounds per trained unit.
    pub rounds: usize,
    pub fraction: f64,
    /// Local epochs per round.
    pub epochs: usize,
    pub batch: usize,
    pub sgd: SgdConfig,
    /// Consecutive units trained together.
    pub block_size: usize,
    pub seed: u64,
    /// Reshuffle each client's shard every epoch.
    pub shuffle: bool,
    pub scheduler: Scheduler,
    /// Keep the final output layer sealed instead of publishing it.
    pub protect_last_layer: bool,
    /// Fingerprint enclave-resident values so exposures can be audited.
    pub audit: bool,
    /// Keep plaintext payloads of exposures for attack code.
    pub retain_payloads: bool,
    pub server_budget_bytes: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            clients: 100,
            rounds: 10,
            fraction: 0.1,
            epochs: 1,
            batch: 16,
            sgd: SgdConfig::default(),
            block_size: 1,
            seed: 0,
            shuffle: true,
            scheduler: Scheduler::Sequential,
            protect_last_layer: false,
            audit: false,
            retain_payloads: false,
            server_budget_bytes: 1 << 34,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("clients", self.clients),
            ("rounds", self.rounds),
            ("batch", self.batch),
            ("block_size", self.block_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config(format!(
                "participation fraction must lie in (0, 1], got {}",
                self.fraction
            )));
        }
        if let Scheduler::Parallel { threads: 0 } = self.scheduler {
            return Err(Error::Config(
                "parallel scheduler needs at least one thread".into(),
            ));
        }
        self.sgd.validate()
    }
}
