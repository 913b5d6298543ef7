//! The federated protocol: per-round client selection, sealed broadcast,
//! in-enclave local training of one unit plus a client-local head,
//! in-enclave aggregation, and layer finalization.

mod bootstrap;
mod central;
mod checkpoint;
mod client;
mod config;
mod server;
mod state;
mod train;

pub use bootstrap::{public_data_bootstrap, transfer_bootstrap};
pub use central::{train_centralized, CentralConfig};
pub use checkpoint::{config_hash, Checkpoint, CheckpointLayer};
pub use client::{client_update, ClientReport, UnitJob};
pub use config::{FederationConfig, Protection, Scheduler};
pub use server::{
    accuracy, fedavg, fedavg_sealed, init_head, participants, select_clients, server_init_unit,
};
pub use state::{ClientState, GlobalModelState, ProtectedUnit};
pub use train::{
    run_plan, train_end_to_end, train_layerwise, Blocking, Federation, RunOutput, UnitInit,
};
