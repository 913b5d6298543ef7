//! Deterministic simulator of layer-wise federated learning inside
//! memory-budgeted simulated trusted execution environments.

pub mod attacks;
pub mod costkit;
pub mod data;
pub mod enclave;
pub mod error;
pub mod experiment;
pub mod network;
pub mod nn;
pub mod optim;
pub mod proto;
pub mod rng;
pub mod tensor;
pub mod zoo;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
