//! Simulated trusted execution: byte-budgeted regions, sealed parameter
//! transport and the untrusted-to-trusted activation channel.
//!
//! Trusted values are wrapped in [`Secret`], which can only be opened with
//! an [`EnclaveSession`]. Everything that leaves an enclave in any form is
//! appended to an [`ExposureLedger`].

mod exposure;
mod seal;

pub use exposure::{
    audit, bytes_fingerprint, fingerprint, params_fingerprint, AuditReport, EnclaveTrace, Exposure,
    ExposureKind, ExposureLedger, ExposureTag, SecretKind,
};
pub use seal::{
    ciphertext_len, decode_params, encode_params, seal_bytes, seal_bytes_with_iv, sealed_len,
    unseal_bytes, FederationKey, ParamLayout, SealedBlob, BLOCK, HEADER_LEN,
};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::LayerParams;
use crate::tensor::Tensor;

/// 16 MiB, a typical secure-world memory size on mobile devices.
pub const DEFAULT_BUDGET: u64 = 16 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Party {
    Server,
    Client(usize),
}

/// A party's enclave. `used_bytes` never exceeds `budget_bytes`.
#[derive(Debug)]
pub struct EnclaveRegion {
    id: Party,
    budget_bytes: u64,
    used_bytes: u64,
    key: FederationKey,
}

impl EnclaveRegion {
    pub fn new(id: Party, budget_bytes: u64, key: FederationKey) -> Self {
        EnclaveRegion {
            id,
            budget_bytes,
            used_bytes: 0,
            key,
        }
    }

    pub fn id(&self) -> Party {
        self.id
    }

    pub fn budget_bytes(&self) -> u64 {
        self.budget_bytes
    }

    pub fn used_bytes(&self) -> u64 {
        self.used_bytes
    }

    pub fn available(&self) -> u64 {
        self.budget_bytes - self.used_bytes
    }

    /// Admission is inclusive: a payload filling the budget exactly fits.
    pub fn admit(&mut self, payload: u64) -> Result<()> {
        if payload > self.available() {
            return Err(Error::OverBudget {
                needed: payload,
                available: self.available(),
            });
        }
        self.used_bytes += payload;
        Ok(())
    }

    pub fn release(&mut self, payload: u64) -> Result<()> {
        if payload > self.used_bytes {
            return Err(Error::Config(format!(
                "release of {payload} bytes exceeds the {} bytes in use",
                self.used_bytes
            )));
        }
        self.used_bytes -= payload;
        Ok(())
    }

    /// Reserves `payload` bytes for the lifetime of the returned session.
    pub fn enter(&mut self, payload: u64) -> Result<EnclaveSession<'_>> {
        self.admit(payload)?;
        Ok(EnclaveSession {
            region: self,
            reserved: payload,
        })
    }
}

/// Admission decision for `payload_bytes` without holding the reservation.
pub fn enter_enclave(region: &mut EnclaveRegion, payload_bytes: u64) -> Result<()> {
    region.admit(payload_bytes)
}

pub fn seal<R: RngCore + ?Sized>(
    params: &[LayerParams],
    region: &EnclaveRegion,
    rng: &mut R,
) -> SealedBlob {
    seal_bytes(&region.key, &encode_params(params), rng)
}

pub fn unseal(
    blob: &SealedBlob,
    region: &EnclaveRegion,
    layout: &ParamLayout,
) -> Result<Vec<LayerParams>> {
    decode_params(&unseal_bytes(&region.key, blob)?, layout)
}

/// Capability for touching trusted values. Releases its reservation on drop.
#[derive(Debug)]
pub struct EnclaveSession<'a> {
    region: &'a mut EnclaveRegion,
    reserved: u64,
}

impl EnclaveSession<'_> {
    pub fn party(&self) -> Party {
        self.region.id
    }

    pub fn reserved(&self) -> u64 {
        self.reserved
    }

    pub fn region(&self) -> &EnclaveRegion {
        self.region
    }

    pub fn seal<R: RngCore + ?Sized>(&self, params: &[LayerParams], rng: &mut R) -> SealedBlob {
        seal(params, self.region, rng)
    }

    pub fn unseal(
        &self,
        blob: &SealedBlob,
        layout: &ParamLayout,
    ) -> Result<Secret<Vec<LayerParams>>> {
        unseal(blob, self.region, layout).map(Secret)
    }

    pub fn protect<T>(&self, value: T) -> Secret<T> {
        Secret(value)
    }

    pub fn open<'s, T>(&self, secret: &'s Secret<T>) -> &'s T {
        &secret.0
    }

    pub fn open_mut<'s, T>(&self, secret: &'s mut Secret<T>) -> &'s mut T {
        &mut secret.0
    }

    pub fn take<T>(&self, secret: Secret<T>) -> T {
        secret.0
    }
}

impl Drop for EnclaveSession<'_> {
    fn drop(&mut self) {
        self.region.used_bytes -= self.reserved;
    }
}

/// A value that lives inside an enclave.
pub struct Secret<T>(T);

impl<T> std::fmt::Debug for Secret<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Secret(<enclave>)")
    }
}

/// Untrusted shared memory carrying frozen-layer activations into an
/// enclave.
#[derive(Debug)]
pub struct SharedBuffer {
    capacity: usize,
    payload: Vec<u8>,
}

impl SharedBuffer {
    pub fn new(capacity: usize) -> Self {
        SharedBuffer {
            capacity,
            payload: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    fn write(&mut self, t: &Tensor) -> Result<()> {
        let needed = 4 * t.len();
        if needed > self.capacity {
            return Err(Error::BufferCapacity {
                capacity: self.capacity,
                needed,
            });
        }
        self.payload.clear();
        self.payload
            .extend(t.data().iter().flat_map(|v| v.to_le_bytes()));
        Ok(())
    }

    fn read(&self, shape: &[usize]) -> Result<Tensor> {
        let data = self
            .payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Tensor::from_vec(shape, data)
    }
}

/// Copies frozen-layer output `t` from untrusted memory into the enclave
/// behind `session`, logging it as visible to untrusted code.
pub fn ree_to_tee_activations(
    buf: &mut SharedBuffer,
    t: &Tensor,
    _session: &EnclaveSession<'_>,
    ledger: &ExposureLedger,
    tag: ExposureTag,
) -> Result<Tensor> {
    buf.write(t)?;
    ledger.record(
        ExposureKind::FrozenActivations,
        tag,
        buf.payload.len() as u64,
        fingerprint(t.data().iter().copied()),
        || t.data().to_vec(),
    );
    buf.read(t.shape())
}
