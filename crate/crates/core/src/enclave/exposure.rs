//! Append-only record of every value that leaves an enclave, and the
//! matching enclave-side trace used to audit it.

use std::collections::{BTreeSet, HashSet};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::nn::LayerParams;

/// 64-bit FNV-1a over the bit patterns of the values, one word at a time.
pub fn fingerprint(values: impl IntoIterator<Item = f32>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        h ^= v.to_bits() as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn params_fingerprint(p: &LayerParams) -> u64 {
    fingerprint(p.flat())
}

pub fn bytes_fingerprint(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// What kind of value became visible to untrusted code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExposureKind {
    /// Ciphertext crossing the untrusted network or memory.
    Sealed,
    /// Parameters of a layer whose training has finished.
    FrozenLayer,
    /// Outputs of frozen layers computed in untrusted memory.
    FrozenActivations,
    /// Plain in-training parameters, as in unprotected federated learning.
    PlainParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exposure {
    pub seq: u64,
    pub kind: ExposureKind,
    pub unit: Option<usize>,
    pub round: Option<usize>,
    pub client: Option<usize>,
    /// Model layer index for parameter exposures.
    pub layer: Option<usize>,
    pub bytes: u64,
    pub digest: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Vec<f32>>,
}

/// Context attached to an exposure.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExposureTag {
    pub unit: Option<usize>,
    pub round: Option<usize>,
    pub client: Option<usize>,
    pub layer: Option<usize>,
}

/// Append-only exposure log. Appends are serialized by a mutex so clients
/// on different threads can share one ledger.
#[derive(Debug, Default)]
pub struct ExposureLedger {
    entries: Mutex<Vec<Exposure>>,
    retain_payloads: bool,
}

impl ExposureLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Also keeps plaintext payloads of parameter and activation
    /// exposures, which attack code reads.
    pub fn retaining_payloads() -> Self {
        ExposureLedger {
            entries: Mutex::new(Vec::new()),
            retain_payloads: true,
        }
    }

    pub fn retains_payloads(&self) -> bool {
        self.retain_payloads
    }

    pub fn record(
        &self,
        kind: ExposureKind,
        tag: ExposureTag,
        bytes: u64,
        digest: u64,
        payload: impl FnOnce() -> Vec<f32>,
    ) {
        let payload = (self.retain_payloads && kind != ExposureKind::Sealed).then(payload);
        let mut entries = self.entries.lock().expect("ledger lock");
        let seq = entries.len() as u64;
        entries.push(Exposure {
            seq,
            kind,
            unit: tag.unit,
            round: tag.round,
            client: tag.client,
            layer: tag.layer,
            bytes,
            digest,
            payload,
        });
    }

    pub fn record_params(
        &self,
        kind: ExposureKind,
        tag: ExposureTag,
        layers: &[(usize, &LayerParams)],
    ) {
        for &(layer, p) in layers {
            self.record(
                kind,
                ExposureTag {
                    layer: Some(layer),
                    ..tag
                },
                4 * p.param_count() as u64,
                params_fingerprint(p),
                || p.flat().collect(),
            );
        }
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("ledger lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<Exposure> {
        self.entries.lock().expect("ledger lock").clone()
    }

    pub fn kinds(&self) -> BTreeSet<ExposureKind> {
        self.entries
            .lock()
            .expect("ledger lock")
            .iter()
            .map(|e| e.kind)
            .collect()
    }
}

/// Values that exist only inside enclaves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecretKind {
    ClientUpdate,
    ClientHead,
    RoundAggregate,
    Gradient,
    ProtectedUnit,
}

/// Fingerprints of enclave-resident values, collected only when auditing.
#[derive(Debug, Default)]
pub struct EnclaveTrace {
    entries: Mutex<Vec<(SecretKind, u64)>>,
}

impl EnclaveTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, kind: SecretKind, params: &[LayerParams]) {
        let mut entries = self.entries.lock().expect("trace lock");
        entries.extend(params.iter().map(|p| (kind, params_fingerprint(p))));
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("trace lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kinds(&self) -> BTreeSet<SecretKind> {
        self.entries
            .lock()
            .expect("trace lock")
            .iter()
            .map(|e| e.0)
            .collect()
    }

    pub fn entries(&self) -> Vec<(SecretKind, u64)> {
        self.entries.lock().expect("trace lock").clone()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub exposed_kinds: BTreeSet<ExposureKind>,
    pub disallowed_kinds: BTreeSet<ExposureKind>,
    /// Secret values whose fingerprint appears among the exposures.
    pub leaks: Vec<(SecretKind, u64)>,
    pub secrets_checked: usize,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.disallowed_kinds.is_empty() && self.leaks.is_empty()
    }
}

/// Checks that only `allowed` kinds were exposed and that no traced secret
/// fingerprint matches an exposed one.
pub fn audit(
    ledger: &ExposureLedger,
    trace: &EnclaveTrace,
    allowed: &BTreeSet<ExposureKind>,
) -> AuditReport {
    let exposures = ledger.snapshot();
    let exposed: HashSet<u64> = exposures
        .iter()
        .filter(|e| e.kind != ExposureKind::Sealed)
        .map(|e| e.digest)
        .collect();
    let exposed_kinds: BTreeSet<_> = exposures.iter().map(|e| e.kind).collect();
    let secrets = trace.entries();
    AuditReport {
        disallowed_kinds: exposed_kinds.difference(allowed).copied().collect(),
        exposed_kinds,
        leaks: secrets
            .iter()
            .filter(|(_, d)| exposed.contains(d))
            .copied()
            .collect(),
        secrets_checked: secrets.len(),
    }
}
