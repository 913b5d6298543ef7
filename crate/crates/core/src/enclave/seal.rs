//! AES-128-CBC sealing with PKCS#7 padding.
//!
//! Wire format: `[iv:16][plaintext_len:8 little-endian][ciphertext]`.

use aes::cipher::block_padding::Pkcs7;
use aes::cipher::{BlockDecryptMut, BlockEncryptMut, KeyIvInit};
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::nn::{LayerParams, ParamKind};
use crate::tensor::Tensor;

type Encryptor = cbc::Encryptor<aes::Aes128>;
type Decryptor = cbc::Decryptor<aes::Aes128>;

pub const BLOCK: usize = 16;
pub const HEADER_LEN: usize = BLOCK + 8;

/// Symmetric key shared by every enclave of a federation.
#[derive(Clone, PartialEq, Eq)]
pub struct FederationKey([u8; 16]);

impl FederationKey {
    /// Key compiled into every simulated enclave.
    pub const FIXTURE: FederationKey = FederationKey(*b"teefl-fixture-k1");

    pub fn new(bytes: [u8; 16]) -> Self {
        FederationKey(bytes)
    }
}

impl std::fmt::Debug for FederationKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("FederationKey(<redacted>)")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SealedBlob {
    pub iv: [u8; 16],
    pub plaintext_len: u64,
    pub ciphertext: Vec<u8>,
}

/// Ciphertext length for a plaintext of `len` bytes: padding always adds
/// between 1 and 16 bytes.
pub fn ciphertext_len(len: usize) -> usize {
    BLOCK * (len / BLOCK + 1)
}

/// Serialized blob size for a plaintext of `len` bytes.
pub fn sealed_len(len: usize) -> usize {
    HEADER_LEN + ciphertext_len(len)
}

pub fn seal_bytes_with_iv(key: &FederationKey, iv: [u8; 16], plaintext: &[u8]) -> SealedBlob {
    let ciphertext =
        Encryptor::new(&key.0.into(), &iv.into()).encrypt_padded_vec_mut::<Pkcs7>(plaintext);
    SealedBlob {
        iv,
        plaintext_len: plaintext.len() as u64,
        ciphertext,
    }
}

pub fn seal_bytes<R: RngCore + ?Sized>(
    key: &FederationKey,
    plaintext: &[u8],
    rng: &mut R,
) -> SealedBlob {
    let mut iv = [0u8; 16];
    rng.fill_bytes(&mut iv);
    seal_bytes_with_iv(key, iv, plaintext)
}

pub fn unseal_bytes(key: &FederationKey, blob: &SealedBlob) -> Result<Vec<u8>> {
    if blob.ciphertext.is_empty() || !blob.ciphertext.len().is_multiple_of(BLOCK) {
        return Err(Error::Integrity(format!(
            "ciphertext length {} is not a positive multiple of {BLOCK}",
            blob.ciphertext.len()
        )));
    }
    let plain = Decryptor::new(&key.0.into(), &blob.iv.into())
        .decrypt_padded_vec_mut::<Pkcs7>(&blob.ciphertext)
        .map_err(|_| Error::Integrity("invalid padding (wrong key or corrupted blob)".into()))?;
    if plain.len() as u64 != blob.plaintext_len {
        return Err(Error::Integrity(format!(
            "header declares {} plaintext bytes, decrypted {}",
            blob.plaintext_len,
            plain.len()
        )));
    }
    Ok(plain)
}

impl SealedBlob {
    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.ciphertext.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&self.iv);
        out.extend_from_slice(&self.plaintext_len.to_le_bytes());
        out.extend_from_slice(&self.ciphertext);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN + BLOCK {
            return Err(Error::Integrity(format!(
                "sealed blob of {} bytes is shorter than header plus one block",
                bytes.len()
            )));
        }
        let iv: [u8; 16] = bytes[..BLOCK].try_into().expect("16 bytes");
        let plaintext_len =
            u64::from_le_bytes(bytes[BLOCK..HEADER_LEN].try_into().expect("8 bytes"));
        let ciphertext = bytes[HEADER_LEN..].to_vec();
        if !ciphertext.len().is_multiple_of(BLOCK)
            || ciphertext_len(plaintext_len as usize) != ciphertext.len()
        {
            return Err(Error::Integrity(format!(
                "ciphertext of {} bytes cannot hold {plaintext_len} plaintext bytes",
                ciphertext.len()
            )));
        }
        Ok(SealedBlob {
            iv,
            plaintext_len,
            ciphertext,
        })
    }
}

impl Serialize for SealedBlob {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.to_bytes()))
    }
}

impl<'de> Deserialize<'de> for SealedBlob {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = hex::decode(text).map_err(serde::de::Error::custom)?;
        SealedBlob::from_bytes(&bytes).map_err(serde::de::Error::custom)
    }
}

/// Shapes needed to rebuild parameter sets from raw plaintext.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout(pub Vec<(ParamKind, Vec<usize>, Vec<usize>)>);

impl ParamLayout {
    pub fn of(params: &[LayerParams]) -> Self {
        ParamLayout(
            params
                .iter()
                .map(|p| {
                    (
                        p.kind,
                        p.weights.shape().to_vec(),
                        p.biases.shape().to_vec(),
                    )
                })
                .collect(),
        )
    }

    pub fn values(&self) -> usize {
        self.0
            .iter()
            .map(|(_, w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .sum()
    }

    pub fn byte_len(&self) -> usize {
        4 * self.values()
    }
}

/// Weights then biases of every layer as little-endian `f32`.
pub fn encode_params(params: &[LayerParams]) -> Vec<u8> {
    params
        .iter()
        .flat_map(|p| p.flat())
        .flat_map(f32::to_le_bytes)
        .collect()
}

pub fn decode_params(bytes: &[u8], layout: &ParamLayout) -> Result<Vec<LayerParams>> {
    if bytes.len() != layout.byte_len() {
        return Err(Error::Integrity(format!(
            "plaintext of {} bytes does not match layout of {} bytes",
            bytes.len(),
            layout.byte_len()
        )));
    }
    let mut values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    let mut take = |shape: &[usize]| -> Result<Tensor> {
        let n = shape.iter().product();
        let data: Vec<f32> = values.by_ref().take(n).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integrity("decoded a non-finite parameter".into()));
        }
        Tensor::from_vec(shape, data)
    };
    layout
        .0
        .iter()
        .map(|(kind, w, b)| LayerParams::new(*kind, take(w)?, take(b)?))
        .collect()
}
