//! Deterministic cryptographic primitives shared by every actor.
//!
//! Nothing here touches global state: randomness always comes from an
//! explicit [`SimRng`] handle, so a whole simulation replays bit-exactly
//! from its seed.

pub mod codec;
mod hybrid;
mod keys;

use std::fmt;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::ChaCha20Poly1305;
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::Sha256;

pub use hybrid::{hybrid_decrypt, hybrid_decrypt_with_aad, hybrid_encrypt, hybrid_encrypt_with_aad, HybridCiphertext};
pub use keys::{keygen, sign, verify, KeyPair, KeyRole, PrivateKey, PublicKey, Signature, Suite};

/// The simulation-wide RNG.
pub type SimRng = ChaCha20Rng;

pub const DIGEST_LEN: usize = 32;
pub const AEAD_NONCE_LEN: usize = 12;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("malformed key: {0}")]
    MalformedKey(String),
    #[error("authentication failure")]
    AuthFailure,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("key suite mismatch: expected {expected}, got {got}")]
    SuiteMismatch { expected: Suite, got: Suite },
}

/// SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let raw = hex::decode(s).map_err(|e| CryptoError::Parse(e.to_string()))?;
        Self::from_slice(&raw)
    }

    pub fn from_slice(raw: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; DIGEST_LEN] =
            raw.try_into().map_err(|_| CryptoError::Parse(format!("digest must be 32 bytes, got {}", raw.len())))?;
        Ok(Digest(arr))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

pub fn hash(data: &[u8]) -> Digest {
    use sha2::Digest as _;
    Digest(Sha256::digest(data).into())
}

/// Hash of the plain concatenation of `parts`.
pub fn hash_concat(parts: &[&[u8]]) -> Digest {
    use sha2::Digest as _;
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// Builds the run RNG from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Derives an independent child RNG; `label` keeps streams apart.
pub fn derive_rng(parent: &mut SimRng, label: &str) -> SimRng {
    let mut seed = [0u8; 32];
    parent.fill_bytes(&mut seed);
    SimRng::from_seed(hash_concat(&[label.as_bytes(), &seed]).0)
}

pub fn random_bytes<const N: usize>(rng: &mut SimRng) -> [u8; N] {
    let mut out = [0u8; N];
    rng.fill_bytes(&mut out);
    out
}

/// A 256-bit symmetric key for ChaCha20-Poly1305.
#[derive(Clone, PartialEq, Eq)]
pub struct SymmetricKey(pub [u8; 32]);

impl fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SymmetricKey(..)")
    }
}

impl SymmetricKey {
    pub fn random(rng: &mut SimRng) -> Self {
        SymmetricKey(random_bytes(rng))
    }
}

pub fn aead_seal(key: &SymmetricKey, nonce: &[u8; AEAD_NONCE_LEN], aad: &[u8], plaintext: &[u8]) -> Vec<u8> {
    ChaCha20Poly1305::new((&key.0).into())
        .encrypt(nonce.into(), Payload { msg: plaintext, aad })
        .expect("chacha20poly1305 encryption is infallible for in-memory buffers")
}

pub fn aead_open(
    key: &SymmetricKey,
    nonce: &[u8; AEAD_NONCE_LEN],
    aad: &[u8],
    ciphertext: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    ChaCha20Poly1305::new((&key.0).into())
        .decrypt(nonce.into(), Payload { msg: ciphertext, aad })
        .map_err(|_| CryptoError::AuthFailure)
}
