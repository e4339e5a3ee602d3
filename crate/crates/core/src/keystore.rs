//! Key-store directory helpers.
//!
//! Private material is written only inside a [`PassphraseBox`]: a
//! ChaCha20-Poly1305 ciphertext under `SHA-256(tag || salt || passphrase)`.
//! The KDF is a single hash, which is enough for a simulator's store but
//! not for real secrets.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::crypto::{
    aead_open, aead_seal, hash_concat, random_bytes, CryptoError, SimRng, SymmetricKey, AEAD_NONCE_LEN,
};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed store document {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("wrong store passphrase or corrupted private section")]
    BadPassphrase,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassphraseBox {
    pub kdf: String,
    #[serde(with = "hex::serde")]
    pub salt: [u8; 16],
    #[serde(with = "hex::serde")]
    pub nonce: [u8; AEAD_NONCE_LEN],
    #[serde(with = "hex::serde")]
    pub ciphertext: Vec<u8>,
}

const KDF: &str = "sha256-v1";

fn derive(passphrase: &str, salt: &[u8; 16]) -> SymmetricKey {
    SymmetricKey(hash_concat(&[b"pushsim-store-v1\0", salt, passphrase.as_bytes()]).0)
}

impl PassphraseBox {
    pub fn seal(passphrase: &str, context: &[u8], plaintext: &[u8], rng: &mut SimRng) -> Self {
        let salt = random_bytes(rng);
        let nonce = random_bytes(rng);
        let ciphertext = aead_seal(&derive(passphrase, &salt), &nonce, context, plaintext);
        Self { kdf: KDF.to_owned(), salt, nonce, ciphertext }
    }

    pub fn open(&self, passphrase: &str, context: &[u8]) -> Result<Vec<u8>, StoreError> {
        aead_open(&derive(passphrase, &self.salt), &self.nonce, context, &self.ciphertext)
            .map_err(|_| StoreError::BadPassphrase)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| StoreError::Io { path: dir.to_owned(), source })?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("store documents serialize");
    text.push('\n');
    fs::write(path, text).map_err(|source| StoreError::Io { path: path.to_owned(), source })
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let text = fs::read_to_string(path).map_err(|source| StoreError::Io { path: path.to_owned(), source })?;
    serde_json::from_str(&text).map_err(|e| StoreError::Format { path: path.to_owned(), reason: e.to_string() })
}
