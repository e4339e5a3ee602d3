//! `tpm-<id>.json` documents.
//!
//! ```text
//! {
//!   "format": "pushsim-tpm/1",
//!   "tpm_id": <hex>,            // SHA-256 of the EK public key
//!   "ekc": { "ek_public": {...}, "signature": <hex> },
//!   "storage_public": {...},
//!   "owner_auth": <hex> | null, // SHA-256 of the owner secret
//!   "engine_label": <text> | null,
//!   "pcrs": { "registers": [<hex> x 24] },
//!   "log": { "events": [...] },
//!   "keys": [ { "key_id", "role", "public", "policy" } ],
//!   "private": { "kdf", "salt", "nonce", "ciphertext" }
//! }
//! ```
//!
//! `private` decrypts (under the store passphrase, with `tpm_id` as
//! associated data) to a JSON object holding the EK, storage and per-key
//! private halves plus the TPM's internal entropy counter.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EndorsementCredential, EndorsementIdentity, MeasurementLog, PcrBank, PcrPolicy, TpmKey, TpmState};
use crate::crypto::{Digest, KeyPair, KeyRole, PrivateKey, PublicKey, SimRng};
use crate::keystore::{read_json, write_json, PassphraseBox, StoreError};

pub const TPM_FORMAT: &str = "pushsim-tpm/1";

#[derive(Serialize, Deserialize)]
struct KeyEntry {
    key_id: Digest,
    role: KeyRole,
    public: PublicKey,
    policy: Option<PcrPolicy>,
}

#[derive(Serialize, Deserialize)]
struct TpmDocument {
    format: String,
    tpm_id: Digest,
    ekc: EndorsementCredential,
    storage_public: PublicKey,
    owner_auth: Option<Digest>,
    engine_label: Option<String>,
    pcrs: PcrBank,
    log: MeasurementLog,
    keys: Vec<KeyEntry>,
    private: PassphraseBox,
}

#[derive(Serialize, Deserialize)]
struct PrivateSection {
    #[serde(with = "hex::serde")]
    ek: Vec<u8>,
    #[serde(with = "hex::serde")]
    storage: Vec<u8>,
    #[serde(with = "hex::serde")]
    entropy: [u8; 32],
    counter: u64,
    keys: BTreeMap<Digest, String>,
}

pub fn tpm_file_name(tpm_id: &Digest) -> String {
    format!("tpm-{}.json", tpm_id.to_hex())
}

impl TpmState {
    /// Writes `tpm-<id>.json` into `dir` and returns its path.
    pub fn save(&self, dir: &Path, passphrase: &str, rng: &mut SimRng) -> Result<PathBuf, StoreError> {
        let tpm_id = self.tpm_id();
        let private = PrivateSection {
            ek: self.identity.ek.private.raw().to_vec(),
            storage: self.storage.private.raw().to_vec(),
            entropy: self.entropy,
            counter: self.counter,
            keys: self.keys.iter().map(|(id, k)| (*id, hex::encode(k.pair.private.raw()))).collect(),
        };
        let plain = serde_json::to_vec(&private).expect("private section serializes");
        let doc = TpmDocument {
            format: TPM_FORMAT.to_owned(),
            tpm_id,
            ekc: self.identity.ekc.clone(),
            storage_public: self.storage.public.clone(),
            owner_auth: self.owner_auth,
            engine_label: self.engine_label.clone(),
            pcrs: self.pcrs.clone(),
            log: self.log.clone(),
            keys: self
                .keys
                .values()
                .map(|k| KeyEntry {
                    key_id: k.pair.key_id,
                    role: k.pair.role,
                    public: k.pair.public.clone(),
                    policy: k.policy.clone(),
                })
                .collect(),
            private: PassphraseBox::seal(passphrase, tpm_id.as_bytes(), &plain, rng),
        };
        let path = dir.join(tpm_file_name(&tpm_id));
        write_json(&path, &doc)?;
        Ok(path)
    }

    pub fn load(path: &Path, passphrase: &str) -> Result<Self, StoreError> {
        let doc: TpmDocument = read_json(path)?;
        let bad = |reason: &str| StoreError::Format { path: path.to_owned(), reason: reason.to_owned() };
        if doc.format != TPM_FORMAT {
            return Err(bad("unknown format tag"));
        }
        if doc.tpm_id != doc.ekc.ek_public.key_id() {
            return Err(bad("tpm_id does not match the EK"));
        }
        let plain = doc.private.open(passphrase, doc.tpm_id.as_bytes())?;
        let private: PrivateSection = serde_json::from_slice(&plain).map_err(|e| bad(&e.to_string()))?;
        let suite = doc.ekc.ek_public.suite;
        let ek = KeyPair::from_parts(doc.ekc.ek_public.clone(), PrivateKey::from_raw(suite, private.ek), KeyRole::Ek);
        let storage =
            KeyPair::from_parts(doc.storage_public, PrivateKey::from_raw(suite, private.storage), KeyRole::Storage);
        let mut keys = BTreeMap::new();
        for entry in doc.keys {
            if entry.key_id != entry.public.key_id() {
                return Err(bad("key_id does not match its public key"));
            }
            let raw = private.keys.get(&entry.key_id).ok_or_else(|| bad("private half missing for a listed key"))?;
            let raw = hex::decode(raw).map_err(|e| bad(&e.to_string()))?;
            let pair = KeyPair::from_parts(entry.public, PrivateKey::from_raw(suite, raw), entry.role);
            keys.insert(entry.key_id, TpmKey { pair, policy: entry.policy });
        }
        Ok(TpmState {
            identity: EndorsementIdentity { ek, ekc: doc.ekc },
            storage,
            pcrs: doc.pcrs,
            log: doc.log,
            owner_auth: doc.owner_auth,
            keys,
            engine_label: doc.engine_label,
            entropy: private.entropy,
            counter: private.counter,
        })
    }
}
