//! Privacy CA: certifies AIKs for TPMs holding a valid endorsement
//! credential, and certifies binding keys together with the PCR values
//! they are locked to after checking a fresh quote.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::crypto::codec::Writer;
use crate::crypto::{
    hash_concat, keygen, sign, verify, Digest, KeyPair, KeyRole, PrivateKey, PublicKey, Signature, Suite,
};
use crate::keystore::{read_json, write_json, PassphraseBox, StoreError};
use crate::tpm::{verify_quote, EndorsementCredential, Nonce, PcrPolicy, Quote};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum PcaError {
    #[error("endorsement credential does not verify under the manufacturer root")]
    BadEkc,
    #[error("AIK credential does not verify")]
    BadCredential,
    #[error("quote signature does not verify under the certified AIK")]
    BadQuote,
    #[error("quote nonce is not the outstanding challenge")]
    StaleNonce,
    #[error("policy values are not the quoted PCR state")]
    PolicyMismatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AikCredential {
    pub aik_public: PublicKey,
    pub tpm_id: Digest,
    pub issued_at: f64,
    pub signature: Signature,
}

impl AikCredential {
    fn signed_bytes(aik_public: &PublicKey, tpm_id: &Digest) -> Vec<u8> {
        let mut w = Writer::tagged("pushsim-aik-credential-v1");
        w.bytes(&aik_public.bytes).bytes(tpm_id.as_bytes());
        w.finish()
    }

    pub fn aik_id(&self) -> Digest {
        self.aik_public.key_id()
    }
}

pub fn verify_aik_credential(pca_public: &PublicKey, cred: &AikCredential) -> bool {
    let msg = AikCredential::signed_bytes(&cred.aik_public, &cred.tpm_id);
    verify(pca_public, &msg, &cred.signature).unwrap_or(false)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BindingKeyCertificate {
    pub binding_public: PublicKey,
    pub policy: PcrPolicy,
    pub aik_id: Digest,
    pub issued_at: f64,
    pub signature: Signature,
}

impl BindingKeyCertificate {
    fn signed_bytes(binding_public: &PublicKey, policy: &PcrPolicy, aik_id: &Digest, issued_at: f64) -> Vec<u8> {
        let mut w = Writer::tagged("pushsim-binding-certificate-v1");
        w.u8(binding_public.suite as u8).bytes(&binding_public.bytes);
        policy.encode_into(&mut w);
        w.bytes(aik_id.as_bytes()).u64(issued_at.to_bits());
        w.finish()
    }

    pub fn binding_key_id(&self) -> Digest {
        self.binding_public.key_id()
    }
}

/// True iff the PCA signature covers every field. `PcrPolicy` cannot be
/// constructed empty, so a parsed certificate always has a well-formed
/// policy.
pub fn verify_binding_certificate(pca_public: &PublicKey, cert: &BindingKeyCertificate) -> bool {
    if cert.policy.selection().is_empty() {
        return false;
    }
    let msg = BindingKeyCertificate::signed_bytes(&cert.binding_public, &cert.policy, &cert.aik_id, cert.issued_at);
    verify(pca_public, &msg, &cert.signature).unwrap_or(false)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IssuedRecord {
    AikCredential { aik_id: Digest, tpm_id: Digest, issued_at: f64 },
    BindingCertificate { binding_key_id: Digest, aik_id: Digest, policy: PcrPolicy, issued_at: f64 },
}

#[derive(Debug, Clone)]
pub struct PrivacyCa {
    key: KeyPair,
    outstanding: BTreeSet<Nonce>,
    issued: Vec<IssuedRecord>,
    entropy: [u8; 32],
    counter: u64,
}

impl PrivacyCa {
    pub fn new(suite: Suite, seed: &[u8; 32]) -> Self {
        Self {
            key: keygen(suite, seed, KeyRole::Root),
            outstanding: BTreeSet::new(),
            issued: Vec::new(),
            entropy: hash_concat(&[b"pushsim-pca-entropy\0", seed]).0,
            counter: 0,
        }
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.key.public
    }

    pub fn ledger(&self) -> &[IssuedRecord] {
        &self.issued
    }

    pub fn outstanding_nonces(&self) -> usize {
        self.outstanding.len()
    }

    /// Fresh challenge for the next certification exchange.
    pub fn issue_nonce(&mut self) -> Nonce {
        let d = hash_concat(&[&self.entropy, b"nonce", &self.counter.to_be_bytes()]);
        self.counter += 1;
        let nonce = Nonce(d.0[..20].try_into().unwrap());
        self.outstanding.insert(nonce);
        nonce
    }

    pub fn enroll_aik(
        &mut self,
        aik_public: &PublicKey,
        ekc: &EndorsementCredential,
        manufacturer_root: &PublicKey,
        issued_at: f64,
    ) -> Result<AikCredential, PcaError> {
        if !ekc.verify(manufacturer_root) {
            return Err(PcaError::BadEkc);
        }
        let tpm_id = ekc.tpm_id();
        let signature =
            sign(&self.key.private, &AikCredential::signed_bytes(aik_public, &tpm_id)).expect("PCA key is well formed");
        self.issued.push(IssuedRecord::AikCredential { aik_id: aik_public.key_id(), tpm_id, issued_at });
        Ok(AikCredential { aik_public: aik_public.clone(), tpm_id, issued_at, signature })
    }

    /// Certifies `binding_public` as usable only under `policy`.
    ///
    /// `expected_nonce` is consumed whatever the outcome; a failed exchange
    /// must start over with [`PrivacyCa::issue_nonce`].
    pub fn certify_binding_key(
        &mut self,
        binding_public: &PublicKey,
        policy: &PcrPolicy,
        aik_credential: &AikCredential,
        quote: &Quote,
        expected_nonce: &Nonce,
        issued_at: f64,
    ) -> Result<BindingKeyCertificate, PcaError> {
        let was_outstanding = self.outstanding.remove(expected_nonce);
        if !was_outstanding || quote.nonce != *expected_nonce {
            return Err(PcaError::StaleNonce);
        }
        if !verify_aik_credential(&self.key.public, aik_credential) {
            return Err(PcaError::BadCredential);
        }
        if !verify_quote(&aik_credential.aik_public, quote).unwrap_or(false) {
            return Err(PcaError::BadQuote);
        }
        if quote.selection != policy.selection() || quote.composite != policy.composite() {
            return Err(PcaError::PolicyMismatch);
        }
        let aik_id = aik_credential.aik_id();
        let msg = BindingKeyCertificate::signed_bytes(binding_public, policy, &aik_id, issued_at);
        let signature = sign(&self.key.private, &msg).expect("PCA key is well formed");
        self.issued.push(IssuedRecord::BindingCertificate {
            binding_key_id: binding_public.key_id(),
            aik_id,
            policy: policy.clone(),
            issued_at,
        });
        Ok(BindingKeyCertificate {
            binding_public: binding_public.clone(),
            policy: policy.clone(),
            aik_id,
            issued_at,
            signature,
        })
    }
}

// ---------------------------------------------------------------------------
// Persistence: `pca.json`
// ---------------------------------------------------------------------------

pub const PCA_FORMAT: &str = "pushsim-pca/1";
pub const PCA_FILE_NAME: &str = "pca.json";

#[derive(Serialize, Deserialize)]
struct PcaDocument {
    format: String,
    public: PublicKey,
    outstanding_nonces: Vec<Nonce>,
    issued: Vec<IssuedRecord>,
    private: PassphraseBox,
}

#[derive(Serialize, Deserialize)]
struct PcaPrivate {
    #[serde(with = "hex::serde")]
    root: Vec<u8>,
    #[serde(with = "hex::serde")]
    entropy: [u8; 32],
    counter: u64,
}

impl PrivacyCa {
    /// Writes `pca.json` (root key and issued-certificate ledger) to `dir`.
    pub fn save(&self, dir: &Path, passphrase: &str, rng: &mut crate::crypto::SimRng) -> Result<PathBuf, StoreError> {
        let private =
            PcaPrivate { root: self.key.private.raw().to_vec(), entropy: self.entropy, counter: self.counter };
        let plain = serde_json::to_vec(&private).expect("private section serializes");
        let doc = PcaDocument {
            format: PCA_FORMAT.to_owned(),
            public: self.key.public.clone(),
            outstanding_nonces: self.outstanding.iter().copied().collect(),
            issued: self.issued.clone(),
            private: PassphraseBox::seal(passphrase, self.key.key_id.as_bytes(), &plain, rng),
        };
        let path = dir.join(PCA_FILE_NAME);
        write_json(&path, &doc)?;
        Ok(path)
    }

    pub fn load(path: &Path, passphrase: &str) -> Result<Self, StoreError> {
        let doc: PcaDocument = read_json(path)?;
        if doc.format != PCA_FORMAT {
            return Err(StoreError::Format { path: path.to_owned(), reason: "unknown format tag".into() });
        }
        let plain = doc.private.open(passphrase, doc.public.key_id().as_bytes())?;
        let private: PcaPrivate = serde_json::from_slice(&plain)
            .map_err(|e| StoreError::Format { path: path.to_owned(), reason: e.to_string() })?;
        let suite = doc.public.suite;
        Ok(Self {
            key: KeyPair::from_parts(doc.public, PrivateKey::from_raw(suite, private.root), KeyRole::Root),
            outstanding: doc.outstanding_nonces.into_iter().collect(),
            issued: doc.issued,
            entropy: private.entropy,
            counter: private.counter,
        })
    }
}
