//! Software model of a TPM/MTM bound to one platform.
//!
//! A [`TpmState`] owns its endorsement identity, a 24-register PCR bank, the
//! measurement log and every key it creates. Private key halves never leave
//! the struct except through the encrypted key store ([`store`]).
//!
//! Failure checks run in a fixed order so each call reports exactly one
//! error: tpm identity, then ownership/auth, then PCR state, then crypto.

mod pcr;
pub mod store;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::crypto::codec::Writer;
use crate::crypto::{
    hash, hash_concat, hybrid_decrypt_with_aad, hybrid_encrypt_with_aad, keygen, sign, verify, CryptoError, Digest,
    HybridCiphertext, KeyPair, KeyRole, PrivateKey, PublicKey, Signature, SimRng, Suite,
};

pub use pcr::{composite_of, extend_value, MeasurementEvent, MeasurementLog, PcrBank, PcrPolicy, PCR_COUNT};

pub const NONCE_LEN: usize = 20;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum TpmError {
    #[error("PCR index {0} out of range")]
    BadIndex(usize),
    #[error("TPM already has an owner")]
    AlreadyOwned,
    #[error("TPM has no owner")]
    NotOwned,
    #[error("authorisation failed")]
    AuthFail,
    #[error("bad PCR policy: {0}")]
    BadPolicy(String),
    #[error("no such key {0}")]
    NoSuchKey(Digest),
    #[error("key has role {got:?}, expected {expected:?}")]
    WrongRole { expected: KeyRole, got: KeyRole },
    #[error("blob belongs to another TPM")]
    WrongTpm,
    #[error("PCR {index} does not hold the required value")]
    PcrMismatch { index: usize },
    #[error("decryption failed: {0}")]
    Crypto(#[from] CryptoError),
}

/// Anti-replay nonce carried by quotes.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Nonce(#[serde(with = "hex::serde")] pub [u8; NONCE_LEN]);

impl std::fmt::Debug for Nonce {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Nonce({})", hex::encode(&self.0[..6]))
    }
}

impl Nonce {
    pub fn random(rng: &mut SimRng) -> Self {
        Nonce(crate::crypto::random_bytes(rng))
    }
}

/// The EKC: manufacturer signature over the EK public key.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndorsementCredential {
    pub ek_public: PublicKey,
    pub signature: Signature,
}

impl EndorsementCredential {
    pub fn tpm_id(&self) -> Digest {
        self.ek_public.key_id()
    }

    pub fn verify(&self, manufacturer_root: &PublicKey) -> bool {
        verify(manufacturer_root, &self.ek_public.bytes, &self.signature).unwrap_or(false)
    }
}

#[derive(Clone, Debug)]
pub struct EndorsementIdentity {
    pub(crate) ek: KeyPair,
    pub ekc: EndorsementCredential,
}

/// Public half of a TPM-resident key, as returned to callers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyHandle {
    pub key_id: Digest,
    pub role: KeyRole,
    pub public: PublicKey,
}

#[derive(Clone, Debug)]
pub(crate) struct TpmKey {
    pub(crate) pair: KeyPair,
    pub(crate) policy: Option<PcrPolicy>,
}

/// A signed assertion over a nonce and selected PCR values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quote {
    pub aik_id: Digest,
    pub nonce: Nonce,
    pub selection: BTreeSet<usize>,
    pub composite: Digest,
    pub signature: Signature,
}

impl Quote {
    fn signed_bytes(aik_id: &Digest, nonce: &Nonce, selection: &BTreeSet<usize>, composite: &Digest) -> Vec<u8> {
        let mut w = Writer::tagged("pushsim-quote-v1");
        w.bytes(aik_id.as_bytes()).bytes(&nonce.0).u64(selection.len() as u64);
        for &i in selection {
            w.u8(i as u8);
        }
        w.bytes(composite.as_bytes());
        w.finish()
    }
}

/// True iff `quote` was signed by `aik_public` and names that key.
pub fn verify_quote(aik_public: &PublicKey, quote: &Quote) -> Result<bool, CryptoError> {
    if quote.aik_id != aik_public.key_id() {
        return Ok(false);
    }
    let msg = Quote::signed_bytes(&quote.aik_id, &quote.nonce, &quote.selection, &quote.composite);
    verify(aik_public, &msg, &quote.signature)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealedBlob {
    pub tpm_id: Digest,
    pub policy: PcrPolicy,
    pub ciphertext: HybridCiphertext,
    pub auth_digest: Digest,
}

impl SealedBlob {
    /// The outer fields are authenticated by the ciphertext, so editing the
    /// policy or owner binding breaks decryption.
    fn aad(tpm_id: &Digest, policy: &PcrPolicy, auth_digest: &Digest) -> Vec<u8> {
        let mut w = Writer::tagged("pushsim-sealed-v1");
        w.bytes(tpm_id.as_bytes());
        policy.encode_into(&mut w);
        w.bytes(auth_digest.as_bytes());
        w.finish()
    }
}

/// Exportable, private-key-free view of a TPM.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TpmPublicView {
    pub tpm_id: Digest,
    pub ekc: EndorsementCredential,
    pub owned: bool,
    pub pcrs: PcrBank,
    pub log: MeasurementLog,
    pub keys: Vec<(KeyHandle, Option<PcrPolicy>)>,
    pub engine_label: Option<String>,
}

#[derive(Clone, Debug)]
pub struct TpmState {
    pub(crate) identity: EndorsementIdentity,
    pub(crate) storage: KeyPair,
    pub(crate) pcrs: PcrBank,
    pub(crate) log: MeasurementLog,
    pub(crate) owner_auth: Option<Digest>,
    pub(crate) keys: BTreeMap<Digest, TpmKey>,
    pub(crate) engine_label: Option<String>,
    /// Internal entropy pool; key seeds are `H(entropy || counter)`.
    pub(crate) entropy: [u8; 32],
    pub(crate) counter: u64,
}

impl TpmState {
    /// Creates a fresh TPM whose EK is certified by `manufacturer_root`.
    pub fn manufacture(seed: &[u8; 32], manufacturer_root: &PrivateKey) -> Self {
        let suite = manufacturer_root.suite;
        let ek = keygen(suite, seed, KeyRole::Ek);
        let storage = keygen(suite, seed, KeyRole::Storage);
        let signature = sign(manufacturer_root, &ek.public.bytes).expect("manufacturer root key is well formed");
        let ekc = EndorsementCredential { ek_public: ek.public.clone(), signature };
        Self {
            identity: EndorsementIdentity { ek, ekc },
            storage,
            pcrs: PcrBank::new(),
            log: MeasurementLog::default(),
            owner_auth: None,
            keys: BTreeMap::new(),
            engine_label: None,
            entropy: hash_concat(&[b"pushsim-tpm-entropy\0", seed]).0,
            counter: 0,
        }
    }

    pub fn suite(&self) -> Suite {
        self.identity.ek.public.suite
    }

    /// Hash of the EK public key.
    pub fn tpm_id(&self) -> Digest {
        self.identity.ek.key_id
    }

    pub fn ekc(&self) -> &EndorsementCredential {
        &self.identity.ekc
    }

    pub fn ek_public(&self) -> &PublicKey {
        &self.identity.ek.public
    }

    pub fn pcrs(&self) -> &PcrBank {
        &self.pcrs
    }

    pub fn log(&self) -> &MeasurementLog {
        &self.log
    }

    pub fn is_owned(&self) -> bool {
        self.owner_auth.is_some()
    }

    pub fn engine_label(&self) -> Option<&str> {
        self.engine_label.as_deref()
    }

    /// Labels the trusted-engine compartment this TPM serves (MTM).
    pub fn set_engine_label(&mut self, label: impl Into<String>) {
        self.engine_label = Some(label.into());
    }

    pub fn key(&self, key_id: &Digest) -> Option<KeyHandle> {
        self.keys.get(key_id).map(|k| KeyHandle {
            key_id: k.pair.key_id,
            role: k.pair.role,
            public: k.pair.public.clone(),
        })
    }

    pub fn key_policy(&self, key_id: &Digest) -> Option<&PcrPolicy> {
        self.keys.get(key_id).and_then(|k| k.policy.as_ref())
    }

    pub fn public_view(&self) -> TpmPublicView {
        TpmPublicView {
            tpm_id: self.tpm_id(),
            ekc: self.identity.ekc.clone(),
            owned: self.is_owned(),
            pcrs: self.pcrs.clone(),
            log: self.log.clone(),
            keys: self
                .keys
                .values()
                .map(|k| {
                    (
                        KeyHandle { key_id: k.pair.key_id, role: k.pair.role, public: k.pair.public.clone() },
                        k.policy.clone(),
                    )
                })
                .collect(),
            engine_label: self.engine_label.clone(),
        }
    }

    fn next_seed(&mut self) -> [u8; 32] {
        let seed = hash_concat(&[&self.entropy, &self.counter.to_be_bytes()]).0;
        self.counter += 1;
        seed
    }

    fn next_rng(&mut self) -> SimRng {
        use rand_core::SeedableRng;
        SimRng::from_seed(self.next_seed())
    }

    fn check_auth(&self, auth: &[u8]) -> Result<(), TpmError> {
        match &self.owner_auth {
            None => Err(TpmError::NotOwned),
            Some(d) if *d == hash(auth) => Ok(()),
            Some(_) => Err(TpmError::AuthFail),
        }
    }

    pub fn take_ownership(&mut self, auth_secret: &[u8]) -> Result<(), TpmError> {
        if self.owner_auth.is_some() {
            return Err(TpmError::AlreadyOwned);
        }
        self.owner_auth = Some(hash(auth_secret));
        Ok(())
    }

    /// Raw extend. Does not touch the log; use [`TpmState::measure`] for
    /// logged measurements.
    pub fn extend(&mut self, index: usize, value: &Digest) -> Result<Digest, TpmError> {
        self.pcrs.extend(index, value)
    }

    pub fn measure(&mut self, index: usize, component_name: &str, code: &[u8]) -> Result<MeasurementEvent, TpmError> {
        let code_digest = hash(code);
        self.pcrs.extend(index, &code_digest)?;
        Ok(self.log.append(index, component_name, code_digest))
    }

    fn create_key(&mut self, role: KeyRole, policy: Option<PcrPolicy>) -> KeyHandle {
        let seed = self.next_seed();
        let pair = keygen(self.suite(), &seed, role);
        let handle = KeyHandle { key_id: pair.key_id, role, public: pair.public.clone() };
        self.keys.insert(pair.key_id, TpmKey { pair, policy });
        handle
    }

    pub fn create_aik(&mut self, auth: &[u8]) -> Result<KeyHandle, TpmError> {
        self.check_auth(auth)?;
        Ok(self.create_key(KeyRole::Aik, None))
    }

    pub fn create_binding_key(&mut self, auth: &[u8], policy: PcrPolicy) -> Result<KeyHandle, TpmError> {
        self.check_auth(auth)?;
        Ok(self.create_key(KeyRole::Binding, Some(policy)))
    }

    /// Deletes a key; used to discard one-shot AIKs.
    pub fn evict_key(&mut self, auth: &[u8], key_id: &Digest) -> Result<(), TpmError> {
        self.check_auth(auth)?;
        self.keys.remove(key_id).map(|_| ()).ok_or(TpmError::NoSuchKey(*key_id))
    }

    fn key_with_role(&self, key_id: &Digest, role: KeyRole) -> Result<&TpmKey, TpmError> {
        let key = self.keys.get(key_id).ok_or(TpmError::NoSuchKey(*key_id))?;
        if key.pair.role != role {
            return Err(TpmError::WrongRole { expected: role, got: key.pair.role });
        }
        Ok(key)
    }

    pub fn quote(&self, aik_key_id: &Digest, nonce: Nonce, selection: &BTreeSet<usize>) -> Result<Quote, TpmError> {
        let key = self.key_with_role(aik_key_id, KeyRole::Aik)?;
        if selection.is_empty() {
            return Err(TpmError::BadPolicy("empty quote selection".into()));
        }
        let composite = self.pcrs.composite(selection)?;
        let msg = Quote::signed_bytes(aik_key_id, &nonce, selection, &composite);
        let signature = sign(&key.pair.private, &msg)?;
        Ok(Quote { aik_id: *aik_key_id, nonce, selection: selection.clone(), composite, signature })
    }

    pub fn seal(&mut self, auth: &[u8], data: &[u8], selection: &BTreeSet<usize>) -> Result<SealedBlob, TpmError> {
        self.check_auth(auth)?;
        let policy = PcrPolicy::from_bank(&self.pcrs, selection)?;
        let tpm_id = self.tpm_id();
        let auth_digest = hash(auth);
        let aad = SealedBlob::aad(&tpm_id, &policy, &auth_digest);
        let mut rng = self.next_rng();
        let ciphertext = hybrid_encrypt_with_aad(&self.storage.public, &aad, data, &mut rng)?;
        Ok(SealedBlob { tpm_id, policy, ciphertext, auth_digest })
    }

    pub fn unseal(&self, auth: &[u8], blob: &SealedBlob) -> Result<Vec<u8>, TpmError> {
        if blob.tpm_id != self.tpm_id() {
            return Err(TpmError::WrongTpm);
        }
        if hash(auth) != blob.auth_digest {
            return Err(TpmError::AuthFail);
        }
        if let Some(index) = blob.policy.first_mismatch(&self.pcrs) {
            return Err(TpmError::PcrMismatch { index });
        }
        let aad = SealedBlob::aad(&blob.tpm_id, &blob.policy, &blob.auth_digest);
        Ok(hybrid_decrypt_with_aad(&self.storage.private, &aad, &blob.ciphertext)?)
    }

    /// Decrypts with a binding key, gated on the key's PCR policy.
    pub fn bound_decrypt(
        &self,
        auth: &[u8],
        binding_key_id: &Digest,
        ct: &HybridCiphertext,
    ) -> Result<Vec<u8>, TpmError> {
        let key = self.key_with_role(binding_key_id, KeyRole::Binding)?;
        self.check_auth(auth)?;
        let policy = key.policy.as_ref().expect("binding keys are always created with a policy");
        if let Some(index) = policy.first_mismatch(&self.pcrs) {
            return Err(TpmError::PcrMismatch { index });
        }
        Ok(crate::crypto::hybrid_decrypt(&key.pair.private, ct)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{hybrid_encrypt, rng_from_seed};

    const AUTH: &[u8] = b"owner-secret";

    fn root() -> KeyPair {
        keygen(Suite::Ed25519X25519, &[9u8; 32], KeyRole::Root)
    }

    fn owned_tpm(seed: u8) -> TpmState {
        let mut tpm = TpmState::manufacture(&[seed; 32], &root().private);
        tpm.take_ownership(AUTH).unwrap();
        tpm
    }

    #[test]
    fn manufacture_yields_reset_state_and_valid_ekc() {
        let r = root();
        let a = TpmState::manufacture(&[1; 32], &r.private);
        let b = TpmState::manufacture(&[2; 32], &r.private);
        assert_ne!(a.tpm_id(), b.tpm_id());
        assert!(verify(&r.public, &a.ek_public().bytes, &a.ekc().signature).unwrap());
        assert!(a.ekc().verify(&r.public));
        assert!(a.pcrs().registers().iter().all(|d| *d == Digest::ZERO));
        assert!(a.log().is_empty());
        assert!(!a.is_owned());
    }

    #[test]
    fn ownership_lifecycle() {
        let mut tpm = TpmState::manufacture(&[1; 32], &root().private);
        assert_eq!(tpm.create_aik(AUTH), Err(TpmError::NotOwned));
        tpm.take_ownership(AUTH).unwrap();
        assert_eq!(tpm.take_ownership(b"other"), Err(TpmError::AlreadyOwned));
        assert_eq!(tpm.create_aik(b"wrong").unwrap_err(), TpmError::AuthFail);
        let a = tpm.create_aik(AUTH).unwrap();
        let b = tpm.create_aik(AUTH).unwrap();
        assert_ne!(a.key_id, b.key_id);
        assert_eq!(a.role, KeyRole::Aik);
    }

    #[test]
    fn measure_logs_and_extends() {
        let mut tpm = owned_tpm(1);
        let e1 = tpm.measure(10, "mail", b"mail-v1").unwrap();
        let e2 = tpm.measure(10, "mail", b"mail-v1").unwrap();
        assert_eq!((e1.sequence_no, e2.sequence_no), (1, 2));
        let once = extend_value(&Digest::ZERO, &hash(b"mail-v1"));
        assert_eq!(tpm.pcrs().read(10).unwrap(), extend_value(&once, &hash(b"mail-v1")));
        assert_eq!(tpm.log().replay().unwrap(), *tpm.pcrs());
        assert_eq!(tpm.measure(24, "x", b"x"), Err(TpmError::BadIndex(24)));
        assert_eq!(tpm.extend(99, &Digest::ZERO), Err(TpmError::BadIndex(99)));
    }

    #[test]
    fn quote_verifies_and_tracks_state() {
        let mut tpm = owned_tpm(2);
        let aik = tpm.create_aik(AUTH).unwrap();
        let sel = BTreeSet::from([0, 10]);
        let nonce = Nonce([3; NONCE_LEN]);
        let q = tpm.quote(&aik.key_id, nonce, &sel).unwrap();
        assert!(verify_quote(&aik.public, &q).unwrap());
        assert_eq!(q.nonce, nonce);
        tpm.extend(10, &hash(b"evil")).unwrap();
        let q2 = tpm.quote(&aik.key_id, nonce, &sel).unwrap();
        assert_ne!(q.composite, q2.composite);

        let mut forged = q.clone();
        forged.composite = q2.composite;
        assert!(!verify_quote(&aik.public, &forged).unwrap());
    }

    #[test]
    fn quote_key_errors() {
        let mut tpm = owned_tpm(3);
        let missing = hash(b"nope");
        let sel = BTreeSet::from([0]);
        assert_eq!(tpm.quote(&missing, Nonce([0; 20]), &sel), Err(TpmError::NoSuchKey(missing)));
        let policy = PcrPolicy::from_bank(tpm.pcrs(), &sel).unwrap();
        let bk = tpm.create_binding_key(AUTH, policy).unwrap();
        assert_eq!(
            tpm.quote(&bk.key_id, Nonce([0; 20]), &sel),
            Err(TpmError::WrongRole { expected: KeyRole::Aik, got: KeyRole::Binding })
        );
    }

    #[test]
    fn seal_unseal_error_taxonomy() {
        let mut a = owned_tpm(4);
        let b = owned_tpm(5);
        a.measure(10, "mail", b"mail").unwrap();
        let sel = BTreeSet::from([10]);
        let blob = a.seal(AUTH, b"secret mail", &sel).unwrap();
        assert_eq!(a.unseal(AUTH, &blob).unwrap(), b"secret mail");
        assert_eq!(b.unseal(AUTH, &blob), Err(TpmError::WrongTpm));
        assert_eq!(a.unseal(b"wrong", &blob), Err(TpmError::AuthFail));
        assert!(matches!(a.seal(AUTH, b"x", &BTreeSet::new()), Err(TpmError::BadPolicy(_))));
        assert_eq!(a.seal(b"wrong", b"x", &sel).unwrap_err(), TpmError::AuthFail);

        a.extend(10, &hash(b"tamper")).unwrap();
        // wrong auth still wins over the PCR check
        assert_eq!(a.unseal(b"wrong", &blob), Err(TpmError::AuthFail));
        assert_eq!(a.unseal(AUTH, &blob), Err(TpmError::PcrMismatch { index: 10 }));
    }

    #[test]
    fn edited_blob_policy_fails_decryption() {
        let mut tpm = owned_tpm(6);
        let sel = BTreeSet::from([10]);
        let mut blob = tpm.seal(AUTH, b"data", &sel).unwrap();
        tpm.extend(10, &hash(b"tamper")).unwrap();
        blob.policy = PcrPolicy::from_bank(tpm.pcrs(), &sel).unwrap();
        assert_eq!(tpm.unseal(AUTH, &blob), Err(TpmError::Crypto(CryptoError::AuthFailure)));
    }

    #[test]
    fn bound_decrypt_gated_on_policy() {
        let mut tpm = owned_tpm(7);
        tpm.measure(10, "mail", b"mail").unwrap();
        let policy = PcrPolicy::from_bank(tpm.pcrs(), &BTreeSet::from([10])).unwrap();
        let bk = tpm.create_binding_key(AUTH, policy).unwrap();
        let other =
            tpm.create_binding_key(AUTH, PcrPolicy::from_bank(tpm.pcrs(), &BTreeSet::from([10])).unwrap()).unwrap();
        let mut rng = rng_from_seed(1);
        let ct = hybrid_encrypt(&bk.public, b"pushed", &mut rng).unwrap();
        assert_eq!(tpm.bound_decrypt(AUTH, &bk.key_id, &ct).unwrap(), b"pushed");
        assert_eq!(tpm.bound_decrypt(b"bad", &bk.key_id, &ct), Err(TpmError::AuthFail));
        assert_eq!(tpm.bound_decrypt(AUTH, &other.key_id, &ct), Err(TpmError::Crypto(CryptoError::AuthFailure)));
        tpm.extend(10, &hash(b"tamper")).unwrap();
        assert_eq!(tpm.bound_decrypt(AUTH, &bk.key_id, &ct), Err(TpmError::PcrMismatch { index: 10 }));
    }

    #[test]
    fn binding_key_creation_rejects_empty_policy() {
        let empty: Result<PcrPolicy, _> = PcrPolicy::new(BTreeMap::new());
        assert!(matches!(empty, Err(TpmError::BadPolicy(_))));
        let mut tpm = TpmState::manufacture(&[8; 32], &root().private);
        let p = PcrPolicy::from_bank(tpm.pcrs(), &BTreeSet::from([10])).unwrap();
        assert_eq!(tpm.create_binding_key(AUTH, p), Err(TpmError::NotOwned));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

        #[test]
        fn exported_views_hold_no_private_bytes(
            seed in 0u8..=255,
            ops in proptest::collection::vec((0usize..PCR_COUNT, proptest::prelude::any::<u8>()), 1..8),
            data in proptest::collection::vec(proptest::prelude::any::<u8>(), 0..64),
        ) {
            let mut tpm = owned_tpm(seed);
            for (i, code) in &ops {
                tpm.measure(*i, "c", &[*code]).unwrap();
            }
            let sel = BTreeSet::from([ops[0].0]);
            let aik = tpm.create_aik(AUTH).unwrap();
            let p = PcrPolicy::from_bank(tpm.pcrs(), &sel).unwrap();
            let binding = tpm.create_binding_key(AUTH, p).unwrap();
            let q = tpm.quote(&aik.key_id, Nonce([seed; 20]), &sel).unwrap();
            let blob = tpm.seal(AUTH, &data, &sel).unwrap();
            let exported = [
                serde_json::to_vec(&tpm.public_view()).unwrap(),
                serde_json::to_vec(&aik).unwrap(),
                serde_json::to_vec(&binding).unwrap(),
                serde_json::to_vec(&q).unwrap(),
                serde_json::to_vec(&blob).unwrap(),
                serde_json::to_vec(tpm.ekc()).unwrap(),
                blob.ciphertext.to_bytes(),
            ];
            let mut secrets = vec![tpm.identity.ek.private.raw().to_vec(), tpm.storage.private.raw().to_vec()];
            secrets.extend(tpm.keys.values().map(|k| k.pair.private.raw().to_vec()));
            for secret in &secrets {
                for window in [&secret[..16], &secret[secret.len() - 16..]] {
                    let as_hex = hex::encode(window);
                    for doc in &exported {
                        proptest::prop_assert!(!doc.windows(16).any(|w| w == window));
                        proptest::prop_assert!(!doc.windows(as_hex.len()).any(|w| w == as_hex.as_bytes()));
                    }
                }
            }
        }
    }
}
