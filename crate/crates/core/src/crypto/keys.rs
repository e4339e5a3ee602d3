use std::fmt;

use ed25519_dalek::{Signer as _, SigningKey, VerifyingKey};
use rand_core::SeedableRng;
use rsa::pkcs1::{DecodeRsaPrivateKey, DecodeRsaPublicKey, EncodeRsaPrivateKey, EncodeRsaPublicKey};
use rsa::{Pkcs1v15Sign, RsaPrivateKey, RsaPublicKey};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::{hash, hash_concat, CryptoError, Digest, SimRng};

/// Asymmetric scheme used for signatures and key wrapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Suite {
    /// Ed25519 signatures, X25519 key encapsulation.
    #[default]
    #[serde(rename = "ed25519-x25519")]
    Ed25519X25519,
    /// 1024-bit RSA: PKCS#1 v1.5 signatures, OAEP key wrapping (SHA-256).
    #[serde(rename = "rsa-1024")]
    Rsa1024,
}

impl Suite {
    fn label(self) -> &'static str {
        match self {
            Suite::Ed25519X25519 => "ed25519-x25519",
            Suite::Rsa1024 => "rsa-1024",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum KeyRole {
    Ek,
    Aik,
    Binding,
    Session,
    /// TPM-internal key protecting sealed blobs.
    Storage,
    /// Manufacturer and privacy-CA signing roots.
    Root,
}

impl KeyRole {
    fn label(self) -> &'static str {
        match self {
            KeyRole::Ek => "EK",
            KeyRole::Aik => "AIK",
            KeyRole::Binding => "BINDING",
            KeyRole::Session => "SESSION",
            KeyRole::Storage => "STORAGE",
            KeyRole::Root => "ROOT",
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PublicKey {
    pub suite: Suite,
    #[serde(with = "hex::serde")]
    pub bytes: Vec<u8>,
}

impl PublicKey {
    pub fn key_id(&self) -> Digest {
        hash(&self.bytes)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({}, {})", self.suite, &self.key_id().to_hex()[..16])
    }
}

/// Private half of a key pair. Deliberately neither `Serialize` nor
/// printable; the key store encrypts it explicitly.
#[derive(Clone, PartialEq, Eq)]
pub struct PrivateKey {
    pub suite: Suite,
    pub(crate) bytes: Vec<u8>,
}

impl PrivateKey {
    pub(crate) fn from_raw(suite: Suite, bytes: Vec<u8>) -> Self {
        Self { suite, bytes }
    }

    pub(crate) fn raw(&self) -> &[u8] {
        &self.bytes
    }
}

impl fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PrivateKey({}, <redacted>)", self.suite)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyPair {
    pub public: PublicKey,
    pub private: PrivateKey,
    pub role: KeyRole,
    pub key_id: Digest,
}

impl KeyPair {
    /// Draws a fresh seed from `rng` and calls [`keygen`].
    pub fn generate(suite: Suite, role: KeyRole, rng: &mut SimRng) -> Self {
        keygen(suite, &super::random_bytes(rng), role)
    }

    pub(crate) fn from_parts(public: PublicKey, private: PrivateKey, role: KeyRole) -> Self {
        let key_id = public.key_id();
        Self { public, private, role, key_id }
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature(#[serde(with = "hex::serde")] pub Vec<u8>);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({} bytes)", self.0.len())
    }
}

fn sub_seed(suite: Suite, seed: &[u8; 32], role: KeyRole, purpose: &str) -> [u8; 32] {
    hash_concat(&[
        b"pushsim-keygen-v1\0",
        suite.label().as_bytes(),
        b"\0",
        role.label().as_bytes(),
        b"\0",
        purpose.as_bytes(),
        b"\0",
        seed,
    ])
    .0
}

/// Deterministic key generation. Equal `(suite, seed, role)` give equal
/// keys; the role is mixed into every derived secret.
pub fn keygen(suite: Suite, seed: &[u8; 32], role: KeyRole) -> KeyPair {
    match suite {
        Suite::Ed25519X25519 => {
            let sk = SigningKey::from_bytes(&sub_seed(suite, seed, role, "sign"));
            let xk = x25519_dalek::StaticSecret::from(sub_seed(suite, seed, role, "kem"));
            let xpub = x25519_dalek::PublicKey::from(&xk);
            let mut public = sk.verifying_key().to_bytes().to_vec();
            public.extend_from_slice(xpub.as_bytes());
            let mut private = sk.to_bytes().to_vec();
            private.extend_from_slice(&xk.to_bytes());
            KeyPair::from_parts(PublicKey { suite, bytes: public }, PrivateKey::from_raw(suite, private), role)
        }
        Suite::Rsa1024 => {
            let mut rng = SimRng::from_seed(sub_seed(suite, seed, role, "rsa"));
            let sk = RsaPrivateKey::new(&mut rng, 1024).expect("1024-bit RSA key generation");
            let public = sk.to_public_key().to_pkcs1_der().expect("encode RSA public key");
            let private = sk.to_pkcs1_der().expect("encode RSA private key");
            KeyPair::from_parts(
                PublicKey { suite, bytes: public.as_bytes().to_vec() },
                PrivateKey::from_raw(suite, private.as_bytes().to_vec()),
                role,
            )
        }
    }
}

pub(crate) fn ed_signing_key(private: &PrivateKey) -> Result<SigningKey, CryptoError> {
    let raw: [u8; 32] =
        private
            .bytes
            .get(..32)
            .and_then(|s| s.try_into().ok())
            .filter(|_| private.bytes.len() == 64)
            .ok_or_else(|| CryptoError::MalformedKey("ed25519-x25519 private key must be 64 bytes".into()))?;
    Ok(SigningKey::from_bytes(&raw))
}

pub(crate) fn x25519_secret(private: &PrivateKey) -> Result<x25519_dalek::StaticSecret, CryptoError> {
    let raw: [u8; 32] = private
        .bytes
        .get(32..64)
        .and_then(|s| s.try_into().ok())
        .filter(|_| private.bytes.len() == 64)
        .ok_or_else(|| CryptoError::MalformedKey("ed25519-x25519 private key must be 64 bytes".into()))?;
    Ok(x25519_dalek::StaticSecret::from(raw))
}

pub(crate) fn x25519_public(public: &PublicKey) -> Result<x25519_dalek::PublicKey, CryptoError> {
    if public.bytes.len() != 64 {
        return Err(CryptoError::MalformedKey("ed25519-x25519 public key must be 64 bytes".into()));
    }
    let raw: [u8; 32] = public.bytes[32..].try_into().unwrap();
    Ok(x25519_dalek::PublicKey::from(raw))
}

fn ed_verifying_key(public: &PublicKey) -> Result<VerifyingKey, CryptoError> {
    if public.bytes.len() != 64 {
        return Err(CryptoError::MalformedKey("ed25519-x25519 public key must be 64 bytes".into()));
    }
    let raw: [u8; 32] = public.bytes[..32].try_into().unwrap();
    VerifyingKey::from_bytes(&raw).map_err(|e| CryptoError::MalformedKey(e.to_string()))
}

pub(crate) fn rsa_private(private: &PrivateKey) -> Result<RsaPrivateKey, CryptoError> {
    RsaPrivateKey::from_pkcs1_der(&private.bytes).map_err(|e| CryptoError::MalformedKey(e.to_string()))
}

pub(crate) fn rsa_public(public: &PublicKey) -> Result<RsaPublicKey, CryptoError> {
    RsaPublicKey::from_pkcs1_der(&public.bytes).map_err(|e| CryptoError::MalformedKey(e.to_string()))
}

pub fn sign(private: &PrivateKey, msg: &[u8]) -> Result<Signature, CryptoError> {
    match private.suite {
        Suite::Ed25519X25519 => Ok(Signature(ed_signing_key(private)?.sign(msg).to_bytes().to_vec())),
        Suite::Rsa1024 => {
            let sk = rsa_private(private)?;
            let digest = hash(msg);
            let sig = sk
                .sign(Pkcs1v15Sign::new::<Sha256>(), digest.as_bytes())
                .map_err(|e| CryptoError::MalformedKey(e.to_string()))?;
            Ok(Signature(sig))
        }
    }
}

/// `Ok(false)` for a signature that does not verify; `Err` only when the
/// public key itself cannot be parsed.
pub fn verify(public: &PublicKey, msg: &[u8], sig: &Signature) -> Result<bool, CryptoError> {
    match public.suite {
        Suite::Ed25519X25519 => {
            let vk = ed_verifying_key(public)?;
            let Ok(raw) = <[u8; 64]>::try_from(sig.0.as_slice()) else {
                return Ok(false);
            };
            let sig = ed25519_dalek::Signature::from_bytes(&raw);
            Ok(vk.verify_strict(msg, &sig).is_ok())
        }
        Suite::Rsa1024 => {
            let pk = rsa_public(public)?;
            let digest = hash(msg);
            Ok(pk.verify(Pkcs1v15Sign::new::<Sha256>(), digest.as_bytes(), &sig.0).is_ok())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::rng_from_seed;
    use rand_core::RngCore;

    const SEED: [u8; 32] = [7u8; 32];

    #[test]
    fn keygen_is_deterministic_and_role_separated() {
        let a = keygen(Suite::Ed25519X25519, &SEED, KeyRole::Ek);
        let b = keygen(Suite::Ed25519X25519, &SEED, KeyRole::Ek);
        assert_eq!(a.key_id, b.key_id);
        assert_eq!(a.private, b.private);
        let aik = keygen(Suite::Ed25519X25519, &SEED, KeyRole::Aik);
        assert_ne!(a.key_id, aik.key_id);
        assert_eq!(a.key_id, hash(&a.public.bytes));
    }

    #[test]
    fn sign_verify_round_trip_and_bit_flip() {
        let mut rng = rng_from_seed(3);
        for suite in [Suite::Ed25519X25519, Suite::Rsa1024] {
            let kp = KeyPair::generate(suite, KeyRole::Aik, &mut rng);
            let mut msg = vec![0u8; 77];
            rng.fill_bytes(&mut msg);
            let sig = sign(&kp.private, &msg).unwrap();
            assert!(verify(&kp.public, &msg, &sig).unwrap());
            msg[5] ^= 0x10;
            assert!(!verify(&kp.public, &msg, &sig).unwrap());
        }
    }

    #[test]
    fn signature_from_other_key_rejected() {
        let mut rng = rng_from_seed(4);
        for _ in 0..100 {
            let a = KeyPair::generate(Suite::Ed25519X25519, KeyRole::Aik, &mut rng);
            let b = KeyPair::generate(Suite::Ed25519X25519, KeyRole::Aik, &mut rng);
            let mut msg = vec![0u8; 32];
            rng.fill_bytes(&mut msg);
            let sig = sign(&b.private, &msg).unwrap();
            assert!(!verify(&a.public, &msg, &sig).unwrap());
            assert!(verify(&b.public, &msg, &sig).unwrap());
        }
    }

    #[test]
    fn malformed_key_is_an_error_not_false() {
        let bad = PublicKey { suite: Suite::Ed25519X25519, bytes: vec![1, 2, 3] };
        assert!(matches!(verify(&bad, b"m", &Signature(vec![0; 64])), Err(CryptoError::MalformedKey(_))));
        let bad_rsa = PublicKey { suite: Suite::Rsa1024, bytes: vec![0x30, 0x00] };
        assert!(matches!(verify(&bad_rsa, b"m", &Signature(vec![0; 128])), Err(CryptoError::MalformedKey(_))));
        let bad_priv = PrivateKey::from_raw(Suite::Ed25519X25519, vec![0; 10]);
        assert!(matches!(sign(&bad_priv, b"m"), Err(CryptoError::MalformedKey(_))));
    }

    #[test]
    fn debug_output_never_shows_private_bytes() {
        let kp = keygen(Suite::Ed25519X25519, &SEED, KeyRole::Binding);
        let dbg = format!("{kp:?}");
        assert!(!dbg.contains(&hex::encode(&kp.private.bytes[..16])));
    }

    #[test]
    fn rsa_preset_is_1024_bits() {
        use rsa::traits::PublicKeyParts;
        let kp = keygen(Suite::Rsa1024, &SEED, KeyRole::Aik);
        assert_eq!(rsa_public(&kp.public).unwrap().size(), 128);
        assert_eq!(keygen(Suite::Rsa1024, &SEED, KeyRole::Aik).key_id, kp.key_id);
    }
}
