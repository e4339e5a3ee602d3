//! Hybrid public-key envelope: a random content key encrypts the body with
//! ChaCha20-Poly1305 and is itself wrapped to the recipient's public key.
//!
//! Wrapping per suite:
//! - `ed25519-x25519`: ephemeral X25519 agreement, the KEK is
//!   `SHA-256(tag || shared || eph_pub || recipient_pub)` and the content key
//!   is AEAD-encrypted under it. `wrapped_key = eph_pub || sealed_key`.
//! - `rsa-1024`: RSA-OAEP (SHA-256) over the content key.
//!
//! The body AEAD authenticates `wrapped_key` as associated data, so a flipped
//! bit anywhere in the envelope fails decryption.

use rand_core::RngCore;
use rsa::Oaep;
use serde::{Deserialize, Serialize};

use super::codec::{Reader, Writer};
use super::keys::{rsa_private, rsa_public, x25519_public, x25519_secret};
use super::{
    aead_open, aead_seal, hash_concat, random_bytes, CryptoError, PrivateKey, PublicKey, SimRng, Suite, SymmetricKey,
    AEAD_NONCE_LEN,
};

const WRAP_TAG: &[u8] = b"pushsim-wrap-v1";
const X25519_WRAPPED_LEN: usize = 32 + 32 + 16;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HybridCiphertext {
    #[serde(with = "hex::serde")]
    pub wrapped_key: Vec<u8>,
    #[serde(with = "hex::serde")]
    pub nonce: [u8; AEAD_NONCE_LEN],
    #[serde(with = "hex::serde")]
    pub body: Vec<u8>,
}

impl HybridCiphertext {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(&self.wrapped_key).bytes(&self.nonce).bytes(&self.body);
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(data);
        let wrapped_key = r.bytes()?.to_vec();
        let nonce = r.bytes()?.try_into().map_err(|_| CryptoError::Parse("nonce must be 12 bytes".into()))?;
        let body = r.bytes()?.to_vec();
        r.finish()?;
        Ok(Self { wrapped_key, nonce, body })
    }
}

fn body_aad(wrapped_key: &[u8], aad: &[u8]) -> Vec<u8> {
    let mut w = Writer::tagged("pushsim-body-v1");
    w.bytes(wrapped_key).bytes(aad);
    w.finish()
}

fn x25519_kek(shared: &[u8; 32], eph_pub: &[u8; 32], recipient: &[u8; 32]) -> SymmetricKey {
    SymmetricKey(hash_concat(&[WRAP_TAG, shared, eph_pub, recipient]).0)
}

fn wrap(recipient: &PublicKey, content_key: &SymmetricKey, rng: &mut SimRng) -> Result<Vec<u8>, CryptoError> {
    match recipient.suite {
        Suite::Ed25519X25519 => {
            let rpub = x25519_public(recipient)?;
            let eph = x25519_dalek::StaticSecret::from(random_bytes::<32>(rng));
            let eph_pub = x25519_dalek::PublicKey::from(&eph);
            let shared = eph.diffie_hellman(&rpub);
            if !shared.was_contributory() {
                return Err(CryptoError::MalformedKey("low-order X25519 public key".into()));
            }
            let kek = x25519_kek(shared.as_bytes(), eph_pub.as_bytes(), rpub.as_bytes());
            let mut out = eph_pub.as_bytes().to_vec();
            out.extend(aead_seal(&kek, &[0u8; AEAD_NONCE_LEN], WRAP_TAG, &content_key.0));
            Ok(out)
        }
        Suite::Rsa1024 => {
            let pk = rsa_public(recipient)?;
            pk.encrypt(rng, Oaep::new::<sha2::Sha256>(), &content_key.0)
                .map_err(|e| CryptoError::MalformedKey(e.to_string()))
        }
    }
}

fn unwrap(private: &PrivateKey, wrapped: &[u8]) -> Result<SymmetricKey, CryptoError> {
    let raw = match private.suite {
        Suite::Ed25519X25519 => {
            let sk = x25519_secret(private)?;
            if wrapped.len() != X25519_WRAPPED_LEN {
                return Err(CryptoError::Parse(format!(
                    "wrapped key must be {X25519_WRAPPED_LEN} bytes, got {}",
                    wrapped.len()
                )));
            }
            let eph_pub: [u8; 32] = wrapped[..32].try_into().unwrap();
            let shared = sk.diffie_hellman(&x25519_dalek::PublicKey::from(eph_pub));
            let own_pub = x25519_dalek::PublicKey::from(&sk);
            let kek = x25519_kek(shared.as_bytes(), &eph_pub, own_pub.as_bytes());
            aead_open(&kek, &[0u8; AEAD_NONCE_LEN], WRAP_TAG, &wrapped[32..])?
        }
        Suite::Rsa1024 => {
            let sk = rsa_private(private)?;
            sk.decrypt(Oaep::new::<sha2::Sha256>(), wrapped).map_err(|_| CryptoError::AuthFailure)?
        }
    };
    let key: [u8; 32] = raw.try_into().map_err(|_| CryptoError::AuthFailure)?;
    Ok(SymmetricKey(key))
}

pub fn hybrid_encrypt(
    recipient: &PublicKey,
    plaintext: &[u8],
    rng: &mut SimRng,
) -> Result<HybridCiphertext, CryptoError> {
    hybrid_encrypt_with_aad(recipient, &[], plaintext, rng)
}

/// Like [`hybrid_encrypt`], additionally binding `aad` into the body tag.
pub fn hybrid_encrypt_with_aad(
    recipient: &PublicKey,
    aad: &[u8],
    plaintext: &[u8],
    rng: &mut SimRng,
) -> Result<HybridCiphertext, CryptoError> {
    let content_key = SymmetricKey::random(rng);
    let wrapped_key = wrap(recipient, &content_key, rng)?;
    let mut nonce = [0u8; AEAD_NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let body = aead_seal(&content_key, &nonce, &body_aad(&wrapped_key, aad), plaintext);
    Ok(HybridCiphertext { wrapped_key, nonce, body })
}

pub fn hybrid_decrypt(private: &PrivateKey, ct: &HybridCiphertext) -> Result<Vec<u8>, CryptoError> {
    hybrid_decrypt_with_aad(private, &[], ct)
}

pub fn hybrid_decrypt_with_aad(
    private: &PrivateKey,
    aad: &[u8],
    ct: &HybridCiphertext,
) -> Result<Vec<u8>, CryptoError> {
    let key = unwrap(private, &ct.wrapped_key).map_err(|e| match e {
        // a wrong-length wrap under the right key type is still tampering
        CryptoError::Parse(_) => CryptoError::AuthFailure,
        other => other,
    })?;
    aead_open(&key, &ct.nonce, &body_aad(&ct.wrapped_key, aad), &ct.body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{rng_from_seed, KeyPair, KeyRole};

    #[test]
    fn round_trip_both_suites() {
        let mut rng = rng_from_seed(11);
        for suite in [Suite::Ed25519X25519, Suite::Rsa1024] {
            let kp = KeyPair::generate(suite, KeyRole::Binding, &mut rng);
            let mut msg = vec![0u8; 1024];
            rng.fill_bytes(&mut msg);
            let ct = hybrid_encrypt(&kp.public, &msg, &mut rng).unwrap();
            assert_eq!(hybrid_decrypt(&kp.private, &ct).unwrap(), msg);
        }
    }

    #[test]
    fn wrong_key_is_auth_failure() {
        let mut rng = rng_from_seed(12);
        for suite in [Suite::Ed25519X25519, Suite::Rsa1024] {
            let a = KeyPair::generate(suite, KeyRole::Binding, &mut rng);
            let b = KeyPair::generate(suite, KeyRole::Binding, &mut rng);
            let ct = hybrid_encrypt(&a.public, b"payload", &mut rng).unwrap();
            assert_eq!(hybrid_decrypt(&b.private, &ct), Err(CryptoError::AuthFailure));
        }
    }

    #[test]
    fn aad_is_bound() {
        let mut rng = rng_from_seed(13);
        let kp = KeyPair::generate(Suite::Ed25519X25519, KeyRole::Storage, &mut rng);
        let ct = hybrid_encrypt_with_aad(&kp.public, b"ctx-a", b"data", &mut rng).unwrap();
        assert_eq!(hybrid_decrypt_with_aad(&kp.private, b"ctx-a", &ct).unwrap(), b"data");
        assert_eq!(hybrid_decrypt_with_aad(&kp.private, b"ctx-b", &ct), Err(CryptoError::AuthFailure));
    }

    #[test]
    fn truncated_serialization_is_parse_error() {
        let mut rng = rng_from_seed(14);
        let kp = KeyPair::generate(Suite::Ed25519X25519, KeyRole::Binding, &mut rng);
        let ct = hybrid_encrypt(&kp.public, b"some payload", &mut rng).unwrap();
        let bytes = ct.to_bytes();
        assert_eq!(HybridCiphertext::from_bytes(&bytes).unwrap(), ct);
        for cut in [0, 3, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(HybridCiphertext::from_bytes(&bytes[..cut]), Err(CryptoError::Parse(_))));
        }
    }

    #[test]
    fn marker_never_appears_in_ciphertext() {
        let mut rng = rng_from_seed(15);
        for session in 0..100u64 {
            let kp = KeyPair::generate(Suite::Ed25519X25519, KeyRole::Binding, &mut rng);
            let marker = format!("PUSH-SECRET-{session}");
            let msg = format!("Subject: hi\n{marker}\nbody");
            let ct = hybrid_encrypt(&kp.public, msg.as_bytes(), &mut rng).unwrap();
            let ser = ct.to_bytes();
            assert!(!ser.windows(marker.len()).any(|w| w == marker.as_bytes()));
            let json = serde_json::to_string(&ct).unwrap();
            assert!(!json.contains(&marker));
        }
    }

    #[test]
    fn empty_plaintext_round_trips() {
        let mut rng = rng_from_seed(16);
        let kp = KeyPair::generate(Suite::Ed25519X25519, KeyRole::Binding, &mut rng);
        let ct = hybrid_encrypt(&kp.public, b"", &mut rng).unwrap();
        assert!(hybrid_decrypt(&kp.private, &ct).unwrap().is_empty());
    }
}
