//! Binding key certified once, then blind pushes to it.

use serde::{Deserialize, Serialize};

use super::actors::{BoundItem, DeviceActor, Registration, SyncServer};
use super::{enroll_aik, FailReason, Outcome, PcaActor, ProtocolError, SessionTranscript};
use crate::crypto::{hybrid_encrypt, HybridCiphertext, PublicKey};
use crate::netsim::{CostName, MsgType, Network};
use crate::pca::{verify_binding_certificate, AikCredential, BindingKeyCertificate};
use crate::tpm::{PcrPolicy, TpmError};

#[derive(Clone, Debug, PartialEq)]
pub struct Provisioned {
    pub certificate: BindingKeyCertificate,
    pub transcript: SessionTranscript,
}

#[derive(Serialize, Deserialize)]
struct KeySubmission {
    binding_public: PublicKey,
    policy: PcrPolicy,
    credential: AikCredential,
}

impl SyncServer {
    /// Step 4, server side. A later registration for the same user
    /// replaces the earlier one.
    pub fn register(&mut self, user: &str, certificate: BindingKeyCertificate) -> Result<(), ProtocolError> {
        if !verify_binding_certificate(&self.pca_public, &certificate) {
            return Err(ProtocolError::RegistrationRefused("certificate does not verify under the PCA key".into()));
        }
        let binding_public = certificate.binding_public.clone();
        self.registry.insert(user.to_owned(), Registration { certificate, binding_public });
        Ok(())
    }
}

/// Stages 1 and 2 (Steps 1 to 4). Run once per device.
///
/// `policy` defaults to the device's current values over its seal
/// selection.
pub fn scenario2_provision(
    device: &mut DeviceActor,
    pca: &mut PcaActor,
    server: &mut SyncServer,
    net: &mut Network,
    policy: Option<PcrPolicy>,
) -> Result<Provisioned, ProtocolError> {
    if !device.app_measured {
        return Err(ProtocolError::AppNotMeasured);
    }
    let mut t = SessionTranscript::new(2);
    if device.aik.is_none() {
        device.aik = Some(enroll_aik(device, pca, net, &mut t)?);
    }
    let policy = match policy {
        Some(p) => p,
        None => PcrPolicy::from_bank(device.tpm.pcrs(), &device.seal_selection)?,
    };
    let binding = device.tpm.create_binding_key(&device.auth, policy.clone())?;
    net.charge_cost(CostName::AikGeneration, "binding key generation");

    let result = certify(device, pca, net, &mut t, &binding.public, &policy);
    let certificate = match result {
        Ok(c) => c,
        Err(e) => {
            let _ = device.tpm.evict_key(&device.auth, &binding.key_id);
            return Err(e);
        }
    };

    t.send(net, &device.id, &server.id, MsgType::Registration, serde_json::to_vec(&certificate).expect("serializes"))?;
    server.register(&device.user, certificate.clone())?;
    if let Some(old) = device.binding_key.replace(binding.key_id) {
        let _ = device.tpm.evict_key(&device.auth, &old);
    }
    Ok(Provisioned { certificate, transcript: t })
}

/// Steps 1 to 3: submission, online attestation to the PCA, certificate.
fn certify(
    device: &mut DeviceActor,
    pca: &mut PcaActor,
    net: &mut Network,
    t: &mut SessionTranscript,
    binding_public: &PublicKey,
    policy: &PcrPolicy,
) -> Result<BindingKeyCertificate, ProtocolError> {
    let aik = device.aik.clone().ok_or(ProtocolError::NoAik)?;
    let submission = KeySubmission {
        binding_public: binding_public.clone(),
        policy: policy.clone(),
        credential: aik.credential.clone(),
    };
    t.send(net, &device.id, &pca.id, MsgType::KeySubmission, serde_json::to_vec(&submission).expect("serializes"))?;

    let nonce = pca.ca.issue_nonce();
    t.send(net, &pca.id, &device.id, MsgType::PcaAttestChallenge, nonce.0.to_vec())?;
    let quote = device.tpm.quote(&aik.handle.key_id, nonce, &policy.selection())?;
    t.send(net, &device.id, &pca.id, MsgType::PcaAttestResponse, serde_json::to_vec(&quote).expect("serializes"))?;
    net.charge_cost(CostName::RemoteAttestation, "attestation to the PCA");

    net.charge_cost(CostName::PcaRoundtrip, "binding key certification");
    match pca.ca.certify_binding_key(binding_public, policy, &submission.credential, &quote, &nonce, net.now()) {
        Ok(cert) => {
            t.send(net, &pca.id, &device.id, MsgType::Certificate, serde_json::to_vec(&cert).expect("serializes"))?;
            Ok(cert)
        }
        Err(e) => {
            t.send(net, &pca.id, &device.id, MsgType::CertificateRefused, e.to_string().into_bytes())?;
            Err(e.into())
        }
    }
}

/// Stage 3 (Steps 5 and 6): encrypt to the registered binding key and
/// send. No attestation; the device state is enforced by the key itself.
pub fn scenario2_push(
    server: &mut SyncServer,
    device: &mut DeviceActor,
    net: &mut Network,
) -> Result<SessionTranscript, ProtocolError> {
    let binding_public = match server.registry.get(&device.user) {
        Some(r) => r.binding_public.clone(),
        None => return Err(ProtocolError::UnregisteredUser(device.user.clone())),
    };
    let item =
        server.take_pending(&device.user, 1).pop().ok_or_else(|| ProtocolError::NothingPending(device.user.clone()))?;
    let mut t = SessionTranscript::new(2);
    t.note("s2.step5.notify", &item.source, &server.id, None);

    let outcome = match push_one(server, device, net, &binding_public, &item.payload, &mut t) {
        Ok(o) => o,
        Err(e) => Outcome::Failed { reason: FailReason::from_error(&e) },
    };
    t.messages.push(outcome);
    t.finish();
    Ok(t)
}

fn push_one(
    server: &mut SyncServer,
    device: &mut DeviceActor,
    net: &mut Network,
    binding_public: &PublicKey,
    payload: &[u8],
    t: &mut SessionTranscript,
) -> Result<Outcome, ProtocolError> {
    let ct = hybrid_encrypt(binding_public, payload, &mut server.rng)?;
    t.send(net, &server.id, &device.id, MsgType::BoundPayload, ct.to_bytes())?;

    let key_id = device.binding_key.ok_or(ProtocolError::NoBindingKey)?;
    let ciphertext = HybridCiphertext::from_bytes(&ct.to_bytes())?;
    device.bound_inbox.push(BoundItem { key_id, ciphertext });
    let index = device.bound_inbox.len() - 1;
    let read = device.read_bound(index);
    net.charge_cost(CostName::SealOp, "bound decryption");
    let detail = serde_json::json!({ "item": format!("bound:{index}") }).to_string().into_bytes();
    match read {
        Ok(_) => {
            t.local(net, &device.id, MsgType::LocalAccessGranted, detail);
            Ok(Outcome::Delivered)
        }
        Err(TpmError::PcrMismatch { .. }) => {
            t.local(net, &device.id, MsgType::LocalAccessDenied, detail);
            Ok(Outcome::DeliveredLocked)
        }
        Err(e) => Err(e.into()),
    }
}
