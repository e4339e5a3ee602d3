//! Attest, transfer, seal.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::actors::{DeviceActor, PendingItem, SecureChannel, SyncServer};
use super::verifier::{verify_attestation, AttestationEvidence, UntrustedReason, Verdict};
use super::{enroll_aik, FailReason, Outcome, PcaActor, ProtocolError, SessionTranscript};
use crate::crypto::{
    aead_open, aead_seal, hybrid_decrypt, hybrid_encrypt, HybridCiphertext, KeyPair, KeyRole, PublicKey, SymmetricKey,
};
use crate::netsim::{CostName, MsgType, Network};
use crate::tpm::Nonce;

const CONTENT_AAD: &[u8] = b"pushsim-content-v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario1Options {
    /// Run the optional key exchange so the payload is encrypted
    /// independently of the channel.
    pub independent_encryption: bool,
    /// Certify a new AIK for every session and discard it afterwards.
    pub fresh_aik_per_push: bool,
}

impl Default for Scenario1Options {
    fn default() -> Self {
        Self { independent_encryption: true, fresh_aik_per_push: false }
    }
}

/// Step 2. The device offers a session public key; the server answers
/// with a fresh session key wrapped to it.
pub fn establish_secure_channel(
    server: &mut SyncServer,
    device: &mut DeviceActor,
    net: &mut Network,
    t: &mut SessionTranscript,
) -> Result<SecureChannel, ProtocolError> {
    let session = KeyPair::generate(device.tpm.suite(), KeyRole::Session, &mut device.rng);
    t.send(net, &device.id, &server.id, MsgType::ChannelHello, session.public.bytes.clone())?;

    let offered = PublicKey { suite: session.public.suite, bytes: session.public.bytes.clone() };
    let key = SymmetricKey::random(&mut server.rng);
    let wrapped = hybrid_encrypt(&offered, &key.0, &mut server.rng)?;
    t.send(net, &server.id, &device.id, MsgType::ChannelAccept, wrapped.to_bytes())?;
    net.charge_cost(CostName::ChannelSetup, "secure channel");

    let unwrapped = hybrid_decrypt(&session.private, &wrapped)?;
    let device_key =
        SymmetricKey(unwrapped.try_into().map_err(|_| ProtocolError::Malformed("session key length".into()))?);
    debug_assert_eq!(device_key.0, key.0);
    let id = server.next_channel_id();
    Ok(SecureChannel::new(id, server.id.clone(), device.id.clone(), device_key))
}

#[derive(Serialize, Deserialize)]
struct Challenge {
    nonce: Nonce,
    selection: BTreeSet<usize>,
}

/// Step 3: challenge, quote plus log, verdict.
pub fn attest_device(
    server: &mut SyncServer,
    device: &mut DeviceActor,
    net: &mut Network,
    channel: &mut SecureChannel,
    t: &mut SessionTranscript,
) -> Result<Verdict, ProtocolError> {
    let nonce = Nonce::random(&mut server.rng);
    let selection = server.attestation_selection.clone();
    let challenge = serde_json::to_vec(&Challenge { nonce, selection: selection.clone() }).expect("serializes");
    let record = channel.seal(MsgType::AttestChallenge, &challenge);
    t.send(net, &server.id, &device.id, MsgType::AttestChallenge, record.clone())?;

    // Device side.
    let challenge: Challenge = serde_json::from_slice(&channel.open(MsgType::AttestChallenge, &record)?)
        .map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let aik = device.aik.as_ref().ok_or(ProtocolError::NoAik)?;
    let quote = device.tpm.quote(&aik.handle.key_id, challenge.nonce, &challenge.selection)?;
    let mut log = device.tpm.log().clone();
    if let Some(m) = device.shipped_log_mutation {
        m.apply(&mut log);
    }
    let evidence = AttestationEvidence { credential: aik.credential.clone(), quote, log };
    let record = channel.seal(MsgType::AttestResponse, &serde_json::to_vec(&evidence).expect("serializes"));
    t.send(net, &device.id, &server.id, MsgType::AttestResponse, record.clone())?;

    // Server side.
    net.charge_cost(CostName::RemoteAttestation, "remote attestation");
    let verdict =
        match channel.open(MsgType::AttestResponse, &record).ok().and_then(|pt| serde_json::from_slice(&pt).ok()) {
            Some(ev) => verify_attestation(&server.pca_public, &server.reference_db, &nonce, &selection, &ev),
            None => Verdict::Untrusted { reason: UntrustedReason::Malformed },
        };
    let (msg_type, body) = match &verdict {
        Verdict::Trusted => (MsgType::VerdictTrusted, Vec::new()),
        Verdict::Untrusted { reason } => (MsgType::VerdictUntrusted, reason.to_string().into_bytes()),
    };
    let record = channel.seal(msg_type, &body);
    t.send(net, &server.id, &device.id, msg_type, record)?;
    Ok(verdict)
}

/// Step 4: the device offers an ephemeral key, the server wraps a content
/// key to it. Both messages travel inside the channel.
fn key_exchange(
    server: &mut SyncServer,
    device: &mut DeviceActor,
    net: &mut Network,
    channel: &mut SecureChannel,
    t: &mut SessionTranscript,
) -> Result<SymmetricKey, ProtocolError> {
    let eph = KeyPair::generate(device.tpm.suite(), KeyRole::Session, &mut device.rng);
    let offer = channel.seal(MsgType::KeyOffer, &serde_json::to_vec(&eph.public).expect("serializes"));
    t.send(net, &device.id, &server.id, MsgType::KeyOffer, offer.clone())?;

    let offered: PublicKey = serde_json::from_slice(&channel.open(MsgType::KeyOffer, &offer)?)
        .map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let content_key = SymmetricKey::random(&mut server.rng);
    let wrapped = hybrid_encrypt(&offered, &content_key.0, &mut server.rng)?;
    let reply = channel.seal(MsgType::KeyReply, &wrapped.to_bytes());
    t.send(net, &server.id, &device.id, MsgType::KeyReply, reply.clone())?;
    net.charge_cost(CostName::KeyExchange, "key exchange");

    let wrapped = HybridCiphertext::from_bytes(&channel.open(MsgType::KeyReply, &reply)?)?;
    let raw = hybrid_decrypt(&eph.private, &wrapped)?;
    Ok(SymmetricKey(raw.try_into().map_err(|_| ProtocolError::Malformed("content key length".into()))?))
}

fn content_nonce(i: usize) -> [u8; 12] {
    let mut n = [0u8; 12];
    n[4..].copy_from_slice(&(i as u64).to_be_bytes());
    n
}

/// Step 5 for one item: transfer, then seal on receipt.
#[allow(clippy::too_many_arguments)]
fn deliver(
    server: &SyncServer,
    device: &mut DeviceActor,
    net: &mut Network,
    channel: &mut SecureChannel,
    content_key: Option<&SymmetricKey>,
    index: usize,
    item: &PendingItem,
    t: &mut SessionTranscript,
) -> Result<(), ProtocolError> {
    let body = match content_key {
        Some(k) => aead_seal(k, &content_nonce(index), CONTENT_AAD, &item.payload),
        None => item.payload.clone(),
    };
    let record = channel.seal(MsgType::SealPayload, &body);
    t.send(net, &server.id, &device.id, MsgType::SealPayload, record.clone())?;

    let body = channel.open(MsgType::SealPayload, &record)?;
    let plaintext = match content_key {
        Some(k) => aead_open(k, &content_nonce(index), CONTENT_AAD, &body)?,
        None => body,
    };
    let blob = device.tpm.seal(&device.auth, &plaintext, &device.seal_selection)?;
    net.charge_cost(CostName::SealOp, "seal on receipt");
    device.sealed_inbox.push(blob);
    Ok(())
}

enum Halt {
    Refused(UntrustedReason),
    Failed(ProtocolError),
}

impl From<ProtocolError> for Halt {
    fn from(e: ProtocolError) -> Self {
        Halt::Failed(e)
    }
}

fn run_session(
    server: &mut SyncServer,
    device: &mut DeviceActor,
    pca: &mut PcaActor,
    net: &mut Network,
    opts: Scenario1Options,
    items: &[PendingItem],
    t: &mut SessionTranscript,
) -> Result<(), Halt> {
    let mut channel = establish_secure_channel(server, device, net, t)?;
    if opts.fresh_aik_per_push || device.aik.is_none() {
        device.aik = Some(enroll_aik(device, pca, net, t)?);
    }
    let verdict = attest_device(server, device, net, &mut channel, t)?;
    if let Verdict::Untrusted { reason } = verdict {
        return Err(Halt::Refused(reason));
    }
    let content_key =
        if opts.independent_encryption { Some(key_exchange(server, device, net, &mut channel, t)?) } else { None };
    for (i, item) in items.iter().enumerate() {
        deliver(server, device, net, &mut channel, content_key.as_ref(), i, item, t)?;
        t.messages.push(Outcome::Delivered);
    }
    Ok(())
}

pub(super) fn session(
    server: &mut SyncServer,
    device: &mut DeviceActor,
    pca: &mut PcaActor,
    net: &mut Network,
    opts: Scenario1Options,
    n: usize,
) -> Result<SessionTranscript, ProtocolError> {
    let mut t = SessionTranscript::new(1);
    if n == 0 {
        return Ok(t);
    }
    let items = server.take_pending(&device.user, n);
    if items.len() < n {
        // Put them back; a session either has all its items or none.
        for item in items.into_iter().rev() {
            server.pending.push_front(item);
        }
        return Err(ProtocolError::NothingPending(device.user.clone()));
    }
    for item in &items {
        t.note("s1.step1.notify", &item.source, &server.id, None);
    }
    let result = run_session(server, device, pca, net, opts, &items, &mut t);
    if opts.fresh_aik_per_push {
        if let Some(slot) = device.aik.take() {
            let _ = device.tpm.evict_key(&device.auth, &slot.handle.key_id);
        }
    }
    if let Err(halt) = result {
        let outcome = match halt {
            Halt::Refused(reason) => Outcome::Refused { reason },
            Halt::Failed(e) => Outcome::Failed { reason: FailReason::from_error(&e) },
        };
        while t.messages.len() < items.len() {
            t.messages.push(outcome.clone());
        }
    }
    t.finish();
    Ok(t)
}

/// One notification, one session (Steps 2 to 5).
pub fn scenario1_push(
    server: &mut SyncServer,
    device: &mut DeviceActor,
    pca: &mut PcaActor,
    net: &mut Network,
    opts: Scenario1Options,
) -> Result<SessionTranscript, ProtocolError> {
    session(server, device, pca, net, opts, 1)
}
