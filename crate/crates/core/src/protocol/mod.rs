//! Actors and the two push protocols.
//!
//! Scenario 1 attests the handset before every session and seals what it
//! receives; Scenario 2 certifies a PCR-bound key once and then pushes
//! ciphertext for that key with no further attestation.

mod actors;
mod scenario1;
mod scenario2;
mod verifier;

use serde::{Deserialize, Serialize};

pub use actors::{
    reference_platform, AikSlot, BoundItem, Component, DataSource, DeviceActor, LogMutation, PendingItem,
    ReferenceMeasurementDb, Registration, SecureChannel, SyncServer, UserId, APP_COMPONENT, APP_PCR,
};
pub use scenario1::{attest_device, establish_secure_channel, scenario1_push, Scenario1Options};
pub use scenario2::{scenario2_provision, scenario2_push, Provisioned};
pub use verifier::{verify_attestation, AttestationEvidence, UntrustedReason, Verdict};

use crate::crypto::{hash, CryptoError, PublicKey};
use crate::netsim::{ActorId, CostName, MsgType, NetError, Network};
use crate::pca::{PcaError, PrivacyCa};
use crate::tpm::TpmError;

pub const PCA_ID: &str = "pca";

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("nothing pending for user `{0}`")]
    NothingPending(UserId),
    #[error("user `{0}` has no registered binding key")]
    UnregisteredUser(UserId),
    #[error("registration refused: {0}")]
    RegistrationRefused(String),
    #[error("device has no certified AIK")]
    NoAik,
    #[error("device holds no binding key")]
    NoBindingKey,
    #[error("device has not measured the e-mail application")]
    AppNotMeasured,
    #[error("invalid reference database: {0}")]
    BadReferenceDb(String),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("privacy CA: {0}")]
    Pca(#[from] PcaError),
    #[error("tpm: {0}")]
    Tpm(#[from] TpmError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// The privacy CA as a network actor, with the manufacturer root it
/// trusts for endorsement credentials.
#[derive(Debug, Clone)]
pub struct PcaActor {
    pub id: ActorId,
    pub ca: PrivacyCa,
    pub manufacturer_root: PublicKey,
}

impl PcaActor {
    pub fn new(ca: PrivacyCa, manufacturer_root: PublicKey) -> Self {
        Self { id: ActorId::new(PCA_ID), ca, manufacturer_root }
    }
}

/// How notifications reach the server.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NotifyMode {
    /// The source signals the server directly.
    #[default]
    Push,
    /// The source holds the item until the server polls.
    Pull,
}

/// Step 1 of either scenario. In pull mode the item waits at the source
/// until [`SyncServer::poll`].
pub fn notify(source: &mut DataSource, server: &mut SyncServer, user: &str, payload: Vec<u8>, mode: NotifyMode) {
    match mode {
        NotifyMode::Push => server.enqueue(&source.id, user, payload),
        NotifyMode::Pull => source.offer(user, payload),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FailReason {
    Unreachable,
    Protocol { detail: String },
}

impl FailReason {
    fn from_error(e: &ProtocolError) -> Self {
        match e {
            ProtocolError::Net(NetError::Unreachable { .. }) => FailReason::Unreachable,
            other => FailReason::Protocol { detail: other.to_string() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Delivered,
    /// Stored on the device but not decryptable in its current state.
    DeliveredLocked,
    Refused {
        reason: UntrustedReason,
    },
    Failed {
        reason: FailReason,
    },
}

impl Outcome {
    pub fn is_delivered(&self) -> bool {
        matches!(self, Outcome::Delivered | Outcome::DeliveredLocked)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Delivered => "delivered",
            Outcome::DeliveredLocked => "delivered_locked",
            Outcome::Refused { .. } => "refused",
            Outcome::Failed { .. } => "failed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStep {
    pub label: String,
    pub from: ActorId,
    pub to: ActorId,
    /// `None` for the back-office notification, which is not a network
    /// envelope.
    pub envelope_seq: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub scenario: u8,
    pub steps: Vec<SessionStep>,
    /// One entry per payload handled, in order.
    pub messages: Vec<Outcome>,
    pub outcome: Outcome,
}

impl SessionTranscript {
    pub fn new(scenario: u8) -> Self {
        Self { scenario, steps: Vec::new(), messages: Vec::new(), outcome: Outcome::Delivered }
    }

    fn note(&mut self, label: &str, from: &ActorId, to: &ActorId, envelope_seq: Option<u64>) {
        self.steps.push(SessionStep { label: label.to_owned(), from: from.clone(), to: to.clone(), envelope_seq });
    }

    pub(crate) fn send(
        &mut self,
        net: &mut Network,
        from: &ActorId,
        to: &ActorId,
        msg_type: MsgType,
        payload: Vec<u8>,
    ) -> Result<u64, NetError> {
        let seq = net.send(from, to, msg_type, payload)?.seq;
        self.note(&msg_type.label(), from, to, Some(seq));
        Ok(seq)
    }

    pub(crate) fn local(&mut self, net: &mut Network, actor: &ActorId, msg_type: MsgType, detail: Vec<u8>) -> u64 {
        let seq = net.record_local(actor, msg_type, detail).seq;
        self.note(&msg_type.label(), actor, actor, Some(seq));
        seq
    }

    /// Envelope sequence numbers of this session, in order.
    pub fn envelope_seqs(&self) -> Vec<u64> {
        self.steps.iter().filter_map(|s| s.envelope_seq).collect()
    }

    pub fn count_steps(&self, msg_type: MsgType) -> usize {
        let label = msg_type.label();
        self.steps.iter().filter(|s| s.label == label).count()
    }

    /// Appends `other` and recomputes the session outcome.
    pub fn absorb(&mut self, other: SessionTranscript) {
        self.steps.extend(other.steps);
        self.messages.extend(other.messages);
        self.outcome = aggregate(&self.messages);
    }

    fn finish(&mut self) {
        self.outcome = aggregate(&self.messages);
    }
}

/// Worst outcome wins: failed, then refused, then locked.
fn aggregate(messages: &[Outcome]) -> Outcome {
    let rank = |o: &Outcome| match o {
        Outcome::Failed { .. } => 3,
        Outcome::Refused { .. } => 2,
        Outcome::DeliveredLocked => 1,
        Outcome::Delivered => 0,
    };
    messages.iter().max_by_key(|o| rank(o)).cloned().unwrap_or(Outcome::Delivered)
}

/// Certifies a new AIK at the PCA. A prefetched key from the device pool
/// is used when available; otherwise one is generated and charged.
pub fn enroll_aik(
    device: &mut DeviceActor,
    pca: &mut PcaActor,
    net: &mut Network,
    t: &mut SessionTranscript,
) -> Result<AikSlot, ProtocolError> {
    let handle = match device.aik_pool.pop_front() {
        Some(h) => h,
        None => {
            let h = device.tpm.create_aik(&device.auth)?;
            net.charge_cost(CostName::AikGeneration, "AIK generation");
            h
        }
    };
    let request = serde_json::json!({ "aik_public": handle.public, "ekc": device.tpm.ekc() });
    t.send(net, &device.id, &pca.id, MsgType::AikEnrollRequest, request.to_string().into_bytes())?;
    net.charge_cost(CostName::PcaRoundtrip, "AIK certification");
    let credential = pca.ca.enroll_aik(&handle.public, device.tpm.ekc(), &pca.manufacturer_root, net.now())?;
    t.send(net, &pca.id, &device.id, MsgType::AikEnrollResponse, serde_json::to_vec(&credential).expect("serializes"))?;
    Ok(AikSlot { handle, credential })
}

/// Generates `n` AIKs ahead of need; each is charged now.
pub fn prefetch_aiks(device: &mut DeviceActor, net: &mut Network, n: usize) -> Result<(), ProtocolError> {
    for _ in 0..n {
        let h = device.tpm.create_aik(&device.auth)?;
        net.charge_cost(CostName::AikGeneration, "AIK prefetch");
        device.aik_pool.push_back(h);
    }
    Ok(())
}

/// Extends `pcr` with an unexpected value, as a state change on the device.
pub fn tamper(device: &mut DeviceActor, net: &mut Network, pcr: usize) -> Result<u64, ProtocolError> {
    device.tpm.extend(pcr, &hash(format!("pushsim-tamper-{pcr}").as_bytes()))?;
    let detail = serde_json::json!({ "pcr": pcr }).to_string().into_bytes();
    Ok(net.record_local(&device.id, MsgType::LocalTamper, detail).seq)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub item: String,
    pub granted: bool,
    pub seq: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn record_access(net: &mut Network, device: &ActorId, item: String, result: Result<Vec<u8>, TpmError>) -> AuditEntry {
    let (msg_type, error) = match &result {
        Ok(_) => (MsgType::LocalAccessGranted, None),
        Err(e) => (MsgType::LocalAccessDenied, Some(e.to_string())),
    };
    let detail = serde_json::json!({ "item": item }).to_string().into_bytes();
    let seq = net.record_local(device, msg_type, detail).seq;
    AuditEntry { item, granted: result.is_ok(), seq, error }
}

/// Tries to open every item stored on the device, recording each attempt.
pub fn audit_access(device: &DeviceActor, net: &mut Network) -> Vec<AuditEntry> {
    let mut out = Vec::new();
    for i in 0..device.sealed_inbox.len() {
        out.push(record_access(net, &device.id, format!("sealed:{i}"), device.read_sealed(i)));
    }
    for i in 0..device.bound_inbox.len() {
        out.push(record_access(net, &device.id, format!("bound:{i}"), device.read_bound(i)));
    }
    out
}

/// Several payloads in one session (Scenario 1) or a loop of sends
/// (Scenario 2). Takes the next `n` pending items for the device's user.
pub fn bulk_push(
    server: &mut SyncServer,
    device: &mut DeviceActor,
    pca: &mut PcaActor,
    net: &mut Network,
    n: usize,
    scenario: u8,
    opts: Scenario1Options,
) -> Result<SessionTranscript, ProtocolError> {
    match scenario {
        1 => scenario1::session(server, device, pca, net, opts, n),
        _ => {
            if server.registration(&device.user).is_none() {
                return Err(ProtocolError::UnregisteredUser(device.user.clone()));
            }
            let mut t = SessionTranscript::new(2);
            for _ in 0..n {
                t.absorb(scenario2_push(server, device, net)?);
            }
            Ok(t)
        }
    }
}
