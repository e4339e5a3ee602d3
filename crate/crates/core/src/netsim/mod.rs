//! Deterministic transport between actors.
//!
//! In the centralised topology every network envelope is relayed by the
//! NOC, which keeps a byte-for-byte copy ([`NocObserver`]). In the
//! decentralised topology envelopes travel directly and the NOC sees
//! nothing. Device-local events (tampering, access attempts) are recorded
//! in the same sequence as envelopes with `from == to` and no relay; they
//! never cross the network.
//!
//! Time only moves when a [`CostTable`] entry is charged or a payload is
//! transmitted.

mod cost;
mod transcript;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use cost::{CostName, CostOverrides, CostTable, SimTime};
pub use transcript::{
    read_noc_dump, read_transcript, write_noc_dump, write_transcript, DumpLine, TranscriptError, TranscriptLine,
};

pub const NOC_ID: &str = "noc";

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActorId(pub String);

impl ActorId {
    pub fn new(s: impl Into<String>) -> Self {
        ActorId(s.into())
    }

    pub fn noc() -> Self {
        ActorId(NOC_ID.to_owned())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    #[default]
    Centralised,
    Decentralised,
}

/// Protocol step label carried by every envelope, written `sN.stepK.name`
/// for scenario N, step K.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MsgType {
    #[serde(rename = "s1.step2.channel_hello")]
    ChannelHello,
    #[serde(rename = "s1.step2.channel_accept")]
    ChannelAccept,
    #[serde(rename = "s1.step3.attest_challenge")]
    AttestChallenge,
    #[serde(rename = "s1.step3.attest_response")]
    AttestResponse,
    #[serde(rename = "s1.step3.verdict_trusted")]
    VerdictTrusted,
    #[serde(rename = "s1.step3.verdict_untrusted")]
    VerdictUntrusted,
    #[serde(rename = "s1.step4.key_offer")]
    KeyOffer,
    #[serde(rename = "s1.step4.key_reply")]
    KeyReply,
    #[serde(rename = "s1.step5.payload")]
    SealPayload,
    /// AIK enrollment at the PCA (Scenario 1 fresh AIKs, Scenario 2 setup).
    #[serde(rename = "pca.aik_enroll_request")]
    AikEnrollRequest,
    #[serde(rename = "pca.aik_enroll_response")]
    AikEnrollResponse,
    #[serde(rename = "s2.step1.key_submission")]
    KeySubmission,
    #[serde(rename = "s2.step2.attest_challenge")]
    PcaAttestChallenge,
    #[serde(rename = "s2.step2.attest_response")]
    PcaAttestResponse,
    #[serde(rename = "s2.step3.certificate")]
    Certificate,
    #[serde(rename = "s2.step3.refused")]
    CertificateRefused,
    #[serde(rename = "s2.step4.registration")]
    Registration,
    #[serde(rename = "s2.step6.payload")]
    BoundPayload,
    #[serde(rename = "local.tamper")]
    LocalTamper,
    #[serde(rename = "local.access_granted")]
    LocalAccessGranted,
    #[serde(rename = "local.access_denied")]
    LocalAccessDenied,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsgCategory {
    Channel,
    Attestation,
    KeyExchange,
    Payload,
    Pca,
    Registration,
    Local,
}

impl MsgType {
    pub fn category(self) -> MsgCategory {
        use MsgType::*;
        match self {
            ChannelHello | ChannelAccept => MsgCategory::Channel,
            AttestChallenge | AttestResponse | VerdictTrusted | VerdictUntrusted => MsgCategory::Attestation,
            KeyOffer | KeyReply => MsgCategory::KeyExchange,
            SealPayload | BoundPayload => MsgCategory::Payload,
            AikEnrollRequest | AikEnrollResponse | KeySubmission | PcaAttestChallenge | PcaAttestResponse
            | Certificate | CertificateRefused => MsgCategory::Pca,
            Registration => MsgCategory::Registration,
            LocalTamper | LocalAccessGranted | LocalAccessDenied => MsgCategory::Local,
        }
    }

    /// Quote-bearing or attestation-verdict traffic of either scenario.
    pub fn is_attestation(self) -> bool {
        matches!(
            self,
            MsgType::AttestChallenge
                | MsgType::AttestResponse
                | MsgType::VerdictTrusted
                | MsgType::VerdictUntrusted
                | MsgType::PcaAttestChallenge
                | MsgType::PcaAttestResponse
        )
    }

    pub fn label(self) -> String {
        serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .expect("MsgType serializes to a string")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub seq: u64,
    pub sim_time: SimTime,
    pub from: ActorId,
    pub to: ActorId,
    pub via: Option<ActorId>,
    pub msg_type: MsgType,
    #[serde(with = "hex::serde")]
    pub payload: Vec<u8>,
    pub size: usize,
}

impl Envelope {
    pub fn is_local(&self) -> bool {
        self.from == self.to
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Receipt {
    pub seq: u64,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum NetError {
    #[error("no route from {from} to {to}: NOC unavailable")]
    Unreachable { from: ActorId, to: ActorId },
    #[error("operation only applies to the centralised topology")]
    NotCentralised,
    #[error("unknown cost entry `{0}`")]
    UnknownCost(String),
}

/// Where a charge was incurred.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "phase", content = "message")]
pub enum Phase {
    Setup,
    Provisioning,
    Push(u64),
    Audit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Charge {
    pub cost: CostName,
    pub seconds: SimTime,
    pub phase: Phase,
    /// Clock value after the charge.
    pub at: SimTime,
    pub note: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimClock {
    now: SimTime,
}

impl SimClock {
    pub fn now(&self) -> SimTime {
        self.now
    }

    fn advance(&mut self, dt: SimTime) {
        assert!(dt >= 0.0 && dt.is_finite(), "clock can only move forward");
        self.now += dt;
    }
}

/// Everything the NOC saw.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NocObserver {
    captured: Vec<Envelope>,
}

impl NocObserver {
    pub fn captured(&self) -> &[Envelope] {
        &self.captured
    }

    /// `(from, to, sim_time)` for every relayed envelope.
    pub fn linkage(&self) -> Vec<(ActorId, ActorId, SimTime)> {
        self.captured.iter().map(|e| (e.from.clone(), e.to.clone(), e.sim_time)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTraffic {
    pub from: ActorId,
    pub to: ActorId,
    pub messages: u64,
    pub bytes: u64,
    pub first_seen: SimTime,
    pub last_seen: SimTime,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerHit {
    pub seq: u64,
    pub marker: usize,
}

/// What a curious NOC can learn (traffic pattern) and what it must not
/// (plaintext markers).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NocReport {
    pub captured: u64,
    pub pairs: Vec<PairTraffic>,
    pub marker_hits: Vec<MarkerHit>,
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Traffic analysis plus a marker scan over captured payloads.
pub fn noc_report<'a>(captured: impl IntoIterator<Item = (&'a Envelope, &'a [u8])>, markers: &[Vec<u8>]) -> NocReport {
    let mut pairs: BTreeMap<(ActorId, ActorId), PairTraffic> = BTreeMap::new();
    let mut hits = Vec::new();
    let mut count = 0;
    for (env, payload) in captured {
        count += 1;
        let p = pairs.entry((env.from.clone(), env.to.clone())).or_insert_with(|| PairTraffic {
            from: env.from.clone(),
            to: env.to.clone(),
            messages: 0,
            bytes: 0,
            first_seen: env.sim_time,
            last_seen: env.sim_time,
        });
        p.messages += 1;
        p.bytes += env.size as u64;
        p.last_seen = env.sim_time;
        for (i, m) in markers.iter().enumerate() {
            if contains(payload, m) {
                hits.push(MarkerHit { seq: env.seq, marker: i });
            }
        }
    }
    NocReport { captured: count, pairs: pairs.into_values().collect(), marker_hits: hits }
}

impl NocObserver {
    pub fn report(&self, markers: &[Vec<u8>]) -> NocReport {
        noc_report(self.captured.iter().map(|e| (e, e.payload.as_slice())), markers)
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    topology: Topology,
    noc_available: bool,
    costs: CostTable,
    clock: SimClock,
    phase: Phase,
    charges: Vec<Charge>,
    transmission_total: SimTime,
    log: Vec<Envelope>,
    observer: NocObserver,
}

impl Network {
    pub fn new(topology: Topology, costs: CostTable) -> Self {
        Self {
            topology,
            noc_available: true,
            costs,
            clock: SimClock::default(),
            phase: Phase::Setup,
            charges: Vec::new(),
            transmission_total: 0.0,
            log: Vec::new(),
            observer: NocObserver::default(),
        }
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn costs(&self) -> &CostTable {
        &self.costs
    }

    pub fn now(&self) -> SimTime {
        self.clock.now()
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    pub fn noc_available(&self) -> bool {
        self.noc_available
    }

    pub fn set_noc_available(&mut self, available: bool) -> Result<(), NetError> {
        if self.topology != Topology::Centralised {
            return Err(NetError::NotCentralised);
        }
        self.noc_available = available;
        Ok(())
    }

    /// Every envelope and local event, in sequence order.
    pub fn envelopes(&self) -> &[Envelope] {
        &self.log
    }

    pub fn envelope(&self, seq: u64) -> Option<&Envelope> {
        self.log.get(seq.checked_sub(1)? as usize)
    }

    pub fn observer(&self) -> &NocObserver {
        &self.observer
    }

    pub fn charges(&self) -> &[Charge] {
        &self.charges
    }

    pub fn transmission_total(&self) -> SimTime {
        self.transmission_total
    }

    fn next_seq(&self) -> u64 {
        self.log.len() as u64 + 1
    }

    /// Checks that `from` can currently reach `to`.
    pub fn route(&self, from: &ActorId, to: &ActorId) -> Result<Option<ActorId>, NetError> {
        match self.topology {
            Topology::Decentralised => Ok(None),
            Topology::Centralised if self.noc_available => Ok(Some(ActorId::noc())),
            Topology::Centralised => Err(NetError::Unreachable { from: from.clone(), to: to.clone() }),
        }
    }

    pub fn send(
        &mut self,
        from: &ActorId,
        to: &ActorId,
        msg_type: MsgType,
        payload: Vec<u8>,
    ) -> Result<Receipt, NetError> {
        let via = self.route(from, to)?;
        let size = payload.len();
        let sent_at = self.clock.now();
        let dt = self.costs.transmission(size);
        self.clock.advance(dt);
        self.transmission_total += dt;
        let seq = self.next_seq();
        let env = Envelope { seq, sim_time: sent_at, from: from.clone(), to: to.clone(), via, msg_type, payload, size };
        if env.via.is_some() {
            self.observer.captured.push(env.clone());
        }
        self.log.push(env);
        Ok(Receipt { seq })
    }

    /// Records a device-local event; never routed, never charged.
    pub fn record_local(&mut self, actor: &ActorId, msg_type: MsgType, detail: Vec<u8>) -> Receipt {
        let seq = self.next_seq();
        let size = detail.len();
        self.log.push(Envelope {
            seq,
            sim_time: self.clock.now(),
            from: actor.clone(),
            to: actor.clone(),
            via: None,
            msg_type,
            payload: detail,
            size,
        });
        Receipt { seq }
    }

    pub fn charge(&mut self, cost_name: &str) -> Result<SimTime, NetError> {
        let name = cost_name.parse::<CostName>().map_err(NetError::UnknownCost)?;
        Ok(self.charge_cost(name, ""))
    }

    pub fn charge_cost(&mut self, cost: CostName, note: &str) -> SimTime {
        let seconds = self.costs.get(cost);
        self.clock.advance(seconds);
        self.charges.push(Charge { cost, seconds, phase: self.phase, at: self.clock.now(), note: note.to_owned() });
        seconds
    }

    pub fn transcript_lines(&self) -> Vec<TranscriptLine> {
        self.log.iter().map(TranscriptLine::from_envelope).collect()
    }
}
