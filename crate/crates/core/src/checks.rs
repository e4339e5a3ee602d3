//! Security checks over run artifacts. Each one reads only the transcript
//! (and, for the marker scan, the NOC dump), so a verdict stored in a
//! report can be recomputed later by a separate process.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::netsim::{noc_report, ActorId, DumpLine, MsgType, NocReport, Topology, TranscriptLine};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    E2eConfidentiality,
    AttestationGating,
    LockoutAfterTamper,
    NocTrafficAnalysis,
}

impl CheckName {
    pub const ALL: [CheckName; 4] = [
        CheckName::E2eConfidentiality,
        CheckName::AttestationGating,
        CheckName::LockoutAfterTamper,
        CheckName::NocTrafficAnalysis,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CheckName::E2eConfidentiality => "e2e_confidentiality",
            CheckName::AttestationGating => "attestation_gating",
            CheckName::LockoutAfterTamper => "lockout_after_tamper",
            CheckName::NocTrafficAnalysis => "noc_traffic_analysis",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub passed: bool,
    /// Transcript sequence numbers that justify the verdict: the offending
    /// envelopes on failure, the supporting ones on success.
    pub evidence: Vec<u64>,
    pub detail: String,
}

impl CheckResult {
    fn new(passed: bool, evidence: Vec<u64>, detail: impl Into<String>) -> Self {
        Self { passed, evidence, detail: detail.into() }
    }
}

pub type CheckSet = BTreeMap<CheckName, CheckResult>;

/// Scans every relayed payload in the dump for any marker.
pub fn e2e_confidentiality(dump: &[DumpLine], markers: &[Vec<u8>]) -> (CheckResult, NocReport) {
    let envelopes: Vec<_> = dump.iter().map(DumpLine::to_envelope).collect();
    let report = noc_report(envelopes.iter().map(|e| (e, e.payload.as_slice())), markers);
    let hits: Vec<u64> = report.marker_hits.iter().map(|h| h.seq).collect();
    let result = if hits.is_empty() {
        CheckResult::new(true, vec![], format!("{} relayed payloads, no marker found", dump.len()))
    } else {
        CheckResult::new(false, hits, format!("{} marker hit(s) in relayed payloads", report.marker_hits.len()))
    };
    (result, report)
}

/// Every payload sent to a device follows a trusted verdict for that
/// device, with no channel setup in between.
pub fn attestation_gating(lines: &[TranscriptLine]) -> CheckResult {
    let mut trusted: BTreeMap<&ActorId, Option<u64>> = BTreeMap::new();
    let mut supporting = Vec::new();
    let mut violations = Vec::new();
    let mut payloads = 0;
    for l in lines {
        match l.msg_type {
            MsgType::ChannelHello => {
                trusted.insert(&l.from, None);
            }
            MsgType::VerdictTrusted => {
                trusted.insert(&l.to, Some(l.seq));
            }
            MsgType::VerdictUntrusted => {
                trusted.insert(&l.to, None);
            }
            MsgType::SealPayload => {
                payloads += 1;
                match trusted.get(&l.to).copied().flatten() {
                    Some(v) => {
                        if supporting.last() != Some(&v) {
                            supporting.push(v);
                        }
                    }
                    None => violations.push(l.seq),
                }
            }
            _ => {}
        }
    }
    if violations.is_empty() {
        CheckResult::new(true, supporting, format!("{payloads} attested payload(s)"))
    } else {
        CheckResult::new(false, violations, "payload sent without a preceding trusted verdict")
    }
}

/// No access to stored data is granted on a device after it was tampered.
pub fn lockout_after_tamper(lines: &[TranscriptLine]) -> CheckResult {
    let mut tampered: BTreeMap<&ActorId, u64> = BTreeMap::new();
    let mut supporting = Vec::new();
    let mut violations = Vec::new();
    for l in lines.iter().filter(|l| l.is_local()) {
        match l.msg_type {
            MsgType::LocalTamper => {
                tampered.entry(&l.from).or_insert(l.seq);
                supporting.push(l.seq);
            }
            MsgType::LocalAccessGranted if tampered.contains_key(&l.from) => violations.push(l.seq),
            MsgType::LocalAccessDenied if tampered.contains_key(&l.from) => supporting.push(l.seq),
            _ => {}
        }
    }
    if !violations.is_empty() {
        CheckResult::new(false, violations, "access granted after a state change")
    } else if tampered.is_empty() {
        CheckResult::new(true, vec![], "no tamper events")
    } else {
        CheckResult::new(true, supporting, "every post-tamper access was denied")
    }
}

/// The relay sees all device traffic in the centralised topology and none
/// in the decentralised one.
pub fn noc_traffic_analysis(lines: &[TranscriptLine], topology: Topology) -> CheckResult {
    let network: Vec<_> = lines.iter().filter(|l| !l.is_local()).collect();
    let relayed: Vec<u64> = network.iter().filter(|l| l.via.is_some()).map(|l| l.seq).collect();
    match topology {
        Topology::Centralised => {
            let direct: Vec<u64> = network.iter().filter(|l| l.via.is_none()).map(|l| l.seq).collect();
            if !direct.is_empty() {
                return CheckResult::new(false, direct, "envelopes bypassed the NOC in the centralised topology");
            }
            let pairs: std::collections::BTreeSet<_> = network.iter().map(|l| (&l.from, &l.to)).collect();
            CheckResult::new(
                true,
                relayed.clone(),
                format!(
                    "NOC relayed {} envelope(s) and can link {} sender/receiver pair(s)",
                    relayed.len(),
                    pairs.len()
                ),
            )
        }
        Topology::Decentralised => {
            if relayed.is_empty() {
                CheckResult::new(true, vec![], format!("{} direct envelope(s), none relayed", network.len()))
            } else {
                CheckResult::new(false, relayed, "envelopes relayed in the decentralised topology")
            }
        }
    }
}

/// Runs the transcript-only checks and, when a dump is available, the
/// marker scan.
pub fn evaluate(
    lines: &[TranscriptLine],
    dump: Option<&[DumpLine]>,
    markers: &[Vec<u8>],
    topology: Topology,
) -> (CheckSet, Option<NocReport>) {
    let mut set = CheckSet::new();
    let mut noc = None;
    if let Some(dump) = dump {
        let (r, report) = e2e_confidentiality(dump, markers);
        set.insert(CheckName::E2eConfidentiality, r);
        noc = Some(report);
    }
    set.insert(CheckName::AttestationGating, attestation_gating(lines));
    set.insert(CheckName::LockoutAfterTamper, lockout_after_tamper(lines));
    set.insert(CheckName::NocTrafficAnalysis, noc_traffic_analysis(lines, topology));
    (set, noc)
}
