use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::actors::ReferenceMeasurementDb;
use crate::crypto::PublicKey;
use crate::pca::{verify_aik_credential, AikCredential};
use crate::tpm::{verify_quote, MeasurementLog, Nonce, Quote};

/// What the device ships in answer to an attestation challenge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttestationEvidence {
    pub credential: AikCredential,
    pub quote: Quote,
    pub log: MeasurementLog,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum UntrustedReason {
    Malformed,
    BadCredential,
    BadQuoteSignature,
    StaleNonce,
    SelectionMismatch,
    LogReplayMismatch,
    LogSequenceBroken,
    UnknownMeasurement { component: String },
    MissingRequiredComponent { component: String },
}

impl std::fmt::Display for UntrustedReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UntrustedReason::UnknownMeasurement { component } => write!(f, "unknown measurement of `{component}`"),
            UntrustedReason::MissingRequiredComponent { component } => {
                write!(f, "required component `{component}` not measured")
            }
            other => {
                let v = serde_json::to_value(other).expect("reason serializes");
                f.write_str(v["reason"].as_str().unwrap_or("untrusted"))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Trusted,
    Untrusted { reason: UntrustedReason },
}

impl Verdict {
    pub fn is_trusted(&self) -> bool {
        matches!(self, Verdict::Trusted)
    }

    fn untrusted(reason: UntrustedReason) -> Self {
        Verdict::Untrusted { reason }
    }
}

/// Server-side decision on one attestation response.
///
/// Checks run in a fixed order and the first failure is reported:
/// credential, quote signature, nonce, selection, log replay, event
/// numbering, whitelist, required components.
pub fn verify_attestation(
    pca_public: &PublicKey,
    db: &ReferenceMeasurementDb,
    expected_nonce: &Nonce,
    selection: &BTreeSet<usize>,
    ev: &AttestationEvidence,
) -> Verdict {
    if !verify_aik_credential(pca_public, &ev.credential) {
        return Verdict::untrusted(UntrustedReason::BadCredential);
    }
    if !verify_quote(&ev.credential.aik_public, &ev.quote).unwrap_or(false) {
        return Verdict::untrusted(UntrustedReason::BadQuoteSignature);
    }
    if ev.quote.nonce != *expected_nonce {
        return Verdict::untrusted(UntrustedReason::StaleNonce);
    }
    if ev.quote.selection != *selection {
        return Verdict::untrusted(UntrustedReason::SelectionMismatch);
    }
    let replayed = match ev.log.replay() {
        Ok(bank) => bank,
        Err(_) => return Verdict::untrusted(UntrustedReason::Malformed),
    };
    match replayed.composite(selection) {
        Ok(c) if c == ev.quote.composite => {}
        Ok(_) => return Verdict::untrusted(UntrustedReason::LogReplayMismatch),
        Err(_) => return Verdict::untrusted(UntrustedReason::Malformed),
    }
    if ev.log.events.iter().enumerate().any(|(i, e)| e.sequence_no != i as u64 + 1) {
        return Verdict::untrusted(UntrustedReason::LogSequenceBroken);
    }
    if let Some(e) = ev.log.events.iter().find(|e| !db.is_allowed(&e.component_name, &e.code_digest)) {
        return Verdict::untrusted(UntrustedReason::UnknownMeasurement { component: e.component_name.clone() });
    }
    for required in db.required_components() {
        if !ev.log.events.iter().any(|e| &e.component_name == required) {
            return Verdict::untrusted(UntrustedReason::MissingRequiredComponent { component: required.clone() });
        }
    }
    Verdict::Trusted
}
