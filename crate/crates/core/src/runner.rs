//! Scenario runs driven by a [`RunConfig`], their reports, and the
//! offline re-check and side-by-side comparison of runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checks::{evaluate, CheckName, CheckResult, CheckSet};
use crate::crypto::{random_bytes, Digest, Suite};
use crate::keystore::{read_json, write_json, StoreError};
use crate::netsim::{
    read_noc_dump, read_transcript, write_noc_dump, write_transcript, Charge, CostName, CostOverrides, DumpLine,
    NocReport, Phase, SimTime, Topology, TranscriptError,
};
use crate::protocol::{
    audit_access, bulk_push, notify, prefetch_aiks, scenario1_push, scenario2_provision, scenario2_push, tamper,
    AuditEntry, FailReason, NotifyMode, Outcome, ProtocolError, Scenario1Options, SessionTranscript, APP_PCR,
};
use crate::tpm::PCR_COUNT;
use crate::world::{World, WorldSpec};

pub const REPORT_FORMAT: &str = "pushsim-report/1";
pub const DEFAULT_PASSPHRASE: &str = "pushsim";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WhitelistEntry {
    pub component: String,
    pub digest: Digest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: u8,
    pub topology: Topology,
    pub messages: u64,
    /// Scenario 1: one session for all messages.
    pub bulk: bool,
    pub independent_encryption: bool,
    pub fresh_aik_per_push: bool,
    /// Generate AIKs during provisioning rather than inside each push.
    pub aik_prefetch: bool,
    /// Tamper with the device once this many messages have been pushed.
    pub tamper_after: Option<u64>,
    /// Take the NOC down once this many messages have been pushed.
    pub noc_down_after: Option<u64>,
    /// Text markers embedded in every payload, on top of the per-run
    /// random marker.
    pub noc_malicious_markers: Vec<String>,
    pub cost_overrides: CostOverrides,
    pub whitelist: Vec<WhitelistEntry>,
    pub seal_selection: Vec<usize>,
    pub notify_mode: NotifyMode,
    /// Pull mode: the server polls every this many messages.
    pub poll_interval: u64,
    pub key_suite: Suite,
    pub seed: u64,
    pub transcript_path: Option<PathBuf>,
    pub report_path: Option<PathBuf>,
    pub noc_dump_path: Option<PathBuf>,
    pub keystore_path: Option<PathBuf>,
    pub store_passphrase: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: 1,
            topology: Topology::Centralised,
            messages: 1,
            bulk: false,
            independent_encryption: true,
            fresh_aik_per_push: false,
            aik_prefetch: false,
            tamper_after: None,
            noc_down_after: None,
            noc_malicious_markers: Vec::new(),
            cost_overrides: CostOverrides::default(),
            whitelist: Vec::new(),
            seal_selection: vec![APP_PCR],
            notify_mode: NotifyMode::Push,
            poll_interval: 1,
            key_suite: Suite::default(),
            seed: 0,
            transcript_path: None,
            report_path: None,
            noc_dump_path: None,
            keystore_path: None,
            store_passphrase: DEFAULT_PASSPHRASE.to_owned(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("key store: {0}")]
    Store(#[from] StoreError),
    #[error("setup failed: {0}")]
    Setup(#[from] ProtocolError),
    #[error("report and recomputation disagree on {}", .mismatches.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(", "))]
    VerdictMismatch { mismatches: Vec<CheckName>, recomputed: Box<CheckOutcome> },
}

impl From<TranscriptError> for RunError {
    fn from(e: TranscriptError) -> Self {
        match e {
            TranscriptError::Io { path, source } => RunError::Io { path, source },
            TranscriptError::Parse { path, line, reason } => {
                RunError::Parse { path, reason: format!("line {line}: {reason}") }
            }
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        serde_json::from_str(text).map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|source| RunError::Io { path: path.to_owned(), source })?;
        serde_json::from_str(&text).map_err(|e| RunError::Parse { path: path.to_owned(), reason: e.to_string() })
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        if !matches!(self.scenario, 1 | 2) {
            return bad(format!("scenario must be 1 or 2, got {}", self.scenario));
        }
        if let Some(t) = self.tamper_after {
            if t > self.messages {
                return bad(format!("tamper_after ({t}) exceeds messages ({})", self.messages));
            }
        }
        if self.scenario == 1 && self.bulk {
            for (name, v) in [("tamper_after", self.tamper_after), ("noc_down_after", self.noc_down_after)] {
                if let Some(k) = v.filter(|&k| k > 0 && k < self.messages) {
                    return bad(format!("{name} ({k}) falls inside a single bulk session"));
                }
            }
        }
        if self.seal_selection.is_empty() {
            return bad("seal_selection is empty".into());
        }
        if let Some(i) = self.seal_selection.iter().find(|&&i| i >= PCR_COUNT) {
            return bad(format!("seal_selection index {i} out of range"));
        }
        if self.poll_interval == 0 {
            return bad("poll_interval must be at least 1".into());
        }
        let invalid = self.costs().invalid_fields();
        if !invalid.is_empty() {
            return bad(format!("cost entries must be finite and non-negative: {}", invalid.join(", ")));
        }
        Ok(())
    }

    pub fn costs(&self) -> crate::netsim::CostTable {
        crate::netsim::CostTable::default().with_overrides(&self.cost_overrides)
    }

    fn scenario1_options(&self) -> Scenario1Options {
        Scenario1Options {
            independent_encryption: self.independent_encryption,
            fresh_aik_per_push: self.fresh_aik_per_push,
        }
    }

    fn world_spec(&self) -> WorldSpec {
        WorldSpec {
            seed: self.seed,
            suite: self.key_suite,
            topology: self.topology,
            costs: self.costs(),
            extra_whitelist: self.whitelist.iter().map(|w| (w.component.clone(), w.digest)).collect(),
            seal_selection: self.seal_selection.iter().copied().collect(),
            ..WorldSpec::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageRecord {
    /// 1-based.
    pub index: u64,
    pub outcome: Outcome,
    pub latency: SimTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub config: RunConfig,
    pub messages: Vec<MessageRecord>,
    pub charges: Vec<Charge>,
    pub charge_totals: BTreeMap<CostName, SimTime>,
    pub total_latency: SimTime,
    pub provisioning_latency: SimTime,
    pub push_latency_total: SimTime,
    pub mean_push_latency: SimTime,
    pub transmission_total: SimTime,
    pub envelope_counts: BTreeMap<String, u64>,
    pub checks: CheckSet,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noc: Option<NocReport>,
    /// Hex; the first one is the per-run random marker.
    pub markers: Vec<String>,
    pub audit: Vec<AuditEntry>,
    pub notes: Vec<String>,
    pub unexpected_errors: Vec<String>,
    pub keystore_files: Vec<PathBuf>,
}

impl RunReport {
    pub fn all_checks_pass(&self) -> bool {
        self.checks.values().all(|c| c.passed)
    }

    /// Exit status 0 iff this holds.
    pub fn success(&self) -> bool {
        self.all_checks_pass() && self.unexpected_errors.is_empty()
    }

    /// Charges incurred in push phases only.
    pub fn push_charges(&self) -> impl Iterator<Item = &Charge> {
        self.charges.iter().filter(|c| matches!(c.phase, Phase::Push(_)))
    }

    pub fn marker_bytes(&self) -> Vec<Vec<u8>> {
        self.markers.iter().filter_map(|m| hex::decode(m).ok()).collect()
    }
}

/// Everything a run produces, before anything is written to disk.
pub struct RunArtifacts {
    pub report: RunReport,
    pub world: World,
    pub sessions: Vec<SessionTranscript>,
}

fn payload_for(index: u64, marker: &[u8], text_markers: &[String]) -> Vec<u8> {
    let mut p = format!("message {index}\n").into_bytes();
    p.extend_from_slice(marker);
    for m in text_markers {
        p.push(b'\n');
        p.extend_from_slice(m.as_bytes());
    }
    p
}

struct Driver<'a> {
    cfg: &'a RunConfig,
    w: World,
    records: Vec<MessageRecord>,
    sessions: Vec<SessionTranscript>,
    notes: Vec<String>,
    unexpected: Vec<String>,
    tampered: bool,
}

impl Driver<'_> {
    /// Applies schedule events due once `done` messages have been pushed.
    fn events(&mut self, done: u64) -> Result<(), RunError> {
        if self.cfg.tamper_after == Some(done) && !self.tampered {
            let pcr = self.cfg.seal_selection[0];
            tamper(&mut self.w.device, &mut self.w.net, pcr)?;
            self.tampered = true;
        }
        if self.cfg.noc_down_after == Some(done)
            && self.w.net.noc_available()
            && self.w.net.set_noc_available(false).is_err()
        {
            self.notes.push(format!("noc_down_after={done} has no effect in the decentralised topology"));
        }
        Ok(())
    }

    fn record(&mut self, t: Result<SessionTranscript, ProtocolError>, start: SimTime, n: usize) {
        let latency = (self.w.net.now() - start) / n.max(1) as f64;
        let outcomes = match t {
            Ok(t) => {
                let o = t.messages.clone();
                self.sessions.push(t);
                o
            }
            Err(e) => vec![Outcome::Failed { reason: FailReason::Protocol { detail: e.to_string() } }; n],
        };
        for outcome in outcomes {
            if let Outcome::Failed { reason: FailReason::Protocol { detail } } = &outcome {
                self.unexpected.push(format!("message {}: {detail}", self.records.len() + 1));
            }
            self.records.push(MessageRecord { index: self.records.len() as u64 + 1, outcome, latency });
        }
    }

    fn push_one(&mut self) {
        let index = self.records.len() as u64 + 1;
        self.w.net.set_phase(Phase::Push(index));
        let start = self.w.net.now();
        let w = &mut self.w;
        let t = match self.cfg.scenario {
            1 => scenario1_push(&mut w.server, &mut w.device, &mut w.pca, &mut w.net, self.cfg.scenario1_options()),
            _ => scenario2_push(&mut w.server, &mut w.device, &mut w.net),
        };
        self.record(t, start, 1);
    }

    fn pending_for_user(&self) -> usize {
        self.w.server.pending().iter().filter(|p| p.user == self.w.device.user).count()
    }
}

/// Executes the configured schedule. Nothing is written to disk; see
/// [`run`] for that.
pub fn execute(cfg: &RunConfig) -> Result<RunArtifacts, RunError> {
    cfg.validate()?;
    let mut w = World::build(&cfg.world_spec())?;
    let run_marker: [u8; 32] = random_bytes(&mut w.rng);
    let mut markers = vec![run_marker.to_vec()];
    markers.extend(cfg.noc_malicious_markers.iter().map(|m| m.as_bytes().to_vec()));

    let mut d = Driver {
        cfg,
        w,
        records: Vec::new(),
        sessions: Vec::new(),
        notes: Vec::new(),
        unexpected: Vec::new(),
        tampered: false,
    };

    d.w.net.set_phase(Phase::Provisioning);
    if cfg.aik_prefetch {
        let n = if cfg.scenario == 1 && cfg.fresh_aik_per_push { cfg.messages as usize } else { 1 };
        prefetch_aiks(&mut d.w.device, &mut d.w.net, n)?;
    }
    if cfg.scenario == 2 {
        let w = &mut d.w;
        match scenario2_provision(&mut w.device, &mut w.pca, &mut w.server, &mut w.net, None) {
            Ok(p) => d.sessions.push(p.transcript),
            Err(e) => d.unexpected.push(format!("provisioning: {e}")),
        }
    }
    let provisioning_latency = d.w.net.now();

    let user = d.w.device.user.clone();
    let mode = cfg.notify_mode;
    if cfg.scenario == 1 && cfg.bulk {
        for i in 0..cfg.messages {
            let p = payload_for(i + 1, &run_marker, &cfg.noc_malicious_markers);
            notify(&mut d.w.source, &mut d.w.server, &user, p, mode);
        }
        if mode == NotifyMode::Pull {
            d.w.server.poll(&mut d.w.source);
        }
        d.events(0)?;
        if cfg.messages > 0 {
            d.w.net.set_phase(Phase::Push(1));
            let start = d.w.net.now();
            let w = &mut d.w;
            let t = bulk_push(
                &mut w.server,
                &mut w.device,
                &mut w.pca,
                &mut w.net,
                cfg.messages as usize,
                1,
                cfg.scenario1_options(),
            );
            d.record(t, start, cfg.messages as usize);
            d.events(cfg.messages)?;
        }
    } else {
        for i in 0..cfg.messages {
            let p = payload_for(i + 1, &run_marker, &cfg.noc_malicious_markers);
            notify(&mut d.w.source, &mut d.w.server, &user, p, mode);
            let poll_due = (i + 1) % cfg.poll_interval == 0 || i + 1 == cfg.messages;
            if mode == NotifyMode::Pull {
                if !poll_due {
                    continue;
                }
                d.w.server.poll(&mut d.w.source);
            }
            while d.pending_for_user() > 0 {
                d.events(d.records.len() as u64)?;
                d.push_one();
            }
        }
        d.events(d.records.len() as u64)?;
    }

    d.w.net.set_phase(Phase::Audit);
    let audit = audit_access(&d.w.device, &mut d.w.net);

    let lines = d.w.net.transcript_lines();
    let dump: Vec<DumpLine> = d.w.net.observer().captured().iter().map(DumpLine::from_envelope).collect();
    let (checks, noc) = evaluate(&lines, Some(&dump), &markers, cfg.topology);

    let charges = d.w.net.charges().to_vec();
    let mut charge_totals = BTreeMap::new();
    for c in &charges {
        *charge_totals.entry(c.cost).or_insert(0.0) += c.seconds;
    }
    let mut envelope_counts = BTreeMap::new();
    for e in d.w.net.envelopes() {
        *envelope_counts.entry(e.msg_type.label()).or_insert(0u64) += 1;
    }
    let total_latency = d.w.net.now();
    let push_latency_total = d.records.iter().map(|r| r.latency).sum::<SimTime>();
    let mean_push_latency = if d.records.is_empty() { 0.0 } else { push_latency_total / d.records.len() as f64 };

    let report = RunReport {
        format: REPORT_FORMAT.to_owned(),
        config: cfg.clone(),
        messages: d.records,
        charges,
        charge_totals,
        total_latency,
        provisioning_latency,
        push_latency_total,
        mean_push_latency,
        transmission_total: d.w.net.transmission_total(),
        envelope_counts,
        checks,
        noc,
        markers: markers.iter().map(hex::encode).collect(),
        audit,
        notes: d.notes,
        unexpected_errors: d.unexpected,
        keystore_files: Vec::new(),
    };
    Ok(RunArtifacts { report, world: d.w, sessions: d.sessions })
}

/// Executes the run and writes the transcript, NOC dump, key store and
/// report to the configured paths.
pub fn run(cfg: &RunConfig) -> Result<RunReport, RunError> {
    let RunArtifacts { mut report, mut world, .. } = execute(cfg)?;
    if let Some(p) = &cfg.transcript_path {
        write_transcript(p, &world.net.transcript_lines())?;
    }
    if let Some(p) = &cfg.noc_dump_path {
        write_noc_dump(p, world.net.observer().captured())?;
    }
    if let Some(dir) = &cfg.keystore_path {
        let tpm = world.device.tpm.save(dir, &cfg.store_passphrase, &mut world.rng)?;
        let pca = world.pca.ca.save(dir, &cfg.store_passphrase, &mut world.rng)?;
        report.keystore_files = vec![tpm, pca];
    }
    if let Some(p) = &cfg.report_path {
        write_json(p, &report)?;
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub checks: CheckSet,
    /// Checks that could not be recomputed (no NOC dump).
    pub skipped: Vec<CheckName>,
}

impl CheckOutcome {
    pub fn all_pass(&self) -> bool {
        self.checks.values().all(|c| c.passed)
    }
}

/// Recomputes the checks from the transcript (and the NOC dump named in
/// the report, or `dump_override`) and compares them with the report.
pub fn check(transcript: &Path, report: &Path, dump_override: Option<&Path>) -> Result<CheckOutcome, RunError> {
    let lines = read_transcript(transcript)?;
    let stored: RunReport = read_json(report).map_err(|e| match e {
        StoreError::Io { path, source } => RunError::Io { path, source },
        other => RunError::Parse { path: report.to_owned(), reason: other.to_string() },
    })?;
    let dump_path = dump_override.map(Path::to_owned).or_else(|| stored.config.noc_dump_path.clone());
    let dump = match dump_path {
        Some(p) if p.exists() => Some(read_noc_dump(&p)?),
        _ => None,
    };
    let (checks, _) = evaluate(&lines, dump.as_deref(), &stored.marker_bytes(), stored.config.topology);
    let skipped: Vec<CheckName> = CheckName::ALL.into_iter().filter(|c| !checks.contains_key(c)).collect();
    let mismatches: Vec<CheckName> = checks
        .iter()
        .filter(|(name, r)| stored.checks.get(name).map(|s| s.passed) != Some(r.passed))
        .map(|(name, _)| *name)
        .collect();
    let outcome = CheckOutcome { checks, skipped };
    if mismatches.is_empty() {
        Ok(outcome)
    } else {
        Err(RunError::VerdictMismatch { mismatches, recomputed: Box::new(outcome) })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn get(&self, metric: &str) -> Option<(f64, f64)> {
        self.rows.iter().find(|r| r.metric == metric).map(|r| (r.a, r.b))
    }

    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.metric.len()).max().unwrap_or(6).max(6);
        let mut out = format!("{:<width$}  {:>12}  {:>12}\n", "metric", "A", "B");
        for r in &self.rows {
            let _ = writeln!(out, "{:<width$}  {:>12}  {:>12}", r.metric, fmt_num(r.a), fmt_num(r.b));
        }
        out
    }
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn metrics(r: &RunReport) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    m.insert("latency.total".to_owned(), r.total_latency);
    m.insert("latency.provisioning".to_owned(), r.provisioning_latency);
    m.insert("latency.push_total".to_owned(), r.push_latency_total);
    m.insert("latency.per_push_mean".to_owned(), r.mean_push_latency);
    m.insert("latency.per_push_last".to_owned(), r.messages.last().map_or(0.0, |x| x.latency));
    m.insert("messages.delivered".to_owned(), r.messages.iter().filter(|x| x.outcome.is_delivered()).count() as f64);
    m.insert(
        "charges.push_trust_entries".to_owned(),
        r.push_charges().filter(|c| c.cost.is_trust_establishment()).count() as f64,
    );
    for c in CostName::ALL {
        m.insert(format!("charges.{c}.count"), r.charges.iter().filter(|x| x.cost == c).count() as f64);
        m.insert(format!("charges.{c}.seconds"), r.charge_totals.get(&c).copied().unwrap_or(0.0));
    }
    for (label, n) in &r.envelope_counts {
        m.insert(format!("envelopes.{label}"), *n as f64);
    }
    m
}

pub fn compare_reports(a: &RunReport, b: &RunReport) -> Comparison {
    let (ma, mb) = (metrics(a), metrics(b));
    let keys: BTreeSet<&String> = ma.keys().chain(mb.keys()).collect();
    let rows = keys
        .into_iter()
        .map(|k| ComparisonRow {
            metric: k.clone(),
            a: ma.get(k).copied().unwrap_or(0.0),
            b: mb.get(k).copied().unwrap_or(0.0),
        })
        .collect();
    Comparison { rows }
}

/// Runs both configurations in memory (no files written) and tabulates
/// latency, charges and envelope counts side by side.
pub fn compare(a: &RunConfig, b: &RunConfig) -> Result<(Comparison, RunReport, RunReport), RunError> {
    let ra = execute(a)?.report;
    let rb = execute(b)?.report;
    Ok((compare_reports(&ra, &rb), ra, rb))
}

impl RunReport {
    /// One line per check, e.g. `attestation_gating: PASS (evidence: 12)`.
    pub fn check_lines(&self) -> Vec<String> {
        format_checks(&self.checks)
    }
}

pub fn format_checks(checks: &CheckSet) -> Vec<String> {
    checks
        .iter()
        .map(|(name, r): (&CheckName, &CheckResult)| {
            let verdict = if r.passed { "PASS" } else { "FAIL" };
            let ev: Vec<String> = r.evidence.iter().take(8).map(u64::to_string).collect();
            let more = if r.evidence.len() > 8 { format!(" +{}", r.evidence.len() - 8) } else { String::new() };
            format!("{}: {verdict} - {} (evidence: [{}]{more})", name.as_str(), r.detail, ev.join(", "))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(f: impl FnOnce(&mut RunConfig)) -> RunConfig {
        let mut c = RunConfig::default();
        f(&mut c);
        c
    }

    #[test]
    fn config_validation() {
        assert!(cfg(|c| c.scenario = 3).validate().is_err());
        assert!(cfg(|c| c.tamper_after = Some(2)).validate().is_err());
        assert!(cfg(|c| {
            c.messages = 4;
            c.bulk = true;
            c.tamper_after = Some(2);
        })
        .validate()
        .is_err());
        assert!(cfg(|c| {
            c.messages = 4;
            c.bulk = true;
            c.tamper_after = Some(4);
        })
        .validate()
        .is_ok());
        assert!(cfg(|c| c.seal_selection = vec![24]).validate().is_err());
        assert!(cfg(|c| c.cost_overrides.seal_op = Some(-1.0)).validate().is_err());
        assert!(RunConfig::from_json(r#"{"scenario": 2, "bogus": true}"#).is_err());
        let c = RunConfig::from_json(r#"{"scenario": 2, "messages": 5}"#).unwrap();
        assert_eq!((c.scenario, c.messages, c.independent_encryption), (2, 5, true));
    }

    #[test]
    fn fresh_aik_single_push_is_thirty_seconds() {
        let r = execute(&cfg(|c| c.fresh_aik_per_push = true)).unwrap().report;
        assert_eq!(r.total_latency, 30.0);
        assert_eq!(r.messages[0].latency, 30.0);
        assert!(r.success(), "{:?}", r.checks);
    }

    #[test]
    fn prefetch_moves_aik_generation_out_of_the_push() {
        let r = execute(&cfg(|c| {
            c.fresh_aik_per_push = true;
            c.aik_prefetch = true;
            c.messages = 2;
        }))
        .unwrap()
        .report;
        assert_eq!(r.provisioning_latency, 14.0);
        assert_eq!(r.messages[0].latency, 23.0);
        assert_eq!(r.push_charges().filter(|c| c.cost == CostName::AikGeneration).count(), 0);
    }

    #[test]
    fn scenario2_tamper_locks_later_messages() {
        let r = execute(&cfg(|c| {
            c.scenario = 2;
            c.messages = 4;
            c.tamper_after = Some(2);
        }))
        .unwrap()
        .report;
        let outcomes: Vec<_> = r.messages.iter().map(|m| m.outcome.label()).collect();
        assert_eq!(outcomes, ["delivered", "delivered", "delivered_locked", "delivered_locked"]);
        assert!(r.success(), "{:?}", r.checks);
        assert!(r.audit.iter().all(|a| !a.granted));
    }

    #[test]
    fn scenario1_tamper_refuses_later_messages() {
        let r = execute(&cfg(|c| {
            c.messages = 3;
            c.tamper_after = Some(1);
        }))
        .unwrap()
        .report;
        let outcomes: Vec<_> = r.messages.iter().map(|m| m.outcome.label()).collect();
        assert_eq!(outcomes, ["delivered", "refused", "refused"]);
        assert!(r.success(), "{:?}", r.checks);
        assert_eq!(r.audit.len(), 1);
        assert!(!r.audit[0].granted);
    }

    #[test]
    fn pull_mode_with_interval_matches_push_outcomes() {
        let push = execute(&cfg(|c| c.messages = 3)).unwrap().report;
        let pull = execute(&cfg(|c| {
            c.messages = 3;
            c.notify_mode = NotifyMode::Pull;
            c.poll_interval = 2;
        }))
        .unwrap()
        .report;
        assert_eq!(
            push.messages.iter().map(|m| &m.outcome).collect::<Vec<_>>(),
            pull.messages.iter().map(|m| &m.outcome).collect::<Vec<_>>()
        );
    }

    #[test]
    fn noc_down_in_decentralised_is_noted() {
        let r = execute(&cfg(|c| {
            c.topology = Topology::Decentralised;
            c.noc_down_after = Some(0);
        }))
        .unwrap()
        .report;
        assert_eq!(r.messages[0].outcome, Outcome::Delivered);
        assert_eq!(r.notes.len(), 1);
    }

    #[test]
    fn comparison_table_renders_every_metric() {
        let a = cfg(|c| c.messages = 2);
        let b = cfg(|c| {
            c.scenario = 2;
            c.messages = 2;
        });
        let (table, _, _) = compare(&a, &b).unwrap();
        let (s1, s2) = table.get("latency.per_push_last").unwrap();
        assert_eq!((s1, s2), (16.0, 2.0));
        let text = table.render();
        assert!(text.contains("charges.remote_attestation.count"));
        assert_eq!(text.lines().count(), table.rows.len() + 1);
    }
}
