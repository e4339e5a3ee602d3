use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use pushsim::crypto::Suite;
use pushsim::netsim::Topology;
use pushsim::protocol::NotifyMode;
use pushsim::runner::{self, format_checks, RunConfig, RunError, RunReport};

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_ERROR: u8 = 2;
const EXIT_MISMATCH: u8 = 3;

#[derive(Parser)]
#[command(name = "pushsim", version, about = "Simulate TPM-secured push delivery to mobile devices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Provision, push, audit; write transcript and report.
    Run(RunArgs),
    /// Recompute the security checks from a transcript and compare with its report.
    Check {
        #[arg(long, value_name = "PATH")]
        transcript: PathBuf,
        #[arg(long, value_name = "PATH")]
        report: PathBuf,
        /// NOC dump to scan; defaults to the one named in the report.
        #[arg(long = "dump-noc", value_name = "PATH")]
        dump_noc: Option<PathBuf>,
    },
    /// Run two configurations and print their metrics side by side.
    Compare {
        config_a: PathBuf,
        config_b: PathBuf,
        /// Print the table as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    scenario: Option<u8>,
    #[arg(long, value_parser = parse_topology)]
    topology: Option<Topology>,
    #[arg(long)]
    messages: Option<u64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    bulk: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    independent_encryption: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    fresh_aik_per_push: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    aik_prefetch: Option<bool>,
    #[arg(long)]
    tamper_after: Option<u64>,
    #[arg(long)]
    noc_down_after: Option<u64>,
    /// Extra plaintext marker embedded in every payload (repeatable).
    #[arg(long = "marker", value_name = "TEXT")]
    markers: Vec<String>,
    #[arg(long, value_parser = parse_notify_mode)]
    notify_mode: Option<NotifyMode>,
    #[arg(long, value_parser = parse_suite)]
    key_suite: Option<Suite>,
    #[arg(long)]
    seed: Option<u64>,
    /// Transcript path (JSON Lines).
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    /// Also write every envelope the NOC relayed, payload included.
    #[arg(long = "dump-noc", value_name = "PATH")]
    dump_noc: Option<PathBuf>,
    /// Directory for the TPM and PCA key-store documents.
    #[arg(long, value_name = "DIR", env = "PUSHSIM_KEYSTORE")]
    keystore: Option<PathBuf>,
}

fn parse_topology(s: &str) -> Result<Topology, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned()))
        .map_err(|_| format!("expected `centralised` or `decentralised`, got `{s}`"))
}

fn parse_notify_mode(s: &str) -> Result<NotifyMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned()))
        .map_err(|_| format!("expected `push` or `pull`, got `{s}`"))
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned()))
        .map_err(|_| format!("expected `ed25519-x25519` or `rsa-1024`, got `{s}`"))
}

impl RunArgs {
    fn into_config(self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident <- $arg:expr),* $(,)?) => {
                $(if let Some(v) = $arg { c.$field = v; })*
            };
        }
        set!(
            scenario <- self.scenario,
            topology <- self.topology,
            messages <- self.messages,
            bulk <- self.bulk,
            independent_encryption <- self.independent_encryption,
            fresh_aik_per_push <- self.fresh_aik_per_push,
            aik_prefetch <- self.aik_prefetch,
            notify_mode <- self.notify_mode,
            key_suite <- self.key_suite,
            seed <- self.seed,
        );
        if self.tamper_after.is_some() {
            c.tamper_after = self.tamper_after;
        }
        if self.noc_down_after.is_some() {
            c.noc_down_after = self.noc_down_after;
        }
        if !self.markers.is_empty() {
            c.noc_malicious_markers = self.markers;
        }
        if self.output.is_some() {
            c.transcript_path = self.output;
        }
        if self.report.is_some() {
            c.report_path = self.report;
        }
        if self.dump_noc.is_some() {
            c.noc_dump_path = self.dump_noc;
        }
        if self.keystore.is_some() {
            c.keystore_path = self.keystore;
        }
        c.transcript_path.get_or_insert_with(|| PathBuf::from("pushsim-transcript.jsonl"));
        c.report_path.get_or_insert_with(|| PathBuf::from("pushsim-report.json"));
        Ok(c)
    }
}

fn print_report(r: &RunReport) {
    let c = &r.config;
    println!(
        "scenario {} / {} / {} message(s), seed {}",
        c.scenario,
        serde_json::to_value(c.topology).unwrap().as_str().unwrap_or("?"),
        c.messages,
        c.seed
    );
    for m in &r.messages {
        println!("  message {:>3}: {:<16} {:>8.3} s", m.index, m.outcome.label(), m.latency);
    }
    println!("provisioning latency: {:.3} s", r.provisioning_latency);
    println!("mean per-push latency: {:.3} s", r.mean_push_latency);
    println!("total simulated latency: {:.3} s", r.total_latency);
    for n in &r.notes {
        println!("note: {n}");
    }
    for e in &r.unexpected_errors {
        println!("error: {e}");
    }
    for line in r.check_lines() {
        println!("{line}");
    }
    if let Some(p) = &c.transcript_path {
        println!("transcript: {}", p.display());
    }
    if let Some(p) = &c.report_path {
        println!("report: {}", p.display());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<u8> {
    match cmd {
        Command::Run(args) => {
            let cfg = args.into_config()?;
            let report = runner::run(&cfg)?;
            print_report(&report);
            Ok(if report.success() { 0 } else { EXIT_CHECK_FAILED })
        }
        Command::Check { transcript, report, dump_noc } => {
            match runner::check(&transcript, &report, dump_noc.as_deref()) {
                Ok(outcome) => {
                    for line in format_checks(&outcome.checks) {
                        println!("{line}");
                    }
                    for s in &outcome.skipped {
                        println!("{}: SKIPPED - no NOC dump available", s.as_str());
                    }
                    Ok(if outcome.all_pass() { 0 } else { EXIT_CHECK_FAILED })
                }
                Err(RunError::VerdictMismatch { mismatches, recomputed }) => {
                    for line in format_checks(&recomputed.checks) {
                        println!("{line}");
                    }
                    let names: Vec<_> = mismatches.iter().map(|m| m.as_str()).collect();
                    eprintln!("error: verdict mismatch between report and transcript: {}", names.join(", "));
                    Ok(EXIT_MISMATCH)
                }
                Err(e) => Err(e.into()),
            }
        }
        Command::Compare { config_a, config_b, json } => {
            let a = RunConfig::load(&config_a).with_context(|| format!("loading {}", config_a.display()))?;
            let b = RunConfig::load(&config_b).with_context(|| format!("loading {}", config_b.display()))?;
            let (table, _, _) = runner::compare(&a, &b)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&table)?);
            } else {
                println!("A: {}\nB: {}", config_a.display(), config_b.display());
                print!("{}", table.render());
            }
            Ok(0)
        }
    }
}
