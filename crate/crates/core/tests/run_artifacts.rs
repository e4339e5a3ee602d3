use std::fs;
use std::path::Path;

use proptest::prelude::*;
use pushsim::checks::CheckName;
use pushsim::netsim::{read_noc_dump, CostOverrides, DumpLine, Topology};
use pushsim::runner::{check, compare, execute, run, RunConfig, RunError};

fn with_paths(mut c: RunConfig, dir: &Path) -> RunConfig {
    c.transcript_path = Some(dir.join("t.jsonl"));
    c.report_path = Some(dir.join("r.json"));
    c.noc_dump_path = Some(dir.join("noc.jsonl"));
    c
}

fn arb_config() -> impl Strategy<Value = RunConfig> {
    (1u8..=2, any::<bool>(), 0u64..5, any::<bool>(), any::<bool>(), any::<u64>(), 0u32..4).prop_map(
        |(scenario, central, messages, fresh, ind, seed, kib)| RunConfig {
            scenario,
            topology: if central { Topology::Centralised } else { Topology::Decentralised },
            messages,
            fresh_aik_per_push: fresh,
            independent_encryption: ind,
            seed,
            cost_overrides: CostOverrides { per_kilobyte: Some(kib as f64 * 0.25), ..Default::default() },
            ..RunConfig::default()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn captured_is_exactly_the_relayed_subset(cfg in arb_config()) {
        let a = execute(&cfg).unwrap();
        let relayed: Vec<_> = a.world.net.envelopes().iter().filter(|e| e.via.is_some()).cloned().collect();
        prop_assert_eq!(a.world.net.observer().captured(), relayed.as_slice());
        if cfg.topology == Topology::Centralised && !relayed.is_empty() {
            prop_assert!(!a.world.net.observer().linkage().is_empty());
        }
    }

    /// Sums the report's charge ledger without using library types.
    #[test]
    fn final_clock_is_sum_of_charges_and_transmission(cfg in arb_config()) {
        let report = execute(&cfg).unwrap().report;
        let v = serde_json::to_value(&report).unwrap();
        let charged: f64 = v["charges"].as_array().unwrap().iter().map(|c| c["seconds"].as_f64().unwrap()).sum();
        let tx = v["transmission_total"].as_f64().unwrap();
        prop_assert!((v["total_latency"].as_f64().unwrap() - (charged + tx)).abs() < 1e-9);
    }
}

#[test]
fn identical_seed_gives_identical_files() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    for scenario in [1, 2] {
        let base = RunConfig { scenario, messages: 3, seed: 77, ..RunConfig::default() };
        run(&with_paths(base.clone(), d1.path())).unwrap();
        run(&with_paths(base, d2.path())).unwrap();
        for f in ["t.jsonl", "noc.jsonl"] {
            assert_eq!(fs::read(d1.path().join(f)).unwrap(), fs::read(d2.path().join(f)).unwrap());
        }
    }
    let other = RunConfig { messages: 3, seed: 78, ..RunConfig::default() };
    run(&with_paths(other, d2.path())).unwrap();
    assert_ne!(fs::read(d1.path().join("t.jsonl")).unwrap(), fs::read(d2.path().join("t.jsonl")).unwrap());
}

#[test]
fn honest_artifacts_recheck_clean() {
    let dir = tempfile::tempdir().unwrap();
    for scenario in [1, 2] {
        let cfg =
            with_paths(RunConfig { scenario, messages: 2, tamper_after: Some(1), ..RunConfig::default() }, dir.path());
        let report = run(&cfg).unwrap();
        assert!(report.success());
        let outcome = check(&dir.path().join("t.jsonl"), &dir.path().join("r.json"), None).unwrap();
        assert!(outcome.all_pass());
        assert!(outcome.skipped.is_empty());
        assert_eq!(outcome.checks, report.checks);
    }
}

#[test]
fn planted_marker_fails_confidentiality() {
    let dir = tempfile::tempdir().unwrap();
    let report = run(&with_paths(RunConfig { messages: 2, ..RunConfig::default() }, dir.path())).unwrap();
    let dump_path = dir.path().join("noc.jsonl");
    let mut dump = read_noc_dump(&dump_path).unwrap();
    let marker = hex::decode(&report.markers[0]).unwrap();
    let target = dump.iter_mut().find(|l| l.msg_type.label() == "s1.step5.payload").unwrap();
    target.payload.extend_from_slice(&marker);
    let planted_seq = target.seq;
    let text: String = dump.iter().map(|l: &DumpLine| serde_json::to_string(l).unwrap() + "\n").collect();
    fs::write(&dump_path, text).unwrap();

    match check(&dir.path().join("t.jsonl"), &dir.path().join("r.json"), None) {
        Err(RunError::VerdictMismatch { mismatches, recomputed }) => {
            assert_eq!(mismatches, vec![CheckName::E2eConfidentiality]);
            let e2e = &recomputed.checks[&CheckName::E2eConfidentiality];
            assert!(!e2e.passed);
            assert_eq!(e2e.evidence, vec![planted_seq]);
        }
        other => panic!("expected a mismatch, got {other:?}"),
    }
}

#[test]
fn edited_verdict_is_a_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    run(&with_paths(RunConfig::default(), dir.path())).unwrap();
    let rp = dir.path().join("r.json");
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&rp).unwrap()).unwrap();
    v["checks"]["attestation_gating"]["passed"] = serde_json::Value::Bool(false);
    fs::write(&rp, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    match check(&dir.path().join("t.jsonl"), &rp, None) {
        Err(RunError::VerdictMismatch { mismatches, .. }) => assert_eq!(mismatches, vec![CheckName::AttestationGating]),
        other => panic!("expected a mismatch, got {other:?}"),
    }
}

#[test]
fn missing_dump_skips_only_the_marker_scan() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = with_paths(RunConfig::default(), dir.path());
    cfg.noc_dump_path = None;
    run(&cfg).unwrap();
    let outcome = check(&dir.path().join("t.jsonl"), &dir.path().join("r.json"), None).unwrap();
    assert_eq!(outcome.skipped, vec![CheckName::E2eConfidentiality]);
    assert_eq!(outcome.checks.len(), 3);
}

#[test]
fn unparseable_inputs_are_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    run(&with_paths(RunConfig::default(), dir.path())).unwrap();
    fs::write(dir.path().join("bad.jsonl"), "not json\n").unwrap();
    assert!(matches!(
        check(&dir.path().join("bad.jsonl"), &dir.path().join("r.json"), None),
        Err(RunError::Parse { .. })
    ));
    assert!(matches!(
        check(&dir.path().join("missing.jsonl"), &dir.path().join("r.json"), None),
        Err(RunError::Io { .. })
    ));
}

#[test]
fn keystore_documents_reload() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig { scenario: 2, messages: 1, ..RunConfig::default() };
    cfg.keystore_path = Some(dir.path().join("ks"));
    let report = run(&cfg).unwrap();
    assert_eq!(report.keystore_files.len(), 2);
    let tpm = pushsim::tpm::TpmState::load(&report.keystore_files[0], "pushsim").unwrap();
    assert_eq!(tpm.log().len(), 5);
    assert!(pushsim::tpm::TpmState::load(&report.keystore_files[0], "wrong").is_err());
    let pca = pushsim::pca::PrivacyCa::load(&report.keystore_files[1], "pushsim").unwrap();
    assert_eq!(pca.ledger().len(), 2);
}

#[test]
fn identical_configs_compare_identically() {
    let c = RunConfig { messages: 3, ..RunConfig::default() };
    let (t, _, _) = compare(&c, &c).unwrap();
    assert!(t.rows.iter().all(|r| r.a == r.b));
    let (t2, _, _) = compare(&c, &c).unwrap();
    assert_eq!(t, t2);
}
