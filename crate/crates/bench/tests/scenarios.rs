// SPDX-License-Identifier: Apache-2.0

use std::time::Duration;

use dbnet_bench::{BenchError, BenchReport, Harness, ScenarioConfig, Transport, EXAMPLE1_CHAIN, SETUP_COUNTS};

fn fast() -> ScenarioConfig {
    ScenarioConfig {
        provisioning_delay: Duration::ZERO,
        ..ScenarioConfig::default()
    }
}

fn seeded(transport: Transport) -> Harness {
    let h = Harness::new(fast(), transport).unwrap();
    assert_eq!(h.setup_example1().unwrap().counts, SETUP_COUNTS);
    h.seed_nodes().unwrap();
    h
}

#[test]
fn examples_are_deterministic() {
    let run = || {
        let h = seeded(Transport::InProcess);
        let a = h.run_example1().unwrap();
        let b = h.run_example2().unwrap();
        (h.state_digest(), a.log_kinds, b.log_kinds, a.new_node, b.new_node)
    };
    let first = run();
    assert_eq!(first, run());
    assert_eq!((first.3, first.4), (4, 5));
}

#[test]
fn example1_chain_over_both_transports() {
    for t in [Transport::InProcess, Transport::Http] {
        let r = seeded(t).run_example1().unwrap();
        assert_eq!(r.chain, EXAMPLE1_CHAIN, "{t:?}");
    }
}

#[test]
fn example2_chain_starts_from_telemetry() {
    let r = seeded(Transport::InProcess).run_example2().unwrap();
    assert_eq!(r.chain.first().map(String::as_str), Some("Insert"));
    assert!(r.log_kinds.iter().any(|k| k == "Delete"), "{:?}", r.log_kinds);
}

#[test]
fn setup_twice_is_rejected() {
    let h = Harness::new(fast(), Transport::InProcess).unwrap();
    h.setup_example1().unwrap();
    match h.setup_example1() {
        Err(BenchError::Api { status, .. }) => assert_eq!(status, 409),
        other => panic!("second setup: {other:?}"),
    }
}

#[test]
fn load_edge_sizes() {
    let mut h = seeded(Transport::InProcess);
    let r = h.load_test(1, 1).unwrap();
    assert_eq!((r.requests, r.spans_stored), (1, 1));
    let r = h.load_test(0, 50).unwrap();
    assert_eq!((r.requests, r.spans_stored), (0, 0));
}

#[test]
fn load_partial_batches() {
    let mut h = Harness::new(
        ScenarioConfig {
            batch_size: 7,
            ..fast()
        },
        Transport::InProcess,
    )
    .unwrap();
    h.setup_example1().unwrap();
    h.seed_nodes().unwrap();
    let r = h.load_test(3, 20).unwrap();
    assert_eq!((r.requests, r.spans_stored), (9, 60));
}

#[test]
fn load_spans_are_reproducible() {
    let h = Harness::new(fast(), Transport::InProcess).unwrap();
    let a = h.load_spans(2, 30);
    assert_eq!(a, h.load_spans(2, 30));
    assert_ne!(a, h.load_spans(3, 30));
}

#[test]
fn config_validation() {
    assert!(ScenarioConfig::default().validate().is_ok());
    let bad = ScenarioConfig {
        batch_size: 0,
        ..ScenarioConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = ScenarioConfig {
        min_spans: 0,
        ..ScenarioConfig::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn report_files() {
    let h = seeded(Transport::InProcess);
    let mut report = BenchReport::new(Duration::from_millis(100));
    report.ex1 = Some(h.run_example1().unwrap());
    let csv = report.csv().unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "phase,duration_us");
    assert_eq!(
        lines[1..]
            .iter()
            .map(|l| l.split(',').next().unwrap())
            .collect::<Vec<_>>(),
        ["ex1_e2e", "ex1_kernel", "ex1_device"]
    );
    // Zero simulated delay cannot match a 100 ms split.
    assert!(!report.all_ok());
    assert!(report.summary().contains("VIOLATION"));

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r/bench.csv");
    let summary = report.write(&out).unwrap();
    assert_eq!(std::fs::read_to_string(&out).unwrap(), csv);
    assert!(std::fs::read_to_string(summary)
        .unwrap()
        .starts_with("dbnet bench report"));
}
