//! End-to-end runs of the binary: artifact contents, exit codes, and
//! byte-level determinism.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

fn radapt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_radapt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Terminal value per agent from a trajectory CSV.
fn terminal_values(csv: &str) -> Vec<(usize, f64)> {
    let mut last: std::collections::BTreeMap<usize, (usize, f64)> = Default::default();
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let t: usize = fields[0].parse().unwrap();
        let agent: usize = fields[1].parse().unwrap();
        let value: f64 = fields[3].parse().unwrap();
        let entry = last.entry(agent).or_insert((t, value));
        if t >= entry.0 {
            *entry = (t, value);
        }
    }
    last.into_iter().map(|(a, (_, v))| (a, v)).collect()
}

#[test]
fn simulate_base_ergodic_chain_merges_to_one_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let res = radapt(&[
        "simulate",
        "--dynamics",
        "base",
        "--chain",
        "irreducible:n=10",
        "--x0",
        "1..10",
        "--horizon",
        "1000",
        "--seed",
        "7",
        "--out",
        out,
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let csv = read(&dir.path().join("trajectory.csv"));
    assert!(csv.starts_with("t,agent,origin,value\n"));
    let finals: BTreeSet<String> = terminal_values(&csv)
        .iter()
        .map(|(_, v)| v.to_string())
        .collect();
    assert_eq!(finals.len(), 1, "all agents should share a terminal value");

    let summary: serde_json::Value =
        serde_json::from_str(&read(&dir.path().join("summary.json"))).unwrap();
    assert!(summary["agreement_time"].is_u64());

    let svg = read(&dir.path().join("trajectory.svg"));
    assert!(svg.starts_with("<svg xmlns="));
    assert!(svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<polyline").count(), 10);
    assert!(svg.contains("state value"));

    assert!(dir.path().join("config.json").exists());
}

#[test]
fn simulate_block_chain_forms_two_terminal_levels() {
    let dir = tempfile::tempdir().unwrap();
    let res = radapt(&[
        "simulate",
        "--dynamics",
        "base",
        "--chain",
        "block:n=10",
        "--x0",
        "1..10",
        "--horizon",
        "1000",
        "--seed",
        "11",
        "--out",
        dir.path().to_str().unwrap(),
        "--no-svg",
    ]);
    assert!(res.status.success());
    let csv = read(&dir.path().join("trajectory.csv"));
    let values = terminal_values(&csv);
    let first: BTreeSet<String> = values[..5].iter().map(|(_, v)| v.to_string()).collect();
    let second: BTreeSet<String> = values[5..].iter().map(|(_, v)| v.to_string()).collect();
    assert_eq!(first.len(), 1);
    assert_eq!(second.len(), 1);
    assert_ne!(first, second);
}

#[test]
fn simulate_fj_ends_inside_the_prejudice_set() {
    let dir = tempfile::tempdir().unwrap();
    let res = radapt(&[
        "simulate",
        "--dynamics",
        "fj",
        "--chain",
        "irreducible:n=10",
        "--x0",
        "1..10",
        "--u",
        "21..30",
        "--gamma",
        "0.6",
        "--horizon",
        "1000",
        "--seed",
        "3",
        "--out",
        dir.path().to_str().unwrap(),
        "--no-svg",
    ]);
    assert!(res.status.success());
    let csv = read(&dir.path().join("trajectory.csv"));
    for (_, v) in terminal_values(&csv) {
        assert!((21.0..=30.0).contains(&v), "terminal value {v} outside prejudice set");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&read(&dir.path().join("summary.json"))).unwrap();
    assert!(summary["absorption_time"].is_u64());
    let origins = summary["terminal_origins"].as_array().unwrap();
    assert!(origins.iter().all(|o| o.as_u64().unwrap() >= 10));
}

#[test]
fn simulate_rank_one_runs() {
    let dir = tempfile::tempdir().unwrap();
    let res = radapt(&[
        "simulate",
        "--dynamics",
        "rank-one",
        "--chain",
        "irreducible:n=4",
        "--x0",
        "1..4",
        "--u",
        "21..24",
        "--gamma",
        "0.5",
        "--q-mutation",
        "0.1,0.2,0.3,0.4",
        "--horizon",
        "500",
        "--seed",
        "5",
        "--out",
        dir.path().to_str().unwrap(),
        "--no-svg",
    ]);
    assert!(res.status.success());
    for (_, v) in terminal_values(&read(&dir.path().join("trajectory.csv"))) {
        assert!((21.0..=24.0).contains(&v));
    }
}

#[test]
fn mean_compare_writes_overlay_and_rejects_tiny_ensembles() {
    let dir = tempfile::tempdir().unwrap();
    let res = radapt(&[
        "mean-compare",
        "--chain",
        "irreducible:n=4",
        "--x0",
        "1..4",
        "--t-max",
        "50",
        "--trials",
        "500",
        "--seed",
        "9",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(res.status.success());
    let csv = read(&dir.path().join("mean_compare.csv"));
    assert!(csv.starts_with("t,agent,empirical_mean,oracle\n"));
    assert_eq!(csv.lines().count(), 1 + 51 * 4);
    // identity chain: empirical mean equals x0 at all times exactly
    let ident_dir = tempfile::tempdir().unwrap();
    let res = radapt(&[
        "mean-compare",
        "--chain",
        "identity:n=3",
        "--x0",
        "1..3",
        "--t-max",
        "20",
        "--trials",
        "200",
        "--out",
        ident_dir.path().to_str().unwrap(),
        "--no-svg",
    ]);
    assert!(res.status.success());
    for line in read(&ident_dir.path().join("mean_compare.csv")).lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[2], fields[3], "identity chain must match exactly");
    }

    let res = radapt(&[
        "mean-compare",
        "--chain",
        "irreducible:n=4",
        "--trials",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn verify_commands_report_verdicts_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();

    let res = radapt(&[
        "verify",
        "correlation-lemma",
        "--n",
        "3",
        "--delta",
        "3",
        "--cases",
        "100",
        "--seed",
        "7",
        "--out",
        out,
    ]);
    assert!(res.status.success());
    let verdict: serde_json::Value = serde_json::from_str(&read(&dir.path().join("verdict.json"))).unwrap();
    assert_eq!(verdict["pass"], true);
    assert_eq!(verdict["check"], "correlation-lemma");

    let res = radapt(&["verify", "ergodicity", "--chain", "identity", "--out", out]);
    assert!(res.status.success(), "expected-negative check should pass");
    let verdict: serde_json::Value = serde_json::from_str(&read(&dir.path().join("verdict.json"))).unwrap();
    assert_eq!(verdict["details"]["verdict"], "not-rank-one");

    let res = radapt(&[
        "verify",
        "fj-limit",
        "--n",
        "2",
        "--gamma",
        "0.5",
        "--q-uniform",
        "--trials",
        "20000",
        "--t-probe",
        "200",
        "--seed",
        "7",
        "--out",
        out,
    ]);
    assert!(res.status.success());
    let verdict: serde_json::Value = serde_json::from_str(&read(&dir.path().join("verdict.json"))).unwrap();
    let v = verdict["details"]["limit_matrix"].as_array().unwrap();
    let v00 = v[0].as_array().unwrap()[0].as_f64().unwrap();
    assert!((v00 - 0.75).abs() < 1e-9);

    let res = radapt(&[
        "verify",
        "agreement-dist",
        "--chain",
        "static:p=0.9,q=0.8",
        "--trials",
        "20000",
        "--seed",
        "3",
        "--csv",
        "--out",
        out,
    ]);
    assert!(res.status.success());
    let csv = read(&dir.path().join("agreement_dist.csv"));
    assert!(csv.starts_with("i,j,estimate,std_err,oracle\n"));
    assert_eq!(csv.lines().count(), 3);

    // missing --chain is a configuration error
    let res = radapt(&["verify", "agreement-dist", "--out", out]);
    assert_eq!(res.status.code(), Some(2));

    // unknown check name is a clap usage error
    let res = radapt(&["verify", "bogus-check", "--out", out]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn verify_time_reversed_handles_both_chain_classes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let res = radapt(&[
        "verify",
        "time-reversed",
        "--chain",
        "irreducible:n=5",
        "--trials",
        "20000",
        "--t-probe",
        "40",
        "--t-inf",
        "300",
        "--seed",
        "13",
        "--out",
        out,
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let verdict: serde_json::Value = serde_json::from_str(&read(&dir.path().join("verdict.json"))).unwrap();
    assert!(verdict["details"]["mode"].as_str().unwrap().starts_with("ergodic"));

    let res = radapt(&[
        "verify",
        "time-reversed",
        "--chain",
        "block:n=10",
        "--trials",
        "10000",
        "--t-probe",
        "40",
        "--t-inf",
        "300",
        "--seed",
        "13",
        "--out",
        out,
    ]);
    assert!(res.status.success());
    let verdict: serde_json::Value = serde_json::from_str(&read(&dir.path().join("verdict.json"))).unwrap();
    assert!(verdict["details"]["mode"].as_str().unwrap().starts_with("non-ergodic"));
}

#[test]
fn aps_emits_sequence_and_fails_on_non_ergodic_chains() {
    let dir = tempfile::tempdir().unwrap();
    let res = radapt(&[
        "aps",
        "--chain",
        "static:p=0.9,q=0.8",
        "--horizon",
        "1000",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(res.status.success());
    let csv = read(&dir.path().join("aps.csv"));
    assert!(csv.starts_with("t,component,psi\n"));
    let first: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let psi0: f64 = first[2].parse().unwrap();
    assert!((psi0 - 2.0 / 3.0).abs() < 1e-6);

    let res = radapt(&[
        "aps",
        "--chain",
        "identity:n=3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(1), "non-ergodic chain is a runtime failure");
}

#[test]
fn chain_gen_round_trips_through_file_descriptor() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let res = radapt(&[
        "chain-gen",
        "--chain",
        "irreducible:n=4",
        "--horizon",
        "30",
        "--seed",
        "21",
        "--out",
        out,
    ]);
    assert!(res.status.success());
    let recipe = read(&dir.path().join("chain.json"));
    assert!(recipe.contains("random-irreducible"));

    // materialized form can be fed back through file:
    let res = radapt(&[
        "chain-gen",
        "--chain",
        "irreducible:n=4",
        "--horizon",
        "30",
        "--seed",
        "21",
        "--materialize",
        "--out",
        out,
    ]);
    assert!(res.status.success());
    let chain_path = dir.path().join("chain.json");
    let sim_dir = tempfile::tempdir().unwrap();
    let res = radapt(&[
        "simulate",
        "--chain",
        &format!("file:{}", chain_path.display()),
        "--x0",
        "1..4",
        "--seed",
        "2",
        "--out",
        sim_dir.path().to_str().unwrap(),
        "--no-svg",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn identical_configs_produce_byte_identical_artifacts() {
    let run = |dir: &Path| {
        let res = radapt(&[
            "simulate",
            "--dynamics",
            "fj",
            "--chain",
            "irreducible:n=6",
            "--x0",
            "1..6",
            "--u",
            "21..26",
            "--gamma",
            "0.7",
            "--horizon",
            "400",
            "--seed",
            "99",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(res.status.success());
    };
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(d1.path());
    run(d2.path());
    for artifact in ["trajectory.csv", "trajectory.svg", "summary.json"] {
        assert_eq!(
            read(&d1.path().join(artifact)),
            read(&d2.path().join(artifact)),
            "{artifact} differs between identical runs"
        );
    }
}
