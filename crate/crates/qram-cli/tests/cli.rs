//! End-to-end checks of the command-line surface: determinism, exit codes,
//! file formats, and the documented output schemas.

use std::path::Path;
use std::process::{Command, Output};

fn qram(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qram"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn noiseless_query_has_unit_fidelity() {
    let out = qram(&["query", "--n", "3", "--epsilon", "0", "--input", "uniform", "--seed", "4"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["schema_version"], 1);
    let f = v["fidelity_mean"].as_f64().unwrap();
    assert!((f - 1.0).abs() < 1e-12);
    assert_eq!(v["fidelity_std_error"].as_f64().unwrap(), 0.0);
}

#[test]
fn repeated_queries_are_byte_identical() {
    let args = [
        "query", "--n", "6", "--epsilon", "1e-3", "--shots", "50", "--seed", "7", "--mode",
        "pruned",
    ];
    let a = qram(&args);
    let b = qram(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn pruned_and_full_agree_at_same_seed() {
    let fid = |mode: &str| -> f64 {
        let out = qram(&[
            "query", "--n", "6", "--epsilon", "1e-3", "--shots", "100", "--seed", "9", "--mode",
            mode,
        ]);
        assert!(out.status.success());
        let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
        v["fidelity_mean"].as_f64().unwrap()
    };
    assert_eq!(fid("pruned"), fid("full"));
}

#[test]
fn query_reads_both_table_formats() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    std::fs::write(&csv, "address,value\n0,1\n1,0\n2,1\n3,1\n").unwrap();
    let out = qram(&[
        "query",
        "--n",
        "2",
        "--epsilon",
        "0",
        "--input",
        "uniform:1",
        "--seed",
        "3",
        "--table",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    // |0,0> -> |0, d_0 = 1>
    assert_eq!(v["shot0"]["top_branches"][0]["data"], 1);

    let bin = dir.path().join("t.bin");
    std::fs::write(&bin, [1u8, 0, 1, 1]).unwrap();
    let out2 = qram(&[
        "query",
        "--n",
        "2",
        "--epsilon",
        "0",
        "--input",
        "uniform:1",
        "--seed",
        "3",
        "--table",
        bin.to_str().unwrap(),
    ]);
    assert!(out2.status.success());
    assert_eq!(stdout(&out).replace("t.csv", "t.bin"), stdout(&out2));
}

#[test]
fn ef_rejects_level_zero_with_config_exit_code() {
    let out = qram(&["ef", "--op", "identity", "--epsilon", "1e-3", "--t", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ef_identity_emits_expected_columns() {
    let out = qram(&[
        "ef", "--op", "identity", "--qubits", "2", "--epsilon", "5e-3", "--t", "1", "--states",
        "4", "--shots", "4000", "--seed", "11",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "n,epsilon,T,F0,FT,ratio,PS,bound_worst,bound_original,bound_refined,shots,seed"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[2], "1");
    let ratio: f64 = row[5].parse().unwrap();
    assert!(ratio > 1.2 && ratio < 2.8, "T=1 ratio {ratio}");
}

#[test]
fn missing_table_is_a_config_error() {
    let out = qram(&["query", "--n", "3", "--table", "/nonexistent/t.csv", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_mode_is_a_config_error() {
    let out = qram(&["query", "--n", "3", "--mode", "bogus", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_without_seed_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"n": 3, "epsilon": 0.001}"#).unwrap();
    let out = qram(&["query", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(&cfg, r#"{"n": 3, "epsilon": 0.001, "seed": 5}"#).unwrap();
    let out = qram(&["query", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["seed"], 5);
    assert_eq!(v["n"], 3);
}

#[test]
fn fit_reports_progressive_limits() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("curve.csv");
    let mut text = String::from("n,infidelity\n");
    for n in 1..=15u32 {
        text.push_str(&format!("{n},{}\n", 0.001 * f64::from(n).powf(1.9)));
    }
    std::fs::write(&csv, text).unwrap();
    let out = qram(&["fit", "--input", csv.to_str().unwrap()]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["eps_max_original"].as_f64().unwrap(), 0.125);
    assert_eq!(v["eps_max_refined"].as_f64().unwrap(), 0.25);
    assert!((v["exponent"].as_f64().unwrap() - 1.9).abs() < 1e-6);
    // 0.001 n^1.9 crosses 0.125 at n ~ 12.68 and 0.25 at n ~ 18.25
    assert_eq!(v["n_max_original"], 12);
    assert_eq!(v["n_max_refined"], 18);
}

#[test]
fn bench_emits_cost_rows_with_regions() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let summary = dir.path().join("bench.json");
    let out = qram(&[
        "bench",
        "--n",
        "6..8",
        "--p",
        "1e-5,1e-4",
        "--branch-sizes",
        "8",
        "--branch-size",
        "8",
        "--shots",
        "4",
        "--reps",
        "3",
        "--seed",
        "2",
        "--output",
        csv.to_str().unwrap(),
        "--summary",
        summary.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("n,branch_count,epsilon,gamma,mode,"));
    assert!(text.lines().count() > 6);
    for line in text.lines().skip(1) {
        let region = line.split(',').nth(10).unwrap();
        assert!(["I", "II", "III"].contains(&region), "bad region in `{line}`");
    }
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(v["region_ii_upper"].as_f64().unwrap(), 256.0);
    assert!(v["mode_ratios"].as_array().unwrap().len() >= 4);
}

#[test]
fn validate_quick_passes_and_reports() {
    let out = qram(&["validate", "--quick"]);
    assert!(out.status.success(), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.lines().all(|l| l.starts_with("[PASS]")));
    assert!(text.lines().count() >= 10);
}

/// Region labels in the CSV match the classifier on (n, p).
#[test]
fn bench_region_column_cross_check() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let out = qram(&[
        "bench",
        "--n",
        "10,14",
        "--p",
        "1e-6,1e-4",
        "--branch-sizes",
        "4",
        "--branch-size",
        "4",
        "--shots",
        "2",
        "--reps",
        "2",
        "--modes",
        "pruned",
        "--seed",
        "3",
        "--output",
        csv.to_str().unwrap(),
        "--summary",
        dir.path().join("s.json").to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let n: u8 = cols[0].parse().unwrap();
        let eps: f64 = cols[2].parse().unwrap();
        let gamma: f64 = cols[3].parse().unwrap();
        let expected = match (n, eps.max(gamma)) {
            (_, p) => {
                let x = f64::from(n) * f64::from(n) * p * (1u64 << n) as f64;
                if x < 1.0 {
                    "I"
                } else if x <= 256.0 {
                    "II"
                } else {
                    "III"
                }
            }
        };
        assert_eq!(cols[10], expected, "line `{line}`");
    }
    let _ = Path::new("unused");
}
