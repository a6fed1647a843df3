use std::fs;
use std::process::{Command, Output};

use serde_json::Value;

fn futurity(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_futurity"))
        .args(args)
        .env_remove("FUTURITY_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}", String::from_utf8_lossy(&o.stdout))
    })
}

fn f(v: &Value, key: &str) -> f64 {
    v[key].as_f64().unwrap_or_else(|| panic!("{key} missing in {v}"))
}

#[test]
fn analyze_positive_profit_with_agreeing_routes() {
    let o = futurity(&["analyze", "ABABBABBB", "0.3", "0.8"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    let r = f(&v, "R_theorem2");
    assert!(r > 0.0);
    for key in ["R_def", "R_lemma3", "R_oracle"] {
        assert!((f(&v, key) - r).abs() <= 1e-9, "{key}");
    }
    assert!(f(&v, "maxRouteDiscrepancy") <= 1e-9);
    assert!(v["R_lemma4"].is_null());
}

#[test]
fn analyze_key_order_is_fixed() {
    let o = futurity(&["analyze", "AABBB", "0.2", "0.7"]);
    let text = String::from_utf8(o.stdout).unwrap();
    let keys: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("  \""))
        .map(|l| l.trim().split('"').nth(1).unwrap())
        .collect();
    assert_eq!(&keys[..8], ["pattern", "a", "r", "s", "h", "qA", "qB", "pCircD"]);
    assert_eq!(keys.last(), Some(&"Q1"));
}

#[test]
fn analyze_fair_pattern_is_zero() {
    let v = json(&futurity(&["analyze", "AB", "0.5", "0.5"]));
    for key in ["R_def", "R_lemma3", "R_theorem2", "R_lemma4", "R_oracle"] {
        assert!(f(&v, key).abs() <= 1e-12, "{key}");
    }
}

#[test]
fn analyze_rejects_bad_input() {
    let o = futurity(&["analyze", "AAAA", "0.3", "0.8"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("both arms"));
    assert_eq!(code(&futurity(&["analyze", "ABX", "0.3", "0.8"])), 2);
    assert_eq!(code(&futurity(&["analyze", "AB", "0", "0.8"])), 2);
    assert_eq!(code(&futurity(&["analyze", "AB", "0.3", "1"])), 2);
}

#[test]
fn analyze_route_tolerance_can_fail() {
    // no two float routes agree to 1e-300 at this point
    let o = futurity(&["analyze", "ABABBABBB", "0.3", "0.8", "--route-tol", "1e-300"]);
    assert_eq!(code(&o), 3);
    assert!(!o.stdout.is_empty());
}

#[test]
fn analyze_csv_and_chain_dump() {
    let dir = tempfile::tempdir().unwrap();
    let chain = dir.path().join("chain.csv");
    let o = futurity(&[
        "analyze",
        "AB",
        "0.3",
        "0.6",
        "--format",
        "csv",
        "--dump-chain",
        chain.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("pattern,a,r,s,h,qA,qB,"));
    assert!(lines.next().unwrap().starts_with("AB,\"(1,1)\",1,1,1,0.3,0.6,"));

    let mut rd = csv::Reader::from_path(&chain).unwrap();
    let header = rd.headers().unwrap().clone();
    assert_eq!(header.len(), 1 + 8 + 1);
    assert_eq!(&header[1], "0,0");
    let mut total = 0.0;
    for rec in rd.records() {
        let rec = rec.unwrap();
        let row: f64 = (1..=8).map(|k| rec[k].parse::<f64>().unwrap()).sum();
        assert!((row - 1.0).abs() < 1e-12);
        total += rec[9].parse::<f64>().unwrap();
    }
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn sweep_up_to_ten_passes() {
    let o = futurity(&["sweep", "--max-len", "10", "--grid", "0.1:0.9:0.2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    assert_eq!(v["status"], "pass");
    assert!(f(&v, "minQ") > 0.0);
    assert!(f(&v, "maxRouteDiscrepancy") <= 1e-9);
    assert_eq!(v["gridPoints"].as_u64(), Some(v["patternCount"].as_u64().unwrap() * 25));
}

#[test]
fn sweep_length_two_collapses_to_one_block() {
    let o = futurity(&["sweep", "--max-len", "2", "--grid", "0.1:0.9:0.2", "--format", "csv", "--with-oracle"]);
    assert_eq!(code(&o), 0);
    let mut rd = csv::Reader::from_reader(&o.stdout[..]);
    let mut n = 0;
    for rec in rd.records() {
        let rec = rec.unwrap();
        assert_eq!(&rec[0], "AB");
        let (qa, qb, q): (f64, f64, f64) =
            (rec[3].parse().unwrap(), rec[4].parse().unwrap(), rec[5].parse().unwrap());
        assert!((q - (1.0 + qa) * (1.0 + qb)).abs() < 1e-12);
        n += 1;
    }
    assert_eq!(n, 25);
    let summary: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(summary["patternCount"], 1);
}

#[test]
fn sweep_rejects_bad_flags() {
    for grid in ["0.1:0.9", "0:0.9:0.1", "0.1:0.9:-0.1", "x:y:z"] {
        assert_eq!(code(&futurity(&["sweep", "--max-len", "4", "--grid", grid])), 2, "{grid}");
    }
    assert_eq!(code(&futurity(&["sweep", "--max-len", "65"])), 2);
    assert_eq!(code(&futurity(&["sweep", "--max-len", "1"])), 2);
}

#[test]
fn sweep_writes_files_atomically_and_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let rows = dir.path().join("rows.csv");
    let summary = dir.path().join("summary.json");
    let args = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_futurity"))
            .args(["sweep", "--max-len", "9", "--grid", "0.2:0.8:0.3", "-o"])
            .arg(&rows)
            .arg("--summary")
            .arg(&summary)
            .env("FUTURITY_THREADS", threads)
            .output()
            .unwrap()
    };
    let a = args("1");
    assert_eq!(code(&a), 0);
    let (rows1, sum1) = (fs::read(&rows).unwrap(), fs::read(&summary).unwrap());
    let b = args("3");
    assert_eq!(code(&b), 0);
    assert_eq!(rows1, fs::read(&rows).unwrap());
    assert_eq!(sum1, fs::read(&summary).unwrap());
    assert_eq!(a.stdout, sum1);
    // only the two outputs remain; no temp files
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2);
}

#[test]
fn invalid_thread_count_is_an_input_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_futurity"))
        .args(["analyze", "AB", "0.3", "0.4"])
        .env("FUTURITY_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn simulate_matches_exact_profit() {
    let o = futurity(&["simulate", "ABABB", "0.4", "0.6", "--coups", "1e7", "--seed", "42"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    assert_eq!(v["status"], "pass");
    assert_eq!(v["coupsPerReplication"], 10_000_000);
    let dev = f(&v["comparison"], "profitDeviation");
    assert!(dev.abs() <= 4.0 * f(&v, "stdError"));
}

#[test]
fn mixture_matches_exact_profit() {
    let o = futurity(&["mixture", "0.5", "0.4", "0.7", "--coups", "1e7", "--seed", "42"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    assert_eq!(v["strategy"], "mixture(0.5)");
    assert!(f(&v["comparison"], "exactProfit") > 0.0);
}

#[test]
fn simulate_fair_pattern_near_zero_and_reproducible() {
    let run = || futurity(&["simulate", "AB", "0.5", "0.5", "--coups", "1e6", "--seed", "1"]);
    let (a, b) = (run(), run());
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let v = json(&a);
    assert_eq!(f(&v["comparison"], "exactProfit"), 0.0);
    assert!(f(&v, "profitPerCoup").abs() < 1e-3);
}

#[test]
fn simulate_statistical_failure_exit() {
    // a tiny standard-error multiple cannot be met
    let o = futurity(&["simulate", "AB", "0.5", "0.5", "--coups", "1e5", "--se-multiple", "1e-9"]);
    assert_eq!(code(&o), 4);
    assert_eq!(json(&o)["status"], "fail");
}

#[test]
fn simulate_rejects_bad_counts() {
    for coups in ["0", "1.5", "-5", "lots", "1e30"] {
        assert_eq!(code(&futurity(&["simulate", "AB", "0.5", "0.5", "--coups", coups])), 2, "{coups}");
    }
    assert_eq!(code(&futurity(&["simulate", "AB", "0.5", "0.5", "--replications", "1"])), 2);
    assert_eq!(code(&futurity(&["mixture", "1.2", "0.5", "0.5"])), 2);
}

#[test]
fn simulate_trace() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let o = futurity(&[
        "simulate",
        "AB",
        "0.3",
        "0.6",
        "--coups",
        "1e4",
        "--trace",
        path.to_str().unwrap(),
        "--trace-coups",
        "50",
    ]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("coup,arm,outcome,pointer,payout"));
    let arms: Vec<&str> = lines.map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(arms.len(), 50);
    assert!(arms.iter().enumerate().all(|(k, a)| *a == if k % 2 == 0 { "A" } else { "B" }));
}

#[test]
fn verify_reports_structure() {
    let o = futurity(&["verify", "ABABBABBB", "--grid", "0.1:0.9:0.4"]);
    assert_eq!(code(&o), 0);
    let v = json(&o);
    assert_eq!(v["status"], "pass");
    assert_eq!(v["h"], 3);
    assert_eq!(v["delta"], v["negativePoints"].as_array().unwrap().len());
    assert!(f(&v["positivity"], "minQ") > 0.0);
    assert!(!v["phiPsi"].as_array().unwrap().is_empty());

    let o = futurity(&["verify", "(2,3,1,1)", "--format", "csv", "--grid", "0.5:0.5:0.1"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
}
