use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> String {
    let mut p = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    p.push("tests/fixtures");
    p.push(name);
    p.to_string_lossy().into_owned()
}

fn martrep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_martrep"))
        .args(args)
        .env_remove("MARTREP_SEED")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn emm_on_binomial() {
    let out = martrep(&["emm", "--market", &fixture("binomial.json")]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["dimension"], 0);
    assert_eq!(v["unique"], true);
    assert_eq!(v["reference"]["u"], "1/3");
    assert_eq!(v["reference"]["d"], "2/3");
}

#[test]
fn hedge_binomial_claim() {
    let out = martrep(&["hedge", "--market", &fixture("binomial.json"), "--claim", &fixture("up.json"), "--bound", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["c"], "1/3");
    assert_eq!(v["direct_integrands"][0]["0"], "2/3");
    assert_eq!(v["max_abs_gain"], "2/3");
}

#[test]
fn trinomial_middle_claim_is_a_verdict_failure() {
    let args = ["hedge", "--market", &fixture("trinomial.json"), "--claim", &fixture("mid.json"), "--bound", "1"];
    let out = martrep(&args);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["error"], "NotHedgeable");
    let mut strict = args.to_vec();
    strict.push("--expect-hedgeable");
    let out = martrep(&strict);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["node"], "0");
}

#[test]
fn input_errors_exit_two() {
    let out = martrep(&["emm", "--market", "/nonexistent/market.json"]);
    assert_eq!(out.status.code(), Some(2));
    let out = martrep(&["emm", "--market", &fixture("up.json")]);
    assert_eq!(out.status.code(), Some(2));
    let out = martrep(&["emm", "--market", &fixture("binomial.json"), "--tolerance", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = martrep(&["sweep", "--count", "3", "--max-depth", "9"]);
    assert_eq!(out.status.code(), Some(2));
    let out = martrep(&["hedge", "--market", &fixture("binomial.json"), "--claim", &fixture("up.json"), "--bound", "1/2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn martingale_checks() {
    let walk = fixture("walk.json");
    let out = martrep(&["check-martingale", "--tree", &walk, "--process", "X"]);
    assert_eq!(out.status.code(), Some(0));
    let out = martrep(&["check-martingale", "--tree", &walk, "--process", "D"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["worst_node"], "r");
    let out = martrep(&["check-martingale", "--tree", &walk, "--process", "X", "--measure", &fixture("walk_q.json")]);
    assert_eq!(out.status.code(), Some(1));
    let out = martrep(&["sigma", "--tree", &walk, "--process", "X"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["verdict"], true);
}

#[test]
fn integrate_walk() {
    let out = martrep(&["integrate", "--tree", &fixture("walk.json"), "--integrand", "H", "--process", "X"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["integral"]["uu"], "3");
    assert_eq!(v["integral"]["du"], "-2");
    assert_eq!(v["quadratic_variation"]["ud"], "5");
    let out = martrep(&["integrate", "--tree", &fixture("walk.json"), "--integrand", "H", "--process", "X", "--stop-at", "1"]);
    assert_eq!(json(&out)["integral"]["uu"], "1");
}

#[test]
fn represent_reconstruct_and_diagonalize() {
    let walk = fixture("walk.json");
    let claim = fixture("walk_claim.json");
    let out = martrep(&["represent", "--market", &walk, "--claim", &claim]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["representation"]["c"], "1/2");
    let out = martrep(&["reconstruct", "--market", &walk, "--claim", &claim]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["exact"]["replay_exact"], true);
    assert!(v["float_residual"].as_f64().unwrap() <= 1e-9);
    let out = martrep(&["diagonalize", "--market", &walk]);
    assert_eq!(out.status.code(), Some(0));
    assert!(json(&out)["orthogonality_gap"].as_f64().unwrap() <= 1e-9);
    let out = martrep(&["represent", "--market", &fixture("trinomial.json"), "--claim", &fixture("mid.json"), "--expect-representable"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["witness"], "0");
}

#[test]
fn crosscheck_and_extreme() {
    let out = martrep(&["crosscheck", "--market", &fixture("trinomial.json")]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["agree"], true);
    assert_eq!(v["iv_extreme"], false);
    assert_eq!(v["second_ftap"]["complete"], false);
    let out = martrep(&["extreme", "--market", &fixture("binomial.json")]);
    assert_eq!(json(&out)["extreme"], true);
}

#[test]
fn lemma53_walk() {
    let out = martrep(&["lemma53", "--tree", &fixture("walk.json"), "--process", "X", "--measure", &fixture("walk_q.json")]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["all_hold"], true);
    assert_eq!(v["density"]["uu"], "2/3");
}

#[test]
fn emery_report_and_seed_override() {
    let base = ["emery", "--samples", "5000", "--seed", "3"];
    let a = martrep(&base);
    assert_eq!(a.status.code(), Some(0));
    let v = json(&a);
    assert!((v["I"].as_f64().unwrap() - 6.1122).abs() < 1e-3);
    let overridden = Command::new(env!("CARGO_BIN_EXE_martrep"))
        .args(["emery", "--samples", "5000", "--seed", "99", "--shards", "3"])
        .env("MARTREP_SEED", "3")
        .output()
        .unwrap();
    assert_eq!(a.stdout, overridden.stdout);
    let other = martrep(&["emery", "--samples", "5000", "--seed", "4"]);
    assert_ne!(a.stdout, other.stdout);
}

#[test]
fn sweep_rows_and_summary() {
    let one = martrep(&["sweep", "--seed", "2", "--count", "12", "--shards", "1"]);
    let three = martrep(&["sweep", "--seed", "2", "--count", "12", "--shards", "3"]);
    assert_eq!(one.status.code(), Some(0));
    assert_eq!(one.stdout, three.stdout);
    let text = String::from_utf8(one.stdout).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 13);
    let summary = lines.last().unwrap();
    assert_eq!(summary["instances"], 12);
    assert_eq!(summary["agreements"], 12);
    assert_eq!(summary["failures"], 0);
}

#[test]
fn text_format() {
    let out = martrep(&["emm", "--market", &fixture("binomial.json"), "--format", "text"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l == "dimension: 0"));
    assert!(text.lines().any(|l| l == "unique: true"));
}
