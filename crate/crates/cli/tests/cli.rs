use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bundled(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/markets")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn tvo(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvo"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn report(out: &Path, command: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join(format!("{command}.json"))).unwrap()).unwrap()
}

fn without_timing(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timing");
    v
}

#[test]
fn price_bs_reports_a_price() {
    let dir = tempfile::tempdir().unwrap();
    let m = bundled("bs2.json");
    let out = tvo(
        dir.path(),
        &["price-bs", "--market", &m, "--strike", "1", "--maturity", "2", "--target-vol", "0.05", "--payoff", "call", "--strategy", "auto"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path(), "price-bs");
    assert_eq!(r["schema_version"], 1);
    let price = r["result"]["price"].as_f64().unwrap();
    assert!(price > 0.0 && price < 0.1);
    assert_eq!(r["config"]["contract"]["strike"], 1.0);
}

#[test]
fn compare_baselines_on_a_symmetric_market_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let market = dir.path().join("sym.json");
    std::fs::write(
        &market,
        r#"{
          "assets": [
            {"name": "A", "spot": 100.0, "carry_pillars": [[0.0, 0.02]], "vol": {"type": "bs", "pillars": [[0.0, 0.25]]}},
            {"name": "B", "spot": 30.0, "carry_pillars": [[0.0, 0.02]], "vol": {"type": "bs", "pillars": [[0.0, 0.25]]}},
            {"name": "C", "spot": 7.0, "carry_pillars": [[0.0, 0.02]], "vol": {"type": "bs", "pillars": [[0.0, 0.25]]}}
          ],
          "rate_pillars": [[0.0, 0.01]],
          "fee_pillars": [[0.0, 0.02]],
          "correlation": [[1.0, 0.4, 0.2], [0.4, 1.0, 0.3], [0.2, 0.3, 1.0]]
        }"#,
    )
    .unwrap();
    let out = tvo(dir.path(), &["compare-baselines", "--market", market.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path(), "compare-baselines");
    let prices: Vec<f64> = r["result"]["prices"].as_array().unwrap().iter().map(|p| p["price"].as_f64().unwrap()).collect();
    assert_eq!(prices.len(), 4);
    for p in &prices {
        assert!((p - prices[0]).abs() < 1e-12, "{prices:?}");
    }
    assert!(dir.path().join("baselines.csv").exists());
}

#[test]
fn hjb_check_flags_small_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = tvo(dir.path(), &["hjb-check", "--market", &bundled("bs2.json"), "--grid", "400x400"]);
    assert!(out.status.success());
    let r = report(dir.path(), "hjb-check");
    assert!(r["result"]["relative_error"].as_f64().unwrap() < 1e-3);
    assert_eq!(r["result"]["within_tolerance"], true);
}

#[test]
fn price_mc_self_check_and_thread_invariance() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let m = bundled("bs3.json");
    let args = ["price-mc", "--market", &m, "--paths", "5000", "--seed", "4"];
    let one = Command::new(env!("CARGO_BIN_EXE_tvo")).args(["--threads", "1", "--out"]).arg(a.path()).args(args).output().unwrap();
    let three = Command::new(env!("CARGO_BIN_EXE_tvo")).args(["--threads", "3", "--out"]).arg(b.path()).args(args).output().unwrap();
    assert!(one.status.success() && three.status.success());
    let ra = report(a.path(), "price-mc");
    assert!(ra["result"]["self_check"]["abs_error_in_std_errors"].as_f64().unwrap() <= 3.0);
    assert_eq!(without_timing(ra), without_timing(report(b.path(), "price-mc")));
}

#[test]
fn out_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_tvo"))
        .env("TVO_OUT_DIR", dir.path())
        .args(["solve-strategy", "--market", &bundled("bs3.json"), "--kind", "bang-bang"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let r = report(dir.path(), "solve-strategy");
    assert_eq!(r["result"]["alpha"].as_array().unwrap().len(), 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(tvo(dir.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(tvo(dir.path(), &["price-bs", "--bogus-flag"]).status.code(), Some(1));
    assert_eq!(tvo(dir.path(), &["price-bs", "--market", "/missing.json"]).status.code(), Some(1));
    assert_eq!(tvo(dir.path(), &["price-bs", "--market", &bundled("bs2.json"), "--target-vol", "-0.1"]).status.code(), Some(1));
    // local-vol markets have no closed form
    assert_eq!(tvo(dir.path(), &["price-bs", "--market", &bundled("lv2.json")]).status.code(), Some(1));
    assert_eq!(tvo(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn trained_policy_round_trips_through_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let m = bundled("bs2.json");
    let out = tvo(
        dir.path(),
        &["train-direct", "--market", &m, "--epochs", "3", "--batch", "64", "--restarts", "2", "--eval-paths", "2000", "--hidden", "6,4"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trained = report(dir.path(), "train-direct");
    let policy = dir.path().join("policy.json");
    let out = tvo(dir.path(), &["evaluate", "--market", &m, "--policy", policy.to_str().unwrap(), "--paths", "2000"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let evaluated = report(dir.path(), "evaluate");
    assert_eq!(trained["result"]["evaluation"], evaluated["result"]["evaluation"]);
    let curve = std::fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    assert!(curve.starts_with("x,value,ci_halfwidth\n"));
    assert_eq!(curve.lines().count(), 4);
}
