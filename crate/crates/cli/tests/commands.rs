use std::path::Path;
use std::process::{Command, Output};

use hlrp_cli::RunConfig;

fn hlrp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hlrp"))
        .args(args)
        .env_remove("HLRP_SEED")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn setup(dir: &Path) -> (String, String, String) {
    let d = dir.to_str().unwrap();
    let out = hlrp(&["synth", "--out-dir", d, "--seed", "2", "--holders", "40", "--funds", "10"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let t = format!("{d}/holdings_t.csv");
    let t1 = format!("{d}/holdings_t1.csv");
    let ck = format!("{d}/m.ckpt");
    let out = hlrp(&[
        "train", "--data", &t, "--checkpoint", &ck, "--epochs", "5", "--embedding-dim", "8", "--hidden-dim", "8",
        "--mlp-hidden", "4",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    (t, t1, ck)
}

#[test]
fn recommend_lists_ranked_holders() {
    let dir = tempfile::tempdir().unwrap();
    let (t, _, ck) = setup(dir.path());
    let out = hlrp(&["recommend", "--data", &t, "--checkpoint", &ck, "--fund", "F001", "--top", "5"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "rank,holder_id,score");
    assert_eq!(lines.len(), 6);
    let scores: Vec<f64> = lines[1..].iter().map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn unknown_fund_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let (t, _, ck) = setup(dir.path());
    let out = hlrp(&["recommend", "--data", &t, "--checkpoint", &ck, "--fund", "NOPE"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("NOPE"), "{}", stderr(&out));
}

#[test]
fn evaluate_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let (t, t1, ck) = setup(dir.path());
    let report = dir.path().join("r.json");
    let out = hlrp(&[
        "evaluate", "--data", &t, "--truth", &t1, "--checkpoint", &ck, "--baseline", "--report",
        report.to_str().unwrap(), "--ks", "5,10",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let reports = json.as_array().unwrap();
    assert_eq!(reports.len(), 4);
    for r in reports {
        assert_eq!(r["ks"], serde_json::json!([5, 10]));
    }
}

#[test]
fn missing_checkpoint_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let (t, _, _) = setup(dir.path());
    let out = hlrp(&["recommend", "--data", &t, "--checkpoint", "/nonexistent.ckpt", "--fund", "F001"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error:"));
}

#[test]
fn config_file_is_validated_and_defaults_parse() {
    let out = hlrp(&["defaults"]);
    assert!(out.status.success());
    let cfg: RunConfig = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(cfg, RunConfig::default());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"epochz": 3}"#).unwrap();
    let out = hlrp(&["--config", path.to_str().unwrap(), "defaults"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("epochz"), "{}", stderr(&out));
}
