use std::path::Path;
use std::process::Command;

fn deskbot(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_deskbot")).args(args).output().unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(deskbot(&["params"]).status.code(), Some(0));
    let unknown = deskbot(&["fly"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage"));
    assert_eq!(deskbot(&["params", "--frobnicate"]).status.code(), Some(2));
    assert_eq!(deskbot(&["--help"]).status.code(), Some(0));
    let runtime = deskbot(&["eval", "--route", "NOWHERE", "--trials", "1"]);
    assert_eq!(runtime.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&runtime.stderr).contains("unknown route"));
}

#[test]
fn params_table_lists_reference_networks() {
    let out = String::from_utf8(deskbot(&["params"]).stdout).unwrap();
    assert!(out.contains("Ours") && out.contains("1285026") && out.contains("1.3M"));
    assert!(out.contains("PilotNet") && out.contains("9.6M"));
    assert!(out.contains("CIL") && out.contains("10.7M"));
}

#[test]
fn every_subcommand_documents_common_flags() {
    for sub in ["sim", "collect", "train", "eval", "follow", "params", "proto-fuzz", "pipeline"] {
        let help = String::from_utf8(deskbot(&[sub, "--help"]).stdout).unwrap();
        for flag in ["--seed", "--config", "--out"] {
            assert!(help.contains(flag), "{sub} lacks {flag}");
        }
    }
}

#[test]
fn collect_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = deskbot(&["collect", "--route", "R2", "--minutes", "0.2", "--noise", "on", "--seed", "7", "--out", arg(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ma = std::fs::read(a.join("manifest.jsonl")).unwrap();
    assert_eq!(ma, std::fs::read(b.join("manifest.jsonl")).unwrap());
    assert_eq!(ma.iter().filter(|&&c| c == b'\n').count(), 240);
    assert_eq!(std::fs::read(a.join("meta.json")).unwrap(), std::fs::read(b.join("meta.json")).unwrap());
}

#[test]
fn eval_writes_reports_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = deskbot(&["eval", "--route", "EVAL2", "--trials", "2", "--seed", "4", "--out", arg(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let md = std::fs::read_to_string(a.join("report.md")).unwrap();
    assert!(md.contains("| Policy | Route | Distance ↑ | Success ↑ | Collisions ↓ |"));
    assert!(md.contains("100±0%"));
    assert_eq!(md, std::fs::read_to_string(b.join("report.md")).unwrap());
    assert_eq!(std::fs::read(a.join("report.json")).unwrap(), std::fs::read(b.join("report.json")).unwrap());
}

#[test]
fn train_then_eval_with_weights() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    for (i, route) in ["R2", "R3"].iter().enumerate() {
        let out = data.join(format!("s{i}"));
        let o = deskbot(&["collect", "--route", route, "--minutes", "0.1", "--seed", &i.to_string(), "--out", arg(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let model = dir.path().join("model");
    let o = deskbot(&["train", "--data", arg(&data), "--width", "32", "--height", "12", "--epochs", "1", "--out", arg(&model)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(model.join("weights.obnw").is_file() && model.join("arch.json").is_file());
    let report = dir.path().join("report");
    let weights = model.join("weights.obnw");
    let o = deskbot(&["eval", "--route", "EVAL1", "--weights", arg(&weights), "--trials", "1", "--out", arg(&report)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(report.join("report.md")).unwrap().contains("weights"));
}

#[test]
fn follow_and_fuzz_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = deskbot(&["follow", "--duration", "5", "--out", arg(dir.path())]);
    assert!(o.status.success());
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["frames"], 100);
    let o = deskbot(&["proto-fuzz", "--lines", "20000", "--seed", "1"]);
    assert!(o.status.success());
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["crashes"], 0);
}
