use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rave_core::config::RunConfig;
use rave_core::digest::sha256_hex;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").canonicalize().unwrap()
}

fn rave(out: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rave"));
    cmd.arg("--config").arg(fixtures().join("rave.toml"));
    cmd.arg("--set").arg(format!("output_dir={}", out.display()));
    for key in ["RAVE_LLM_API_KEY", "RAVE_EMBED_API_KEY", "RAVE_SEARCH_API_KEY", "RAVE_SEARCH_ENGINE_ID"] {
        cmd.env_remove(key);
    }
    cmd.args(args).output().unwrap()
}

fn manifest(out: &Path, command: &str) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(out.join(format!("{command}.manifest.json"))).unwrap()).unwrap()
}

fn decision_files(dir: &Path) -> Vec<(String, String)> {
    let mut files: Vec<_> = fs::read_dir(dir.join("decisions"))
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), sha256_hex(fs::read(&p).unwrap()))
        })
        .collect();
    files.sort();
    files
}

#[test]
fn evaluate_replays_identically() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let out = rave(dir.path(), &["evaluate"]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let files = decision_files(a.path());
    assert_eq!(files.len(), 6);
    assert_eq!(files, decision_files(b.path()));

    let csv = fs::read_to_string(a.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    let m = manifest(a.path(), "evaluate");
    assert_eq!(m["counters"]["claims"], 50);
    assert_eq!(m["counters"]["unparseable"], 0);
    assert!(m["fixture_cache_digest"].is_string());
    assert_eq!(m["variants"].as_array().unwrap().len(), 6);
}

#[test]
fn manifest_config_reproduces_the_run() {
    let first = tempfile::tempdir().unwrap();
    assert_eq!(rave(first.path(), &["evaluate"]).status.code(), Some(0));
    let m = manifest(first.path(), "evaluate");
    let config: RunConfig = serde_json::from_value(m["config"].clone()).unwrap();

    let second = tempfile::tempdir().unwrap();
    let file = second.path().join("from_manifest.toml");
    fs::write(&file, toml::to_string(&config).unwrap()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_rave"))
        .arg("--config")
        .arg(&file)
        .args(["--set", &format!("output_dir={}", second.path().join("out").display()), "evaluate"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let recorded: Vec<(String, String)> = serde_json::from_value(m["outputs"].clone()).unwrap();
    for (name, digest) in recorded.iter().filter(|(n, _)| n.starts_with("decisions/")) {
        let again = fs::read(second.path().join("out").join(name)).unwrap();
        assert_eq!(&sha256_hex(again), digest, "{name}");
    }
}

#[test]
fn text_only_retrieves_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = rave(dir.path(), &["--set", "strategy=TEXT_ONLY", "detect", "-o", "/dev/null"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(dir.path(), "detect");
    assert_eq!(m["counters"]["snippets"], 0);
    assert_eq!(m["counters"]["searches"], 0);
    assert_eq!(m["counters"]["decisions"], 50);
}

#[test]
fn live_mode_without_keys_aborts_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let out = rave(dir.path(), &["--set", "mode=live", "--set", "backend=http", "detect"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("RAVE_LLM_API_KEY"));
    assert!(out.stdout.is_empty());
    assert!(!dir.path().join("detect.manifest.json").exists());
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [["--set", "alpha=1.5"], ["--set", "alpah=0.5"], ["--set", "k=0"]] {
        let mut full = args.to_vec();
        full.push("stats");
        assert_eq!(rave(dir.path(), &full).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn unrecorded_claim_is_a_per_claim_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = rave(dir.path(), &["detect", "--claim", "A sentence nobody recorded, about Atlantis."]);
    assert_eq!(out.status.code(), Some(1));
    let line = String::from_utf8_lossy(&out.stdout);
    assert!(line.contains("\"type\":\"decision_failure\""), "{line}");
    assert_eq!(manifest(dir.path(), "detect")["counters"]["failures"], 1);
}

#[test]
fn sweep_tune_stats_and_export() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["sweep-k", "tune-alpha", "stats", "export-errors"] {
        let out = rave(dir.path(), &[cmd]);
        assert_eq!(out.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(dir.path().join(format!("{cmd}.manifest.json")).exists());
    }
    let csv = fs::read_to_string(dir.path().join("sweep_k.csv")).unwrap();
    assert!(csv.starts_with("k,accuracy,precision,recall,f1\n"));
    assert!(fs::read_to_string(dir.path().join("sweep_k.svg")).unwrap().starts_with("<svg"));
    let tune: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("tune_alpha.json")).unwrap()).unwrap();
    assert_eq!(tune["grid"].as_array().unwrap().len(), 6);
    let stats: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["table"]["verifiable"], 25);
    let export = fs::read_to_string(dir.path().join("errors_rave.jsonl")).unwrap();
    assert!(export.lines().next().unwrap().contains("\"type\":\"export_header\""));
}

#[test]
fn stage_commands_write_records() {
    let dir = tempfile::tempdir().unwrap();
    let claim = "Pfizer isn't Lamborghini. Sinovac isn't Proton.";
    let out = rave(dir.path(), &["--set", "mode=live", "extract", "--claim", claim]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("\"surface\":\"Sinovac\""), "{text}");

    let out = rave(dir.path(), &["retrieve", "--claim", claim]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("\"type\":\"pool\""));

    let out = rave(dir.path(), &["score", "--claim", claim]);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8_lossy(&out.stdout);
    assert!(csv.starts_with("claim_id,url,relevance,credibility,combined\n"));
    assert!(csv.lines().count() > 1);
}
