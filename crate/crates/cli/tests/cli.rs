use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::thread;

use serde_json::{json, Value};
use tempfile::TempDir;

use mia_audit::corpus::{write_jsonl, Label};
use mia_audit::synth::{LanguageParams, SyntheticLanguage};

const BIN: &str = env!("CARGO_BIN_EXE_mia-audit");

/// A directory with a 500-sample corpus (200 members, 200 nonmembers and
/// 100 reference samples after splitting) and a config next to it.
struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new(config: Value) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let lang = SyntheticLanguage::new(LanguageParams::default(), 3);
        let samples = lang.samples("s", 500, Label::Unknown, 4);
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &samples).unwrap();
        fs::write(dir.path().join("corpus.jsonl"), buf).unwrap();
        fs::write(dir.path().join("config.json"), serde_json::to_vec_pretty(&config).unwrap()).unwrap();
        Self { dir }
    }

    fn toy() -> Self {
        Self::new(json!({
            "dataset": {"path": "corpus.jsonl", "fractions": [0.4, 0.4, 0.2]},
            "oracle": {"kind": "builtin-ngram", "order": 3, "add_k": 1.0},
            "neighbours": {"n": 10, "m": 1},
            "attacks": ["loss", "lira", "neighbourhood"],
            "seed": 7
        }))
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        self.run_env(args, &[])
    }

    fn run_env(&self, args: &[&str], env: &[(&str, &str)]) -> Output {
        let mut cmd = Command::new(BIN);
        cmd.arg("--config").arg(self.path("config.json")).args(args);
        cmd.env_remove("MIA_AUDIT_ENDPOINT");
        for (k, v) in env {
            cmd.env(k, v);
        }
        cmd.output().unwrap()
    }
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn toy_pipeline_writes_every_artifact() {
    let ws = Workspace::toy();
    let out = ws.run(&["run", "--workers", "2"]);
    assert!(out.status.success(), "{}", stderr(&out));

    for rel in [
        "out/split/members.jsonl",
        "out/split/nonmembers.jsonl",
        "out/split/reference.jsonl",
        "out/split/manifest.json",
        "out/fit/target.json",
        "out/fit/reference.json",
        "out/fit/substitution.json",
        "out/neighbours/neighbours.jsonl",
        "out/attack/loss.jsonl",
        "out/attack/lira.jsonl",
        "out/attack/neighbourhood.jsonl",
        "out/evaluate/report.md",
    ] {
        assert!(ws.path(rel).is_file(), "{rel} missing");
    }
    for kind in ["loss", "lira", "neighbourhood"] {
        for file in ["report.json", "roc.csv", "report.md"] {
            assert!(ws.path(&format!("out/evaluate/{kind}/{file}")).is_file(), "{kind}/{file} missing");
        }
    }
    assert!(!ws.path("out/error.json").exists());

    let manifest = read_json(&ws.path("out/split/manifest.json"));
    assert_eq!(manifest["counts"], json!({"members": 200, "nonmembers": 200, "reference": 100}));

    let neighbours = fs::read_to_string(ws.path("out/neighbours/neighbours.jsonl")).unwrap();
    let first: Value = serde_json::from_str(neighbours.lines().next().unwrap()).unwrap();
    let mut keys: Vec<&str> = first.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(keys, ["id", "joint_suitability", "neighbour_rank", "positions", "text"]);
    assert_eq!(first["neighbour_rank"], 1);

    let scores = fs::read_to_string(ws.path("out/attack/neighbourhood.jsonl")).unwrap();
    assert_eq!(scores.lines().count(), 400);
    let score: Value = serde_json::from_str(scores.lines().next().unwrap()).unwrap();
    assert_eq!(score["attack"], "neighbourhood");
    assert_eq!(score["n_neighbours"], 10);
    let loss: Value = serde_json::from_str(
        fs::read_to_string(ws.path("out/attack/loss.jsonl")).unwrap().lines().next().unwrap(),
    )
    .unwrap();
    assert_eq!(loss["n_neighbours"], Value::Null);

    let report = read_json(&ws.path("out/evaluate/neighbourhood/report.json"));
    assert_eq!(report["counts"], json!({"members": 200, "nonmembers": 200, "excluded": 0}));
    assert!(report["auc"].as_f64().unwrap() > 0.5);
    assert_eq!(report["config"]["neighbours"]["n"], 10);
    assert_eq!(report["config"]["neighbours"]["seed"], 7);
    let roc = fs::read_to_string(ws.path("out/evaluate/loss/roc.csv")).unwrap();
    assert!(roc.starts_with("fpr,tpr,gamma\n"));
    let md = fs::read_to_string(ws.path("out/evaluate/report.md")).unwrap();
    for row in ["LOSS Attack", "LiRA (Reference Model)", "Neighbour Attack"] {
        assert!(md.contains(row), "{md}");
    }
}

#[test]
fn reruns_are_byte_identical_and_skip_completed_stages() {
    let ws = Workspace::toy();
    let first = ws.run(&["attack", "neighbourhood"]);
    assert!(first.status.success(), "{}", stderr(&first));
    let scores = fs::read(ws.path("out/attack/neighbourhood.jsonl")).unwrap();

    let again = ws.run(&["attack", "neighbourhood"]);
    assert!(again.status.success());
    assert!(stderr(&again).contains("attack-neighbourhood: up to date"), "{}", stderr(&again));

    let forced = ws.run(&["attack", "neighbourhood", "--force"]);
    assert!(forced.status.success());
    assert!(!stderr(&forced).contains("up to date"));
    assert_eq!(fs::read(ws.path("out/attack/neighbourhood.jsonl")).unwrap(), scores);

    let fresh = ws.run(&["attack", "neighbourhood", "--out", ws.path("other").to_str().unwrap()]);
    assert!(fresh.status.success());
    assert_eq!(fs::read(ws.path("other/attack/neighbourhood.jsonl")).unwrap(), scores);

    // a different seed is a different configuration
    let reseeded = ws.run(&["split", "--seed", "8"]);
    assert!(reseeded.status.success());
    assert!(stderr(&reseeded).contains("split: running"), "{}", stderr(&reseeded));
}

#[test]
fn small_nonmember_sets_warn_about_fpr_resolution() {
    let ws = Workspace::new(json!({
        "dataset": {"path": "corpus.jsonl", "fractions": [0.4, 0.4, 0.2]},
        "neighbours": {"n": 10},
        "attacks": ["loss"],
        "fpr_targets": [0.0001]
    }));
    let out = ws.run(&["evaluate"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = read_json(&ws.path("out/evaluate/loss/report.json"));
    let row = &report["tpr_at"]["0.0001"];
    assert_eq!(row["achieved_fpr"], 0.0);
    assert!(row["warning"].as_str().unwrap().contains("insufficient nonmembers for target FPR"));
    assert!(report["warnings"][0].as_str().unwrap().contains("200 nonmembers"));
}

#[test]
fn ablation_writes_tables() {
    let ws = Workspace::toy();
    let out = ws.run(&["ablate", "--n", "2,5", "--m", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let md = fs::read_to_string(ws.path("out/ablate/ablation.md")).unwrap();
    assert!(md.contains("| #Neighbours | 2 | 5 |"), "{md}");
    assert!(md.contains("| 1% FPR |"));
    let table = read_json(&ws.path("out/ablate/ablation.json"));
    assert_eq!(table["cells"].as_array().unwrap().len(), 2);
}

#[test]
fn invalid_config_lists_every_problem() {
    let ws = Workspace::new(json!({
        "dataset": {"path": "missing.jsonl", "fractions": [0.0, 0.5, 0.5]},
        "oracle": {"kind": "builtin-ngram", "add_k": 0.0},
        "attacks": ["loss", "loss", "zlib"],
        "fpr_targets": [1.5]
    }));
    let out = ws.run(&["run"]);
    assert_eq!(out.status.code(), Some(2));
    let err = read_json(&ws.path("out/error.json"));
    assert_eq!(err["error"], "invalid_config");
    assert_eq!(err["command"], "run");
    let details: Vec<&str> = err["details"].as_array().unwrap().iter().map(|d| d.as_str().unwrap()).collect();
    for key in ["dataset.path", "dataset.fractions", "oracle.add_k", "attacks: \"loss\" listed twice", "attacks: unknown", "fpr_targets"] {
        assert!(details.iter().any(|d| d.starts_with(key)), "{key} not in {details:?}");
    }
}

#[test]
fn malformed_dataset_is_reported() {
    let ws = Workspace::toy();
    fs::write(ws.path("corpus.jsonl"), "{\"id\": \"a\", \"text\": \"x y\"}\nnot json\n").unwrap();
    let out = ws.run(&["split"]);
    assert_eq!(out.status.code(), Some(1));
    let err = read_json(&ws.path("out/error.json"));
    assert_eq!(err["error"], "dataset");
    assert!(err["message"].as_str().unwrap().contains("line 2"), "{err}");
}

/// Health route always; `/v1/loss` answers 500 so scoring fails.
fn broken_server() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}", listener.local_addr().unwrap());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let mut length = 0;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                if h.trim().is_empty() {
                    break;
                }
                if let Some(v) = h.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            let (status, body) = if line.contains("/v1/health") {
                (200, json!({"status": "ok", "target_model": "mock-lm", "substitution_model": "mock-mlm"}).to_string())
            } else {
                (500, "model crashed".to_string())
            };
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    endpoint
}

fn remote_workspace() -> Workspace {
    Workspace::new(json!({
        "dataset": {"path": "corpus.jsonl", "fractions": [0.4, 0.4, 0.2]},
        "oracle": {"kind": "remote", "endpoint": "http://127.0.0.1:9", "retries": 0},
        "attacks": ["loss"]
    }))
}

#[test]
fn server_check_honours_the_endpoint_override() {
    let endpoint = broken_server();
    let ws = remote_workspace();
    let out = ws.run_env(&["server-check"], &[("MIA_AUDIT_ENDPOINT", &endpoint)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let health: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(health["target"]["target_model"], "mock-lm");
    assert_eq!(health["target"]["endpoint"], endpoint.as_str());

    let unreachable = ws.run(&["server-check"]);
    assert_eq!(unreachable.status.code(), Some(1));
    assert_eq!(read_json(&ws.path("out/error.json"))["error"], "oracle");
}

#[test]
fn oracle_failure_keeps_completed_stages() {
    let endpoint = broken_server();
    let ws = remote_workspace();
    let out = ws.run_env(&["run"], &[("MIA_AUDIT_ENDPOINT", &endpoint)]);
    assert_eq!(out.status.code(), Some(1));
    let err = read_json(&ws.path("out/error.json"));
    assert_eq!(err["error"], "attack");
    assert!(err["message"].as_str().unwrap().contains("500"), "{err}");
    assert!(ws.path("out/.stamps/split").is_file());
    assert!(!ws.path("out/.stamps/attack-loss").exists());

    let rerun = ws.run_env(&["run"], &[("MIA_AUDIT_ENDPOINT", &endpoint)]);
    assert!(stderr(&rerun).contains("split: up to date"), "{}", stderr(&rerun));
}

#[test]
fn show_config_prints_defaults() {
    let out = Command::new(BIN).args(["show-config"]).env_remove("MIA_AUDIT_ENDPOINT").output().unwrap();
    assert!(out.status.success());
    let config: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(config["neighbours"]["n"], 100);
    assert_eq!(config["neighbours"]["dropout_p"], 0.7);
    assert_eq!(config["fpr_targets"], json!([0.01, 0.001, 0.0001]));
    assert_eq!(config["oracle"]["kind"], "builtin-ngram");
}
