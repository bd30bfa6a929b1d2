use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"{
  "synth": { "classes": 4, "posts_per_class": 60, "dim": 8 },
  "train": { "epochs": 2, "dim": 8, "heads": 2, "prompt_len": 2 },
  "gbdt_a": { "rounds": 20, "max_depth": 3, "min_leaf": 5, "learning_rate": 0.1, "feature_subsample": 0.8, "seed": 11 },
  "gbdt_b": { "rounds": 20, "max_depth": 2, "min_leaf": 5, "learning_rate": 0.1, "feature_subsample": 0.6, "seed": 23 }
}"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_protopop"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Small {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Small {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("config.json");
        std::fs::write(&config, SMALL).unwrap();
        Self {
            _dir: dir,
            root,
            config,
        }
    }

    fn at(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn ok(&self, out: &str, args: &[&str]) {
        let mut all = vec!["--config", s(&self.config), "--out"];
        let out = self.at(out);
        all.push(s(&out));
        all.extend_from_slice(args);
        ok(&all);
    }
}

fn error_line(out: &Output) -> String {
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "{stderr}");
    assert_eq!(out.status.code(), Some(2));
    lines[0].to_string()
}

#[test]
fn failures_are_one_line_with_a_kind() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let line = error_line(&run(&["--out", s(dir.path()), "stats", "--data", s(&missing)]));
    assert!(line.starts_with("error kind=missing_input msg=\""), "{line}");

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{ "bogus": 1 }"#).unwrap();
    let line = error_line(&run(&["--config", s(&bad), "--out", s(dir.path()), "gen-synth"]));
    assert!(line.starts_with("error kind=config"), "{line}");

    let line = error_line(&run(&["train-align"]));
    assert!(line.starts_with("error kind=usage"), "{line}");

    let out = Command::new(env!("CARGO_BIN_EXE_protopop"))
        .args(["--out", s(dir.path()), "gen-synth"])
        .env("PROTOPOP_THREADS", "zero")
        .output()
        .unwrap();
    assert!(error_line(&out).starts_with("error kind=config"));
}

#[test]
fn help_exits_cleanly() {
    assert!(run(&["--help"]).status.success());
    assert!(run(&["select", "--help"]).status.success());
}

#[test]
fn default_corpus_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let (data, stats) = (dir.path().join("data"), dir.path().join("stats"));
    ok(&["--out", s(&data), "gen-synth"]);
    ok(&["--out", s(&stats), "stats", "--data", s(&data)]);
    let v = json(&stats.join("stats.json"));
    assert_eq!(v["posts"], 2000);
    assert_eq!(v["title"]["posts"], 2000);
    for name in ["stats.txt", "title_words.svg", "tags_words.svg"] {
        assert!(stats.join(name).is_file(), "{name}");
    }
}

#[test]
fn pipeline_outputs_agree_and_echo_the_config() {
    let t = Small::new();
    let (data, protos, model, feat) = (t.at("data"), t.at("protos"), t.at("model"), t.at("feat"));
    t.ok("data", &["gen-synth"]);
    t.ok("protos", &["build-prototypes", "--data", s(&data)]);
    t.ok(
        "model",
        &["train-align", "--data", s(&data), "--prototypes", s(&protos)],
    );
    let ckpt = model.join("model.ppck");
    t.ok("feat", &["extract", "--data", s(&data), "--model", s(&ckpt)]);
    t.ok(
        "sel",
        &[
            "select",
            "--data",
            s(&data),
            "--model",
            s(&ckpt),
            "--ratio",
            "0.5",
            "--sweep",
            "0.5,1.0",
            "--features",
            s(&feat),
        ],
    );
    t.ok("gbdt", &["train-gbdt", "--data", s(&data), "--features", s(&feat)]);
    let selection = t.at("sel").join("selected_0.5.txt");
    t.ok(
        "half",
        &[
            "train-gbdt",
            "--data",
            s(&data),
            "--features",
            s(&feat),
            "--selection",
            s(&selection),
        ],
    );
    let (reg, val) = (t.at("gbdt").join("regressor.ppck"), feat.join("val.pfeat"));
    t.ok("pred", &["predict", "--regressor", s(&reg), "--features", s(&val)]);
    let csv = t.at("pred").join("predictions.csv");
    t.ok("eval", &["eval", "--data", s(&data), "--predictions", s(&csv)]);

    // the full-data sweep row is the plain fit, the half row the selected fit
    let sweep = json(&t.at("sel").join("sweep.json"));
    let full = json(&t.at("gbdt").join("scores.json"));
    let half = json(&t.at("half").join("scores.json"));
    assert_eq!(sweep[1]["score"], full["fused"]);
    assert_eq!(sweep[0]["score"], half["fused"]);
    assert_eq!(sweep[0]["train_rows"], half["train_rows"]);

    // eval recomputes the validation score of the fused predictor
    let metrics = json(&t.at("eval").join("metrics.json"));
    assert!((metrics["src"].as_f64().unwrap() - full["fused"]["src"].as_f64().unwrap()).abs() < 1e-12);

    let header = std::fs::read_to_string(&csv).unwrap();
    assert!(header.starts_with("post_id,prediction\n"));

    let expected = json(&t.at("data").join("config.json"));
    assert_eq!(expected["synth"]["posts_per_class"], 60);
    for out in ["data", "protos", "model", "feat", "sel", "gbdt", "pred", "eval"] {
        assert_eq!(json(&t.at(out).join("config.json")), expected, "{out}");
    }
}
