use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SPEC: &str = r#"
seed = 3
source_docs = 2
train_docs = 3
test_docs = 3
"#;

fn ccoref(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccoref"))
        .args(args)
        .arg("--quiet")
        .output()
        .expect("spawn ccoref")
}

fn ok(args: &[&str]) {
    let out = ccoref(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn synth(dir: &Path) -> String {
    let spec = dir.join("spec.toml");
    fs::write(&spec, SPEC).unwrap();
    ok(&["synth", spec.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    dir.join("run.toml").to_str().unwrap().to_owned()
}

#[test]
fn synth_writes_corpus_lexicons_and_vocab() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    for f in ["run.toml", "source.jsonl", "train.jsonl", "test.jsonl", "vocab.txt", "i2b2.lex", "umls.lex"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let train = fs::read_to_string(dir.path().join("train.jsonl")).unwrap();
    assert_eq!(train.lines().count(), 3);
}

#[test]
fn full_pipeline_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth(dir.path());
    let run = dir.path().join("run");
    ok(&["train", &config]);
    for f in ["model.ckpt", "loss_log.csv", "phase-source.ckpt", "phase-target.ckpt"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    ok(&["evaluate", &config]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(run.join("report.json")).unwrap()).unwrap();
    assert!(report.is_object());
    assert!(run.join("report.csv").is_file());
    let preds = run.join("predictions.jsonl");
    assert_eq!(fs::read_to_string(&preds).unwrap().lines().count(), 3);

    let rescored = dir.path().join("rescored");
    ok(&[
        "evaluate",
        "--config",
        &config,
        "--predictions",
        preds.to_str().unwrap(),
        "--out",
        rescored.to_str().unwrap(),
    ]);
    assert_eq!(
        fs::read(run.join("report.json")).unwrap(),
        fs::read(rescored.join("report.json")).unwrap()
    );

    ok(&["project", &config, run.join("model.ckpt").to_str().unwrap()]);
    let table = fs::read_to_string(run.join("projection.csv")).unwrap();
    assert!(table.lines().count() > 1);
    assert!(run.join("projection_summary.json").is_file());
}

#[test]
fn gradcheck_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth(dir.path());
    let out = dir.path().join("gc");
    ok(&["gradcheck", &config, "--out", out.to_str().unwrap()]);
    let csv = fs::read_to_string(out.join("gradcheck.csv")).unwrap();
    assert!(csv.lines().count() > 1);
}

#[test]
fn failures_exit_nonzero_with_diagnostic() {
    let out = ccoref(&["train", "/nonexistent/run.toml"]);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());

    let out = ccoref(&["train", "--no-such-flag"]);
    assert!(!out.status.success());

    let out = ccoref(&["evaluate"]);
    assert!(!out.status.success());
}

#[test]
fn seed_flag_changes_synthetic_corpus() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&["synth", "--out", a.path().to_str().unwrap(), "--seed", "1"]);
    ok(&["synth", "--out", b.path().to_str().unwrap(), "--seed", "2"]);
    let read = |d: &Path| fs::read(d.join("train.jsonl")).unwrap();
    assert_ne!(read(a.path()), read(b.path()));
}
