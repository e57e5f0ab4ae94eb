use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn toy(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy").join(file)
}

fn mobagent(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mobagent"))
        .args(args)
        .env_remove("ARMOVE_API_KEY")
        .env_remove("ARMOVE_API_BASE")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mobagent(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn eval_needs_predictions_then_stages_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let cfg = toy("tokyo.toml");
    ok(&["ingest", "--config", s(&cfg), "--run-dir", s(&run), "--set", "grouping.stage=off"]);

    let out = mobagent(&["eval", "--run-dir", s(&run)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("predictions missing") && err.contains("`predict`"), "{err}");

    for stage in ["features", "optimize", "predict", "eval"] {
        ok(&[stage, "--run-dir", s(&run)]);
    }
    let report = ok(&["report", "--run-dir", s(&run)]);
    assert!(report.contains("published reference"), "{report}");
    assert!(run.join("metrics.json").is_file() && run.join("transcripts.jsonl").is_file());
}

#[test]
fn run_twice_gives_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy("moscow.toml");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["run", "--config", s(&cfg), "--run-dir", s(&a)]);
    ok(&["run", "--config", s(&cfg), "--run-dir", s(&b)]);
    assert_eq!(
        std::fs::read(a.join("metrics.json")).unwrap(),
        std::fs::read(b.join("metrics.json")).unwrap()
    );
    assert!(a.join("config.toml").is_file());
}

#[test]
fn iteration_ablation_writes_three_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ablation");
    let table = ok(&[
        "ablate",
        "--config",
        s(&toy("shanghai.toml")),
        "--sweep",
        "iterations",
        "--out",
        s(&out),
        "--set",
        "grouping.stage=off",
    ]);
    let mut dirs: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    dirs.sort();
    assert_eq!(dirs, ["FT+10", "FT+3", "FT+5"]);
    assert!(table.contains("FT+3") && table.contains("FT+10"), "{table}");
    let meta = std::fs::read_to_string(out.join("FT+3").join("run.json")).unwrap();
    assert!(meta.contains("\"iterations\": 3"), "{meta}");
}

#[test]
fn transfer_accepts_artifact_and_target_city() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("src");
    ok(&["run", "--config", s(&toy("tokyo.toml")), "--run-dir", s(&src)]);
    let artifact = tmp.path().join("tokyo.artifact.json");
    ok(&["export", "--run-dir", s(&src), "--out", s(&artifact)]);
    let out = ok(&[
        "transfer",
        "--artifact",
        s(&artifact),
        "--target-city",
        s(&toy("moscow.toml")),
        "--run-dir",
        s(&tmp.path().join("t")),
    ]);
    assert!(out.contains("tokyo -> moscow"), "{out}");
    let out = mobagent(&[
        "transfer",
        "--artifact",
        s(&artifact),
        "--target-city",
        s(&toy("tokyo.toml")),
        "--run-dir",
        s(&tmp.path().join("m")),
        "--mode",
        "model",
    ]);
    assert!(!out.status.success(), "model mode without a student must fail");
}

#[test]
fn invalid_config_exits_nonzero_with_field_messages() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mobagent(&[
        "run",
        "--config",
        s(&toy("tokyo.toml")),
        "--run-dir",
        s(&tmp.path().join("run")),
        "--set",
        "optimize.lambda=3",
        "--set",
        "model.backend=telepathy",
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("optimize.lambda") && err.contains("model.backend"), "{err}");
}

#[test]
fn live_mode_without_credentials_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mobagent(&[
        "run",
        "--config",
        s(&toy("tokyo.toml")),
        "--run-dir",
        s(&tmp.path().join("run")),
        "--set",
        "model.backend=live",
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("ARMOVE_API_BASE is not set"), "{err}");
}
