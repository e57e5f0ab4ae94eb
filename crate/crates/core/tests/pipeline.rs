mod common;

use std::collections::BTreeMap;
use std::fs;

use mobagent_core::experiment::{ExperimentConfig, Pipeline};
use mobagent_core::predictor::FeaturePlan;
use mobagent_core::rundir::{self, RunMeta};
use mobagent_core::transfer::{export_artifact, TransferArtifact, UserTransferOutcome, NEWCOMER_GROUP};
use mobagent_core::{toy, Error};

#[test]
fn toy_generator_reproduces_committed_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    toy::write_toy_data(tmp.path()).unwrap();
    let mut compared = 0;
    for entry in walk(tmp.path()) {
        let rel = entry.strip_prefix(tmp.path()).unwrap();
        let committed = fs::read(common::toy_dir().join(rel)).unwrap_or_else(|_| panic!("{} not committed", rel.display()));
        assert!(fs::read(&entry).unwrap() == committed, "{} differs from the committed copy", rel.display());
        compared += 1;
    }
    assert_eq!(compared, 4 * 3 + 3);
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn artifact_export_is_stable_and_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let p = common::hermetic(common::toy_config("saopaulo", &[]), &tmp.path().join("run"));
    p.run().unwrap();
    let a = export_artifact(&p.dir).unwrap();
    let first = fs::read(p.dir.path(rundir::ARTIFACT)).unwrap();
    let b = export_artifact(&p.dir).unwrap();
    assert_eq!(first, fs::read(p.dir.path(rundir::ARTIFACT)).unwrap());
    assert_eq!(a, b);

    let loaded = TransferArtifact::load(&p.dir.path(rundir::ARTIFACT)).unwrap();
    assert_eq!(loaded.to_text().unwrap().as_bytes(), &first[..]);
    assert_eq!(loaded.metadata.iterations, 5);
    assert_eq!(loaded.source_cities, vec!["saopaulo".to_string()]);
    assert!(!loaded.groups.is_empty(), "grouped run exports its groups");
    let meta: RunMeta = p.dir.read(rundir::RUN_META, "run metadata", "ingest").unwrap();
    assert_eq!(meta.iterations, 5);
}

#[test]
fn export_of_incomplete_run_lists_missing_files() {
    let tmp = tempfile::tempdir().unwrap();
    let p = common::hermetic(common::toy_config("tokyo", &[]), &tmp.path().join("run"));
    p.ingest().unwrap();
    match export_artifact(&p.dir) {
        Err(Error::IncompleteRun(missing)) => {
            let text = missing.join(" ");
            assert!(text.contains(rundir::WEIGHTS) && text.contains("`optimize`"), "{text}");
        }
        other => panic!("expected IncompleteRun, got {other:?}"),
    }
}

#[test]
fn grouping_off_runs_without_groups() {
    let tmp = tempfile::tempdir().unwrap();
    let p = common::hermetic(common::toy_config("tokyo", &[("grouping.stage", "off")]), &tmp.path().join("run"));
    p.run().unwrap();
    let plan: FeaturePlan = p.dir.read(rundir::PLAN, "plan", "optimize").unwrap();
    assert!(plan.groups.is_empty() && plan.user_groups.is_empty());
    assert!(plan.default.group_label.is_none());
    assert!(!p.dir.has(rundir::GROUPS));
}

#[test]
fn exhausted_backend_keeps_partial_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let f = empty.to_string_lossy().to_string();
    let cfg = common::toy_config("tokyo", &[("model.backend", "replay"), ("model.fixture", &f)]);
    let p = common::hermetic(cfg, &tmp.path().join("run"));
    let err = p.run().unwrap_err();
    assert!(matches!(err, Error::BackendExhausted(_)), "{err}");
    for name in [rundir::CONFIG, rundir::CORPUS, rundir::SAMPLES, rundir::BASE_REGISTRY, rundir::FEATURES, rundir::TRANSCRIPTS] {
        assert!(p.dir.has(name), "{name} should survive a mid-run failure");
    }
    assert!(!p.dir.has(rundir::METRICS));
}

#[test]
fn invalid_config_reports_every_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::toy_config(
        "tokyo",
        &[("optimize.lambda", "1.5"), ("grouping.stage", "L3"), ("optimize.variant", "FS-X"), ("data.split", "[7, 0, 2]")],
    );
    let err = Pipeline::open(cfg, tmp.path().join("run")).err().expect("validation must fail");
    let Error::Config(fields) = &err else { panic!("expected a config error, got {err}") };
    let text = fields.join("\n");
    for key in ["optimize.lambda", "grouping.stage", "optimize.variant", "data.split"] {
        assert!(text.contains(key), "{key} missing from:\n{text}");
    }
    assert!(!tmp.path().join("run").exists(), "nothing is written for an invalid config");
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "city = \"x\"\ncolour = 1\n").unwrap();
    assert!(ExperimentConfig::load(&path, &[]).is_err());
}

#[test]
fn user_transfer_keeps_existing_plan_entries() {
    let tmp = tempfile::tempdir().unwrap();
    let src = common::hermetic(common::toy_config("tokyo", &[("data.max_users", "7")]), &tmp.path().join("src"));
    src.run().unwrap();
    let art = export_artifact(&src.dir).unwrap();
    let p = common::hermetic(common::toy_config("tokyo", &[]), &tmp.path().join("users"));
    let run = p.transfer_users(&art, 2).unwrap();
    let outcome: UserTransferOutcome = p.dir.read(rundir::USER_TRANSFER, "user transfer", "transfer").unwrap();
    assert_eq!(outcome.removed.len(), 2);
    assert_eq!(outcome.added.len(), 2);
    assert_eq!(outcome.users.len(), 7);
    for u in &outcome.added {
        assert!(!art.source_users.contains(u), "{u} was already a source user");
        let key = &outcome.plan.user_groups[u];
        assert!(key.ends_with("#transfer") || key == NEWCOMER_GROUP, "{u} -> {key}");
    }
    let kept: BTreeMap<_, _> = art.plan.user_groups.iter().filter(|(u, _)| !outcome.removed.contains(u)).collect();
    for (u, g) in kept {
        assert_eq!(&outcome.plan.user_groups[u], g);
        assert_eq!(outcome.plan.groups[g], art.plan.groups[g], "entry for kept group {g} changed");
    }
    assert!(run.metrics.n_samples > 0);
}

#[test]
fn fused_corpus_namespaces_users() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::load(&common::toy_dir().join("fused.toml"), &[]).unwrap();
    let p = common::hermetic(cfg, &tmp.path().join("run"));
    let report = p.ingest().unwrap();
    let corpus: mobagent_core::corpus::Corpus = p.dir.read(rundir::CORPUS, "corpus", "ingest").unwrap();
    assert_eq!(corpus.user_count(), 20);
    assert!(corpus.users.keys().all(|u| u.contains(':')));
    let cities: std::collections::BTreeSet<&str> = corpus.users.keys().map(|u| u.split(':').next().unwrap()).collect();
    assert_eq!(cities.len(), 4, "{report:?}");
}
