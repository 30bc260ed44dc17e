mod common;

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use common::{copy_tree, files_with_ext, snapshot, tiny_config};
use eqsae::runner::report::ReportSummary;
use eqsae::runner::{Command, ExperimentConfig, Runner, Scale, Stage};
use eqsae::Error;
use tempfile::TempDir;

/// One finished tiny run shared by the read-only tests.
fn reference() -> &'static Path {
    static DIR: OnceLock<TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        Runner::new(tiny_config(dir.path()), 1).unwrap().run(Command::All).unwrap();
        dir
    })
    .path()
}

fn runner_at(root: &Path, parallelism: usize) -> Runner {
    Runner::new(tiny_config(root), parallelism).unwrap()
}

/// Everything a run produces apart from its bookkeeping.
fn outputs(root: &Path) -> std::collections::BTreeMap<PathBuf, Vec<u8>> {
    let mut all = snapshot(root, "");
    all.retain(|p, _| !p.starts_with("stages") && p != Path::new("manifest.json"));
    all
}

fn copy_of_reference() -> TempDir {
    let dir = TempDir::new().unwrap();
    copy_tree(reference(), dir.path());
    dir
}

#[test]
fn full_run_writes_every_artifact() {
    let root = reference();
    for f in [
        "data/train.etns",
        "base/mlp/manifest.json",
        "base/cnn/manifest.json",
        "m/mlp/M.etns",
        "m/cnn/fit_report.json",
        "sae/cnn/regular-k8/manifest.json",
        "sae/cnn/invariant-k8/manifest.json",
        "probe/cnn/results.csv",
        "probe/cnn/aggregate.csv",
        "probe/cnn/failures.json",
        "probe/cnn/imbalance.csv",
        "report/m_fit.csv",
        "report/sae_metrics.csv",
        "report/dictionary_summary.csv",
        "report/dictionary_cnn_k8.svg",
        "report/frontier_cnn.svg",
        "report/probe_cnn_k8_t8.svg",
        "report/summary.json",
        "manifest.json",
    ] {
        assert!(root.join(f).is_file(), "missing {f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(root.join("manifest.json")).unwrap()).unwrap();
    let stages = manifest["stages"].as_array().unwrap();
    // gen-data, 2 bases, 2 M fits, 2 SAEs, 1 probe, 1 report.
    assert_eq!(stages.len(), 9);
    assert!(stages.iter().all(|s| s["wall_clock_s"].as_f64().unwrap() >= 0.0 && !s["outputs"].as_array().unwrap().is_empty()));

    let results = std::fs::read_to_string(root.join("probe/cnn/results.csv")).unwrap();
    let header = results.lines().next().unwrap();
    assert_eq!(header, eqsae::probing::RESULTS_HEADER.join(","));
    // 180 tasks × 5 cells × 3 probes; a cell whose training split has one class is reported instead.
    let failures: Vec<serde_json::Value> = serde_json::from_slice(&std::fs::read(root.join("probe/cnn/failures.json")).unwrap()).unwrap();
    assert_eq!(results.lines().count() - 1 + 3 * failures.len(), 180 * 15);
}

#[test]
fn chart_marks_carry_the_csv_values() {
    let root = reference().join("report");
    let read_csv = |name: &str| -> Vec<Vec<String>> {
        let mut r = csv::Reader::from_path(root.join(name)).unwrap();
        r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
    };
    let marks = |name: &str, tag: &str, attrs: &[&str]| -> Vec<Vec<String>> {
        let text = std::fs::read_to_string(root.join(name)).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap();
        doc.descendants()
            .filter(|n| n.has_tag_name(tag) && n.attribute(attrs[0]).is_some())
            .map(|n| attrs.iter().map(|a| n.attribute(*a).unwrap().to_string()).collect())
            .collect()
    };

    let bars = marks("probe_cnn_k8_t8.svg", "rect", &["data-group", "data-series", "data-value"]);
    let mut rows = read_csv("probe_cnn_k8_t8.csv");
    assert!(!rows.is_empty());
    let mut sorted_bars = bars.clone();
    sorted_bars.sort();
    rows.sort();
    assert_eq!(sorted_bars, rows);

    let points = marks("frontier_cnn.svg", "circle", &["data-series", "data-label", "data-x", "data-y"]);
    assert_eq!(points, read_csv("frontier_cnn.csv"));
    // regular, invariant and the invariant SAE decoded through M.
    assert_eq!(points.len(), 3);

    let bins = marks("dictionary_cnn_k8.svg", "rect", &["data-lo", "data-hi", "data-count"]);
    assert_eq!(bins, read_csv("dictionary_cnn_k8.csv"));
    assert_eq!(bins.len(), 20);

    let summary = ReportSummary::load(&root).unwrap();
    let counted: usize = summary.dictionary[0].histogram.iter().map(|b| b.2).sum();
    let d = &summary.dictionary[0];
    assert_eq!(counted, d.invariant + d.equivariant);
    assert_eq!(d.invariant + d.equivariant + d.dead, eqsae::sae::SaeVariant::Invariant.n_latents());
}

#[test]
fn rerun_without_changes_is_fully_cached() {
    let dir = copy_of_reference();
    let before = outputs(dir.path());
    let records = runner_at(dir.path(), 1).run(Command::All).unwrap();
    assert_eq!(records.len(), 9);
    assert!(records.iter().all(|r| r.cache_hit), "{:?}", records.iter().filter(|r| !r.cache_hit).map(|r| &r.unit).collect::<Vec<_>>());
    assert!(records.iter().all(|r| r.compute_s.is_some()));
    assert_eq!(outputs(dir.path()), before);
    let manifest = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    assert_eq!(manifest.matches("\"cache_hit\": true").count(), 9);
}

#[test]
fn stage_order_and_parallelism_do_not_change_outputs() {
    let dir = TempDir::new().unwrap();
    let runner = runner_at(dir.path(), 3);
    for c in [Command::GenData, Command::TrainBase, Command::TrainSae, Command::FitM, Command::Probe, Command::Report] {
        runner.run(c).unwrap();
    }
    let (got, want) = (outputs(dir.path()), outputs(reference()));
    assert_eq!(got.keys().collect::<Vec<_>>(), want.keys().collect::<Vec<_>>());
    for (path, bytes) in &want {
        assert!(got[path] == *bytes, "{} differs", path.display());
    }
}

#[test]
fn deleted_downstream_artifacts_regenerate_identically() {
    let dir = copy_of_reference();
    std::fs::remove_file(dir.path().join("probe/cnn/results.csv")).unwrap();
    std::fs::remove_dir_all(dir.path().join("report")).unwrap();
    let records = runner_at(dir.path(), 1).run(Command::All).unwrap();
    for r in &records {
        let recomputed = matches!(r.stage, Stage::Probe | Stage::Report);
        assert_eq!(r.cache_hit, !recomputed, "{:?} {}", r.stage, r.unit);
    }
    assert_eq!(files_with_ext(dir.path(), "csv"), files_with_ext(reference(), "csv"));
    assert_eq!(outputs(dir.path()), outputs(reference()));
}

#[test]
fn missing_upstream_stages_are_named() {
    let dir = TempDir::new().unwrap();
    let runner = runner_at(dir.path(), 1);
    let missing = |e: Error| match e {
        Error::MissingStage { missing, .. } => missing,
        other => panic!("expected a missing-stage error, got {other}"),
    };
    assert_eq!(missing(runner.run(Command::Probe).unwrap_err()), "gen-data");
    runner.run(Command::GenData).unwrap();
    assert_eq!(missing(runner.run(Command::TrainSae).unwrap_err()), "train-base");
    assert_eq!(missing(runner.run(Command::FitM).unwrap_err()), "train-base");
    assert_eq!(missing(runner.run(Command::Report).unwrap_err()), "train-base");

    let copy = copy_of_reference();
    std::fs::remove_file(copy.path().join("m/cnn/M.etns")).unwrap();
    assert_eq!(missing(runner_at(copy.path(), 1).run(Command::Probe).unwrap_err()), "fit-m");
    std::fs::remove_dir_all(copy.path().join("sae/cnn/invariant-k8")).unwrap();
    assert_eq!(missing(runner_at(copy.path(), 1).run(Command::Report).unwrap_err()), "fit-m");
}

#[test]
fn upstream_change_invalidates_downstream_cache() {
    let dir = copy_of_reference();
    let mut cfg = tiny_config(dir.path());
    cfg.sae.learning_rate = 2e-3;
    let records = Runner::new(cfg, 1).unwrap().run(Command::All).unwrap();
    for r in &records {
        let recomputed = matches!(r.stage, Stage::TrainSae | Stage::Probe | Stage::Report);
        assert_eq!(r.cache_hit, !recomputed, "{:?} {}", r.stage, r.unit);
    }
}

#[test]
fn shipped_configs_equal_the_presets() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for (file, scale) in [("desk.json", Scale::Desk), ("paper.json", Scale::Paper)] {
        assert_eq!(ExperimentConfig::load(&configs.join(file)).unwrap(), ExperimentConfig::preset(scale), "{file}");
    }
}
