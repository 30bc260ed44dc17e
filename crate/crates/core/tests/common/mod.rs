#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use eqsae::probing::{GbtParams, LogregParams};
use eqsae::runner::{DataConfig, ExperimentConfig, SaeGridEntry, Scale, Schedule};
use eqsae::sae::SaeVariant;

/// A complete pipeline config small enough to run in seconds.
pub fn tiny_config(output_dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(Scale::Desk);
    cfg.output_dir = output_dir.to_path_buf();
    cfg.sae_grid = vec![
        SaeGridEntry { variant: SaeVariant::Regular, k: 8 },
        SaeGridEntry { variant: SaeVariant::Invariant, k: 8 },
    ];
    cfg.trunc_lengths = vec![8];
    cfg.data = DataConfig { n_train: 32, n_eval_orbits: 8, n_probe_images: 32 };
    let short = Schedule { epochs: 2, batch_size: 16, learning_rate: 1e-3 };
    cfg.base = short;
    cfg.fit_m = short;
    cfg.sae = short;
    cfg.probe.sae_ks = vec![8];
    cfg.probe.logreg = LogregParams { epochs: 5, ..LogregParams::default() };
    cfg.probe.gbt = GbtParams { rounds: 3, max_depth: 3, ..GbtParams::default() };
    cfg
}

/// Relative path → bytes of every file under `root/sub`.
pub fn snapshot(root: &Path, sub: &str) -> BTreeMap<PathBuf, Vec<u8>> {
    walkdir::WalkDir::new(root.join(sub))
        .sort_by_file_name()
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file())
        .map(|e| (e.path().strip_prefix(root).unwrap().to_path_buf(), std::fs::read(e.path()).unwrap()))
        .collect()
}

/// Files under `root` with extension `ext`, keyed by relative path.
pub fn files_with_ext(root: &Path, ext: &str) -> BTreeMap<PathBuf, Vec<u8>> {
    snapshot(root, "").into_iter().filter(|(p, _)| p.extension().is_some_and(|e| e == ext)).collect()
}

pub fn copy_tree(from: &Path, to: &Path) {
    for e in walkdir::WalkDir::new(from) {
        let e = e.unwrap();
        let dst = to.join(e.path().strip_prefix(from).unwrap());
        if e.file_type().is_dir() {
            std::fs::create_dir_all(&dst).unwrap();
        } else {
            std::fs::copy(e.path(), &dst).unwrap();
        }
    }
}
