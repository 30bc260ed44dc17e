//! Config-driven pipeline: data, base models, `M`, SAEs, probes and reports.
//!
//! Every stage unit (one base kind, one SAE grid entry, ...) writes into its own
//! directory under the output root and leaves a record in `stages/`. A record keys
//! the unit by its parameters and the checksums of its inputs, so re-running with
//! an unchanged config is a cache hit. `manifest.json` collects all records.

pub mod report;
pub mod svg;

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::base_models::{build_base, load_base, save_base, train_base, BaseAutoencoder, BaseKind, BaseTrainConfig};
use crate::dataset::{enumerate_tasks, expand_orbits, generate_dataset, load_dataset, save_dataset, stack_pixels, Augment, GROUP_ORDER};
use crate::equivariance::{equivariant_reconstruct_batch, fit_m, FitConfig, TransformMatrix};
use crate::error::{Error, Result};
use crate::probing::{
    negative_shares, orbit_split, run_task_suite, write_aggregate_csv, write_imbalance_csv, write_results_csv, GbtParams,
    LogregParams, Probe, SaeFeatures, SparseLatents, SuiteInput,
};
use crate::sae::{activation_orbits, load_sae, save_sae, train_sae_on_orbits, SaeModel, SaeTrainConfig, SaeVariant};
use crate::util::{derive_seed, file_sha256, read_json, sha256_hex, write_json};

pub const CONFIG_SCHEMA: &str = "eqsae-config/1";
pub const MANIFEST_SCHEMA: &str = "eqsae-run/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Paper,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            other => Err(Error::Config(format!("unknown scale `{other}` (expected desk or paper)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaeGridEntry {
    pub variant: SaeVariant,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Canonical training layouts; base training rotates them, M and SAEs see full orbits.
    pub n_train: usize,
    /// Held-out orbits for R², splice loss, L1 and the invariance ratio.
    pub n_eval_orbits: usize,
    /// Canonical probe layouts, expanded to all four rotations.
    pub n_probe_images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeStageConfig {
    pub base_kinds: Vec<BaseKind>,
    pub sae_ks: Vec<usize>,
    pub variants: Vec<SaeVariant>,
    pub probes: Vec<Probe>,
    pub test_fraction: f64,
    pub logreg: LogregParams,
    pub gbt: GbtParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub similarity_threshold: f64,
    pub histogram_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub seed: u64,
    pub scale: Scale,
    pub output_dir: PathBuf,
    pub base_kinds: Vec<BaseKind>,
    /// Base models whose activations get the SAE grid.
    pub sae_base_kinds: Vec<BaseKind>,
    pub sae_grid: Vec<SaeGridEntry>,
    pub trunc_lengths: Vec<usize>,
    pub data: DataConfig,
    pub base: Schedule,
    pub fit_m: Schedule,
    pub sae: Schedule,
    pub probe: ProbeStageConfig,
    pub report: ReportConfig,
}

impl ExperimentConfig {
    pub fn preset(scale: Scale) -> Self {
        let ks = [8, 16, 32];
        let sae_grid = SaeVariant::ALL.iter().flat_map(|&variant| ks.iter().map(move |&k| SaeGridEntry { variant, k })).collect();
        let adam = |epochs| Schedule { epochs, batch_size: 64, learning_rate: 1e-3 };
        let both = vec![BaseKind::Mlp, BaseKind::Cnn];
        let probe = |base_kinds, sae_ks, variants| ProbeStageConfig {
            base_kinds,
            sae_ks,
            variants,
            probes: Probe::ALL.to_vec(),
            test_fraction: 0.25,
            logreg: LogregParams::default(),
            gbt: GbtParams::default(),
        };
        let report = ReportConfig { similarity_threshold: 0.9, histogram_bins: 20 };
        match scale {
            Scale::Desk => Self {
                schema: CONFIG_SCHEMA.into(),
                seed: 0,
                scale,
                output_dir: PathBuf::from("runs/desk"),
                base_kinds: both,
                sae_base_kinds: vec![BaseKind::Cnn],
                sae_grid,
                trunc_lengths: vec![32],
                data: DataConfig { n_train: 2000, n_eval_orbits: 256, n_probe_images: 1024 },
                base: adam(100),
                fit_m: adam(150),
                sae: adam(100),
                probe: probe(vec![BaseKind::Cnn], vec![16], vec![SaeVariant::Regular, SaeVariant::Invariant]),
                report,
            },
            Scale::Paper => Self {
                schema: CONFIG_SCHEMA.into(),
                seed: 0,
                scale,
                output_dir: PathBuf::from("runs/paper"),
                base_kinds: both.clone(),
                sae_base_kinds: both.clone(),
                sae_grid,
                trunc_lengths: vec![8, 32],
                data: DataConfig { n_train: 10_000, n_eval_orbits: 256, n_probe_images: 1024 },
                base: adam(100),
                fit_m: adam(150),
                sae: adam(500),
                probe: probe(both, ks.to_vec(), SaeVariant::ALL.to_vec()),
                report,
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.schema != CONFIG_SCHEMA {
            return fail(format!("schema `{}`, expected `{CONFIG_SCHEMA}`", self.schema));
        }
        if self.base_kinds.is_empty() {
            return fail("base_kinds is empty".into());
        }
        for k in self.sae_base_kinds.iter().chain(&self.probe.base_kinds) {
            if !self.base_kinds.contains(k) {
                return fail(format!("{k} is not listed in base_kinds"));
            }
        }
        for k in &self.probe.base_kinds {
            if !self.sae_base_kinds.contains(k) {
                return fail(format!("probing {k} needs it in sae_base_kinds"));
            }
        }
        for e in &self.sae_grid {
            if e.k == 0 || e.k > e.variant.n_latents() {
                return fail(format!("K={} outside 1..={} for {}", e.k, e.variant.n_latents(), e.variant));
            }
        }
        for &k in &self.probe.sae_ks {
            for &variant in &self.probe.variants {
                if !self.sae_grid.contains(&SaeGridEntry { variant, k }) {
                    return fail(format!("probe grid needs ({variant}, K={k}) in sae_grid"));
                }
            }
        }
        if self.trunc_lengths.is_empty() || self.trunc_lengths.iter().any(|&l| l == 0) {
            return fail("trunc_lengths must be non-empty and positive".into());
        }
        let d = &self.data;
        if d.n_train == 0 || d.n_eval_orbits < 2 || d.n_probe_images < 2 {
            return fail(format!("dataset sizes too small: {d:?}"));
        }
        if !(self.probe.test_fraction > 0.0 && self.probe.test_fraction < 1.0) {
            return fail("probe.test_fraction must lie in (0, 1)".into());
        }
        for (name, s) in [("base", self.base), ("fit_m", self.fit_m), ("sae", self.sae)] {
            if s.batch_size == 0 || !(s.learning_rate > 0.0) {
                return fail(format!("{name}: batch_size and learning_rate must be positive"));
            }
        }
        if self.report.histogram_bins == 0 {
            return fail("report.histogram_bins must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    GenData,
    TrainBase,
    FitM,
    TrainSae,
    Probe,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::TrainBase => "train-base",
            Stage::FitM => "fit-m",
            Stage::TrainSae => "train-sae",
            Stage::Probe => "probe",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenData,
    TrainBase,
    FitM,
    TrainSae,
    Probe,
    Report,
    All,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub unit: String,
    pub key: String,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    /// Time spent by this invocation, including cache checks.
    pub wall_clock_s: f64,
    pub cache_hit: bool,
    /// Time the run that produced the outputs spent computing them.
    #[serde(default)]
    pub compute_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub config: ExperimentConfig,
    pub stages: Vec<StageRecord>,
}

pub fn sae_unit(kind: BaseKind, e: SaeGridEntry) -> String {
    format!("{kind}-{}-k{}", e.variant, e.k)
}

pub struct Runner {
    pub config: ExperimentConfig,
    root: PathBuf,
    parallelism: usize,
    verbose: bool,
}

impl Runner {
    pub fn new(config: ExperimentConfig, stage_parallelism: usize) -> Result<Self> {
        config.validate()?;
        let root = config.output_dir.clone();
        Ok(Self { config, root, parallelism: stage_parallelism.max(1), verbose: false })
    }

    pub fn verbose(mut self, on: bool) -> Self {
        self.verbose = on;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    pub fn run(&self, command: Command) -> Result<Vec<StageRecord>> {
        let records = match command {
            Command::GenData => vec![self.gen_data()?],
            Command::TrainBase => self.train_base()?,
            Command::FitM => self.fit_m()?,
            Command::TrainSae => self.train_sae()?,
            Command::Probe => self.probe()?,
            Command::Report => vec![self.report()?],
            Command::All => {
                let mut r = vec![self.gen_data()?];
                r.extend(self.train_base()?);
                r.extend(self.fit_m_and_train_sae()?);
                r.extend(self.probe()?);
                r.push(self.report()?);
                r
            }
        };
        self.write_manifest()?;
        Ok(records)
    }

    // -- stage records -----------------------------------------------------

    fn record_path(&self, stage: Stage, unit: &str) -> PathBuf {
        self.root.join("stages").join(format!("{}__{unit}.json", stage.name()))
    }

    pub fn record(&self, stage: Stage, unit: &str) -> Option<StageRecord> {
        read_json(&self.record_path(stage, unit)).ok()
    }

    /// Upstream record that `stage` depends on, with its outputs still on disk.
    fn require(&self, stage: Stage, upstream: Stage, unit: &str) -> Result<StageRecord> {
        let missing = |detail: String| Error::MissingStage { stage: stage.name().into(), missing: upstream.name().into(), detail };
        let rec = self.record(upstream, unit).ok_or_else(|| missing(format!("no `{unit}` output under {}", self.root.display())))?;
        for a in &rec.outputs {
            if !self.root.join(&a.path).is_file() {
                return Err(missing(format!("artifact {} was removed", a.path)));
            }
        }
        Ok(rec)
    }

    fn outputs_intact(&self, rec: &StageRecord) -> bool {
        !rec.outputs.is_empty()
            && rec.outputs.iter().all(|a| file_sha256(&self.root.join(&a.path)).map(|h| h == a.sha256).unwrap_or(false))
    }

    /// Runs `body` into a fresh `out_dir` unless an identical run already produced it.
    fn run_unit(
        &self,
        stage: Stage,
        unit: &str,
        params: serde_json::Value,
        inputs: Vec<Artifact>,
        out_dir: &str,
        body: impl FnOnce(&Path) -> Result<()>,
    ) -> Result<StageRecord> {
        let key_src = json!({ "stage": stage, "unit": unit, "params": params, "inputs": inputs });
        let key = sha256_hex(key_src.to_string().as_bytes());
        let rec_path = self.record_path(stage, unit);
        let start = Instant::now();
        if let Some(rec) = self.record(stage, unit) {
            if rec.key == key && self.outputs_intact(&rec) {
                let compute_s = rec.compute_s.or((!rec.cache_hit).then_some(rec.wall_clock_s));
                let hit = StageRecord { cache_hit: true, wall_clock_s: start.elapsed().as_secs_f64(), compute_s, ..rec };
                write_json(&rec_path, &hit)?;
                self.log(format!("[{}:{unit}] cached", stage.name()));
                return Ok(hit);
            }
        }
        self.log(format!("[{}:{unit}] running", stage.name()));
        let dir = self.root.join(out_dir);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        body(&dir).map_err(|e| Error::Stage { stage: format!("{}:{unit}", stage.name()), source: Box::new(e) })?;
        let mut outputs = Vec::new();
        for entry in walkdir::WalkDir::new(&dir).sort_by_file_name() {
            let entry = entry.map_err(|e| Error::io(&dir, e.into()))?;
            if entry.file_type().is_file() {
                let rel = entry.path().strip_prefix(&self.root).expect("unit dirs live under the root");
                let path = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                outputs.push(Artifact { path, sha256: file_sha256(entry.path())? });
            }
        }
        let elapsed = start.elapsed().as_secs_f64();
        let rec = StageRecord {
            stage,
            unit: unit.into(),
            key,
            inputs,
            outputs,
            wall_clock_s: elapsed,
            cache_hit: false,
            compute_s: Some(elapsed),
        };
        write_json(&rec_path, &rec)?;
        self.log(format!("[{}:{unit}] done in {:.1}s", stage.name(), rec.wall_clock_s));
        Ok(rec)
    }

    /// Runs `f` over `items` on up to `stage_parallelism` threads; results keep item order.
    fn run_parallel<I: Sync, T: Send>(&self, items: &[I], f: impl Fn(&I) -> Result<T> + Sync) -> Result<Vec<T>> {
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<T>>>> = items.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..self.parallelism.min(items.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= items.len() {
                        break;
                    }
                    let r = f(&items[i]);
                    *slots[i].lock().expect("no worker panics while holding a slot") = Some(r);
                });
            }
        });
        slots.into_iter().map(|s| s.into_inner().expect("slot lock").expect("every item ran")).collect()
    }

    pub fn manifest(&self) -> Result<RunManifest> {
        let mut stages = Vec::new();
        let dir = self.root.join("stages");
        if dir.is_dir() {
            for entry in walkdir::WalkDir::new(&dir).min_depth(1).max_depth(1).sort_by_file_name() {
                let entry = entry.map_err(|e| Error::io(&dir, e.into()))?;
                stages.push(read_json::<StageRecord>(entry.path())?);
            }
        }
        Ok(RunManifest { schema: MANIFEST_SCHEMA.into(), config: self.config.clone(), stages })
    }

    fn write_manifest(&self) -> Result<()> {
        let manifest = self.manifest()?;
        let tmp = self.root.join(format!(".manifest.{}.tmp", std::process::id()));
        write_json(&tmp, &manifest)?;
        let dst = self.root.join("manifest.json");
        std::fs::rename(&tmp, &dst).map_err(|e| Error::io(&dst, e))
    }

    // -- stages --------------------------------------------------------------

    pub fn gen_data(&self) -> Result<StageRecord> {
        let seed = self.config.seed;
        let d = self.config.data;
        let params = json!({ "seed": seed, "data": d });
        self.run_unit(Stage::GenData, "all", params, Vec::new(), "data", |dir| {
            let sets = [
                ("train", d.n_train, Augment::None),
                ("eval", d.n_eval_orbits, Augment::AllRotations),
                ("probe", d.n_probe_images, Augment::AllRotations),
            ];
            for (stem, n, augment) in sets {
                let s = derive_seed(seed, &["gen-data", stem]);
                save_dataset(dir, stem, &generate_dataset(n, s, augment)?, s, augment)?;
            }
            Ok(())
        })
    }

    fn data_inputs(&self, stage: Stage, stems: &[&str]) -> Result<Vec<Artifact>> {
        let rec = self.require(stage, Stage::GenData, "all")?;
        Ok(rec.outputs.into_iter().filter(|a| stems.iter().any(|s| a.path.starts_with(&format!("data/{s}.")))).collect())
    }

    fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    fn base_dir(&self, kind: BaseKind) -> PathBuf {
        self.root.join("base").join(kind.to_string())
    }

    fn m_dir(&self, kind: BaseKind) -> PathBuf {
        self.root.join("m").join(kind.to_string())
    }

    fn sae_dir(&self, kind: BaseKind, e: SaeGridEntry) -> PathBuf {
        self.root.join("sae").join(kind.to_string()).join(format!("{}-k{}", e.variant, e.k))
    }

    fn probe_dir(&self, kind: BaseKind) -> PathBuf {
        self.root.join("probe").join(kind.to_string())
    }

    pub fn load_base(&self, kind: BaseKind) -> Result<BaseAutoencoder<f32>> {
        Ok(load_base(&self.base_dir(kind))?.0)
    }

    pub fn load_m(&self, kind: BaseKind) -> Result<TransformMatrix<f32>> {
        TransformMatrix::load(&self.m_dir(kind).join("M.etns"))
    }

    pub fn load_sae(&self, kind: BaseKind, e: SaeGridEntry) -> Result<SaeModel<f32>> {
        Ok(load_sae(&self.sae_dir(kind, e))?.0)
    }

    pub fn train_base(&self) -> Result<Vec<StageRecord>> {
        let inputs = self.data_inputs(Stage::TrainBase, &["train"])?;
        self.run_parallel(&self.config.base_kinds, |&kind| {
            let seed = derive_seed(self.config.seed, &["train-base", &kind.to_string()]);
            let sched = self.config.base;
            let params = json!({ "kind": kind, "seed": seed, "schedule": sched });
            self.run_unit(Stage::TrainBase, &kind.to_string(), params, inputs.clone(), &format!("base/{kind}"), |dir| {
                let (train, _) = load_dataset(&self.data_dir(), "train")?;
                let mut model = build_base::<f32>(kind, seed);
                let cfg = BaseTrainConfig {
                    epochs: sched.epochs,
                    n_samples: train.len(),
                    batch_size: sched.batch_size,
                    learning_rate: sched.learning_rate,
                    seed,
                    rotate_each_epoch: true,
                };
                let report = train_base(&mut model, &train, &cfg, |e, loss| {
                    if (e + 1) % 10 == 0 {
                        self.log(format!("  {kind} base epoch {:>3}: mse {loss:.5}", e + 1));
                    }
                })?;
                save_base(dir, &model, Some(&cfg), Some(&report))
            })
        })
    }

    fn fit_m_unit(&self, kind: BaseKind) -> Result<StageRecord> {
        let mut inputs = self.data_inputs(Stage::FitM, &["train", "eval"])?;
        inputs.extend(self.require(Stage::FitM, Stage::TrainBase, &kind.to_string())?.outputs);
        let seed = derive_seed(self.config.seed, &["fit-m", &kind.to_string()]);
        let sched = self.config.fit_m;
        let params = json!({ "kind": kind, "seed": seed, "schedule": sched });
        self.run_unit(Stage::FitM, &kind.to_string(), params, inputs, &format!("m/{kind}"), |dir| {
            let base = self.load_base(kind)?;
            let train = expand_orbits(&load_dataset(&self.data_dir(), "train")?.0)?;
            let (eval, _) = load_dataset(&self.data_dir(), "eval")?;
            let cfg = FitConfig { epochs: sched.epochs, batch_size: sched.batch_size, learning_rate: sched.learning_rate, seed };
            let (m, report) = fit_m(&base, &train, &eval, &cfg, |e, loss| {
                if (e + 1) % 25 == 0 {
                    self.log(format!("  {kind} M epoch {:>3}: loss {loss:.5}", e + 1));
                }
            })?;
            m.save(&dir.join("M.etns"))?;
            write_json(&dir.join("fit_report.json"), &report)
        })
    }

    fn train_sae_unit(&self, kind: BaseKind, e: SaeGridEntry) -> Result<StageRecord> {
        let mut inputs = self.data_inputs(Stage::TrainSae, &["train"])?;
        inputs.extend(self.require(Stage::TrainSae, Stage::TrainBase, &kind.to_string())?.outputs);
        let unit = sae_unit(kind, e);
        let seed = derive_seed(self.config.seed, &["train-sae", &kind.to_string(), e.variant.name(), &e.k.to_string()]);
        let sched = self.config.sae;
        let params = json!({ "kind": kind, "entry": e, "seed": seed, "schedule": sched });
        let out = format!("sae/{kind}/{}-k{}", e.variant, e.k);
        self.run_unit(Stage::TrainSae, &unit, params, inputs, &out, |dir| {
            let base = self.load_base(kind)?;
            let train = expand_orbits(&load_dataset(&self.data_dir(), "train")?.0)?;
            let orbits = activation_orbits(&base, &train)?;
            drop(train);
            let mut sae = SaeModel::<f32>::new(e.variant, e.k, seed)?;
            let cfg = SaeTrainConfig {
                epochs: sched.epochs,
                n_samples: orbits.dims()[0],
                batch_size: sched.batch_size,
                learning_rate: sched.learning_rate,
                seed,
            };
            let report = train_sae_on_orbits(&mut sae, &orbits, e.variant.mode(), &cfg, |ep, loss| {
                if (ep + 1) % 25 == 0 {
                    self.log(format!("  {unit} epoch {:>3}: mse {loss:.5}", ep + 1));
                }
            })?;
            save_sae(dir, &sae, Some(&cfg), Some(&report))
        })
    }

    fn sae_jobs(&self) -> Vec<(BaseKind, SaeGridEntry)> {
        self.config.sae_base_kinds.iter().flat_map(|&k| self.config.sae_grid.iter().map(move |&e| (k, e))).collect()
    }

    pub fn fit_m(&self) -> Result<Vec<StageRecord>> {
        self.run_parallel(&self.config.base_kinds, |&kind| self.fit_m_unit(kind))
    }

    pub fn train_sae(&self) -> Result<Vec<StageRecord>> {
        self.run_parallel(&self.sae_jobs(), |&(kind, e)| self.train_sae_unit(kind, e))
    }

    /// Both training steps as one pool of independent units.
    pub fn fit_m_and_train_sae(&self) -> Result<Vec<StageRecord>> {
        let mut jobs: Vec<(BaseKind, Option<SaeGridEntry>)> = self.config.base_kinds.iter().map(|&k| (k, None)).collect();
        jobs.extend(self.sae_jobs().into_iter().map(|(k, e)| (k, Some(e))));
        self.run_parallel(&jobs, |&(kind, e)| match e {
            None => self.fit_m_unit(kind),
            Some(e) => self.train_sae_unit(kind, e),
        })
    }

    pub fn probe(&self) -> Result<Vec<StageRecord>> {
        self.run_parallel(&self.config.probe.base_kinds, |&kind| self.probe_unit(kind))
    }

    fn probe_unit(&self, kind: BaseKind) -> Result<StageRecord> {
        let pc = &self.config.probe;
        let mut inputs = self.data_inputs(Stage::Probe, &["probe"])?;
        inputs.extend(self.require(Stage::Probe, Stage::TrainBase, &kind.to_string())?.outputs);
        inputs.extend(self.require(Stage::Probe, Stage::FitM, &kind.to_string())?.outputs);
        let mut entries = Vec::new();
        for &k in &pc.sae_ks {
            for &variant in &pc.variants {
                let e = SaeGridEntry { variant, k };
                inputs.extend(self.require(Stage::Probe, Stage::TrainSae, &sae_unit(kind, e))?.outputs);
                entries.push(e);
            }
        }
        let seed = derive_seed(self.config.seed, &["probe", &kind.to_string()]);
        let params = json!({ "kind": kind, "seed": seed, "probe": pc, "trunc_lengths": self.config.trunc_lengths });
        self.run_unit(Stage::Probe, &kind.to_string(), params, inputs, &format!("probe/{kind}"), |dir| {
            let (images, _) = load_dataset(&self.data_dir(), "probe")?;
            let base = self.load_base(kind)?;
            let m = self.load_m(kind)?;
            let acts = base.middle_activations(&stack_pixels(&images))?;
            let specs: Vec<_> = images.iter().map(|i| i.spec).collect();
            drop(images);
            let mut loaded = Vec::new();
            for &e in &entries {
                let sae = self.load_sae(kind, e)?;
                let latents = SparseLatents::encode(&sae, &acts)?;
                let powers = if e.variant == SaeVariant::Invariant { Some(equivariant_reconstruct_batch(&sae, &m, &acts)?.1) } else { None };
                loaded.push((e, sae, latents, powers));
            }
            let saes = loaded
                .iter()
                .map(|(e, sae, latents, powers)| SaeFeatures {
                    variant: e.variant,
                    k: e.k,
                    latents,
                    sae,
                    transform: powers.as_deref().map(|p| (&m, p)),
                })
                .collect();
            let (train, test) = orbit_split(specs.len() / GROUP_ORDER, pc.test_fraction, derive_seed(seed, &["split"]));
            let tasks = enumerate_tasks();
            let input = SuiteInput {
                specs: &specs,
                activations: &acts,
                saes,
                tasks: &tasks,
                probes: &pc.probes,
                trunc_lengths: &self.config.trunc_lengths,
                train: &train,
                test: &test,
                logreg: pc.logreg,
                gbt: pc.gbt,
                seed,
            };
            let out = run_task_suite(&input)?;
            write_results_csv(&dir.join("results.csv"), &out.results)?;
            write_aggregate_csv(&dir.join("aggregate.csv"), &out.aggregate)?;
            write_json(&dir.join("failures.json"), &out.failures)?;
            write_imbalance_csv(&dir.join("imbalance.csv"), &negative_shares(&specs, &tasks))
        })
    }

    pub fn report(&self) -> Result<StageRecord> {
        let mut inputs = self.data_inputs(Stage::Report, &["eval"])?;
        for &kind in &self.config.base_kinds {
            inputs.extend(self.require(Stage::Report, Stage::TrainBase, &kind.to_string())?.outputs);
            inputs.extend(self.require(Stage::Report, Stage::FitM, &kind.to_string())?.outputs);
        }
        for (kind, e) in self.sae_jobs() {
            inputs.extend(self.require(Stage::Report, Stage::TrainSae, &sae_unit(kind, e))?.outputs);
        }
        for &kind in &self.config.probe.base_kinds {
            inputs.extend(self.require(Stage::Report, Stage::Probe, &kind.to_string())?.outputs);
        }
        let params = json!({ "report": self.config.report, "trunc_lengths": self.config.trunc_lengths, "probe": self.config.probe });
        self.run_unit(Stage::Report, "all", params, inputs, "report", |dir| report::write_report(self, dir))
    }

    pub(crate) fn probe_results_path(&self, kind: BaseKind) -> PathBuf {
        self.probe_dir(kind).join("results.csv")
    }

    pub(crate) fn fit_report_path(&self, kind: BaseKind) -> PathBuf {
        self.m_dir(kind).join("fit_report.json")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for scale in [Scale::Desk, Scale::Paper] {
            ExperimentConfig::preset(scale).validate().unwrap();
        }
        let paper = ExperimentConfig::preset(Scale::Paper);
        assert_eq!((paper.data.n_train, paper.base.epochs, paper.sae.epochs, paper.fit_m.epochs), (10_000, 100, 500, 150));
        assert_eq!(paper.trunc_lengths, vec![8, 32]);
        let desk = ExperimentConfig::preset(Scale::Desk);
        assert_eq!((desk.data.n_train, desk.sae.epochs), (2000, 100));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = serde_json::to_value(ExperimentConfig::preset(Scale::Desk)).unwrap();
        v["surprise"] = json!(1);
        assert!(serde_json::from_value::<ExperimentConfig>(v).is_err());
    }

    #[test]
    fn probe_grid_must_be_trained() {
        let mut cfg = ExperimentConfig::preset(Scale::Desk);
        cfg.sae_grid.retain(|e| e.k != 16);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn scale_parses() {
        assert_eq!("paper".parse::<Scale>().unwrap(), Scale::Paper);
        assert!("huge".parse::<Scale>().is_err());
    }
}
