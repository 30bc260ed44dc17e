//! Report bundle: M-fit table, SAE sparsity/reconstruction frontier, probe F1 bars
//! and dictionary similarity histograms, each as CSV plus SVG.

use std::path::Path;

use eqsae_numerics::Scalar;
use serde::{Deserialize, Serialize};

use super::svg::{bar_chart, histogram, num, scatter};
use super::{Runner, SaeGridEntry};
use crate::base_models::BaseKind;
use crate::dataset::{load_dataset, stack_pixels, TaskFamily};
use crate::equivariance::{classify_dictionary_features, equivariant_reconstruct_batch, similarity_histogram, FeatureLabel, FitReport};
use crate::error::{Error, Result};
use crate::probing::csv_error;
use crate::sae::{dead_latents, l1_of_latents, orbit_spread_ratio, splice_loss, SaeVariant};
use crate::util::{read_json, write_json};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MFitRow {
    pub base_kind: BaseKind,
    /// `learned_m` or `identity`.
    pub method: String,
    pub r2_mean: f64,
    pub r2_std: f64,
    pub r2_per_power: [f64; 4],
    pub r2_mean_rotations: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaeMetricsRow {
    pub base_kind: BaseKind,
    /// Variant name, or `equivariant` for the invariant SAE decoded through `M^{p*}`.
    pub model: String,
    pub variant: SaeVariant,
    pub k: usize,
    pub splice_loss: f64,
    pub latent_l1: f64,
    pub activation_mse: f64,
    pub dead_latents: usize,
    pub orbit_spread_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryRow {
    pub base_kind: BaseKind,
    pub k: usize,
    pub invariant: usize,
    pub equivariant: usize,
    pub dead: usize,
    pub histogram: Vec<(f64, f64, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeBarRow {
    pub base_kind: BaseKind,
    pub k: usize,
    pub trunc_len: usize,
    /// Task family name or `all`.
    pub family: String,
    pub series: String,
    pub mean_best_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub m_fit: Vec<MFitRow>,
    pub sae_metrics: Vec<SaeMetricsRow>,
    pub dictionary: Vec<DictionaryRow>,
    pub probe_bars: Vec<ProbeBarRow>,
}

impl ReportSummary {
    pub fn load(report_dir: &Path) -> Result<Self> {
        read_json(&report_dir.join("summary.json"))
    }

    pub fn metrics(&self, kind: BaseKind, model: &str, k: usize) -> Option<&SaeMetricsRow> {
        self.sae_metrics.iter().find(|r| r.base_kind == kind && r.model == model && r.k == k)
    }

    pub fn m_fit(&self, kind: BaseKind, method: &str) -> Option<&MFitRow> {
        self.m_fit.iter().find(|r| r.base_kind == kind && r.method == method)
    }

    pub fn probe_bar(&self, kind: BaseKind, k: usize, trunc_len: usize, family: &str, series: &str) -> Option<f64> {
        self.probe_bars
            .iter()
            .find(|r| r.base_kind == kind && r.k == k && r.trunc_len == trunc_len && r.family == family && r.series == series)
            .map(|r| r.mean_best_f1)
    }
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Probe series label; the invariant SAE's reconstructions go through `M^{p*}`.
pub fn series_label(representation: &str, variant: &str) -> String {
    match (representation, variant) {
        ("activations", _) => "activations".into(),
        ("latents_truncated", v) => format!("latents/{v}"),
        (_, "invariant") => "reconstruction/equivariant".into(),
        (_, v) => format!("reconstruction/{v}"),
    }
}

#[derive(Debug, Deserialize)]
struct ResultRow {
    task_family: String,
    representation: String,
    sae_variant: String,
    #[serde(rename = "K")]
    k: String,
    trunc_len: String,
    f1: f64,
    best_flag: u8,
}

fn probe_bars(runner: &Runner, kind: BaseKind) -> Result<Vec<ProbeBarRow>> {
    let path = runner.probe_results_path(kind);
    let mut reader = csv::Reader::from_path(&path).map_err(|e| csv_error(&path, e))?;
    let rows: Vec<ResultRow> =
        reader.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| csv_error(&path, e))?;
    let best: Vec<&ResultRow> = rows.iter().filter(|r| r.best_flag == 1).collect();
    let cfg = &runner.config;
    let mut out = Vec::new();
    for &k in &cfg.probe.sae_ks {
        for &l in &cfg.trunc_lengths {
            let mut series: Vec<(String, Box<dyn Fn(&ResultRow) -> bool>)> =
                vec![("activations".into(), Box::new(|r: &ResultRow| r.representation == "activations"))];
            for rep in ["latents_truncated", "reconstruction_truncated"] {
                for &v in &cfg.probe.variants {
                    let (ks, ls) = (k.to_string(), l.to_string());
                    series.push((
                        series_label(rep, v.name()),
                        Box::new(move |r: &ResultRow| {
                            r.representation == rep && r.sae_variant == v.name() && r.k == ks && r.trunc_len == ls
                        }),
                    ));
                }
            }
            let families: Vec<String> = TaskFamily::ALL.iter().map(|f| f.to_string()).chain(["all".to_string()]).collect();
            for fam in &families {
                for (name, keep) in &series {
                    let v: Vec<f64> =
                        best.iter().filter(|r| (fam == "all" || &r.task_family == fam) && keep(r)).map(|r| r.f1).collect();
                    if v.is_empty() {
                        continue;
                    }
                    out.push(ProbeBarRow {
                        base_kind: kind,
                        k,
                        trunc_len: l,
                        family: fam.clone(),
                        series: name.clone(),
                        mean_best_f1: v.iter().sum::<f64>() / v.len() as f64,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Computes every report table from the stage artifacts and writes CSV, SVG and `summary.json`.
pub fn write_report(runner: &Runner, dir: &Path) -> Result<()> {
    let cfg = &runner.config;
    let (eval, _) = load_dataset(&runner.root().join("data"), "eval")?;
    let pixels = stack_pixels(&eval);
    drop(eval);

    let mut m_fit = Vec::new();
    for &kind in &cfg.base_kinds {
        let fit: FitReport = read_json(&runner.fit_report_path(kind))?;
        m_fit.push(MFitRow {
            base_kind: kind,
            method: "learned_m".into(),
            r2_mean: fit.r2_mean,
            r2_std: fit.r2_std,
            r2_per_power: fit.r2_per_power,
            r2_mean_rotations: fit.r2_mean_rotations,
        });
        m_fit.push(MFitRow {
            base_kind: kind,
            method: "identity".into(),
            r2_mean: fit.identity_baseline_r2,
            r2_std: fit.identity_baseline_std,
            r2_per_power: fit.identity_per_power,
            r2_mean_rotations: fit.identity_mean_rotations,
        });
    }
    write_rows(
        &dir.join("m_fit.csv"),
        &["base_kind", "method", "r2_mean", "r2_std", "r2_p1", "r2_p2", "r2_p3", "r2_p4", "r2_mean_rotations"],
        m_fit.iter().map(|r| {
            let mut v = vec![r.base_kind.to_string(), r.method.clone(), num(r.r2_mean), num(r.r2_std)];
            v.extend(r.r2_per_power.iter().map(|&x| num(x)));
            v.push(num(r.r2_mean_rotations));
            v
        }),
    )?;

    let mut sae_metrics = Vec::new();
    let mut dictionary = Vec::new();
    for &kind in &cfg.sae_base_kinds {
        let base = runner.load_base(kind)?;
        let m = runner.load_m(kind)?;
        let acts = base.middle_activations(&pixels)?;
        for e in cfg.sae_grid.iter().copied() {
            let SaeGridEntry { variant, k } = e;
            let sae = runner.load_sae(kind, e)?;
            let z = sae.encode(&acts)?;
            let latent_l1 = l1_of_latents(&z);
            let ratio = orbit_spread_ratio(&z)?;
            drop(z);
            let dead = dead_latents(&sae, &acts)?;
            let recon = sae.reconstruct(&acts)?;
            sae_metrics.push(SaeMetricsRow {
                base_kind: kind,
                model: variant.name().into(),
                variant,
                k,
                splice_loss: splice_loss(&base, &sae, &pixels, None)?,
                latent_l1,
                activation_mse: eqsae_numerics::mse(&recon, &acts)?.as_f64(),
                dead_latents: dead.len(),
                orbit_spread_ratio: ratio,
            });
            if variant == SaeVariant::Invariant {
                let (eq_recon, _) = equivariant_reconstruct_batch(&sae, &m, &acts)?;
                sae_metrics.push(SaeMetricsRow {
                    base_kind: kind,
                    model: "equivariant".into(),
                    variant,
                    k,
                    splice_loss: splice_loss(&base, &sae, &pixels, Some(&m))?,
                    latent_l1,
                    activation_mse: eqsae_numerics::mse(&eq_recon, &acts)?.as_f64(),
                    dead_latents: dead.len(),
                    orbit_spread_ratio: ratio,
                });
                let classes = classify_dictionary_features(&sae, &m, cfg.report.similarity_threshold, Some(&dead))?;
                let count = |l: FeatureLabel| classes.iter().filter(|c| c.label == l).count();
                let hist = similarity_histogram(&classes, cfg.report.histogram_bins);
                let stem = format!("dictionary_{kind}_k{k}");
                write_rows(
                    &dir.join(format!("{stem}.csv")),
                    &["bin_lower", "bin_upper", "count"],
                    hist.iter().map(|b| vec![num(b.0), num(b.1), b.2.to_string()]),
                )?;
                let title = format!("cos(D_i, M D_i), {kind} invariant SAE, K={k}");
                write_text(&dir.join(format!("{stem}.svg")), &histogram(&title, "cosine similarity", &hist))?;
                dictionary.push(DictionaryRow {
                    base_kind: kind,
                    k,
                    invariant: count(FeatureLabel::Invariant),
                    equivariant: count(FeatureLabel::Equivariant),
                    dead: count(FeatureLabel::Dead),
                    histogram: hist,
                });
            }
        }
    }
    write_rows(
        &dir.join("sae_metrics.csv"),
        &["base_kind", "model", "K", "splice_loss", "latent_l1", "activation_mse", "dead_latents", "orbit_spread_ratio"],
        sae_metrics.iter().map(|r| {
            vec![
                r.base_kind.to_string(),
                r.model.clone(),
                r.k.to_string(),
                num(r.splice_loss),
                num(r.latent_l1),
                num(r.activation_mse),
                r.dead_latents.to_string(),
                num(r.orbit_spread_ratio),
            ]
        }),
    )?;
    write_rows(
        &dir.join("dictionary_summary.csv"),
        &["base_kind", "K", "invariant", "equivariant", "dead"],
        dictionary.iter().map(|d| vec![d.base_kind.to_string(), d.k.to_string(), d.invariant.to_string(), d.equivariant.to_string(), d.dead.to_string()]),
    )?;
    for &kind in &cfg.sae_base_kinds {
        let points: Vec<(String, String, f64, f64)> = sae_metrics
            .iter()
            .filter(|r| r.base_kind == kind)
            .map(|r| (r.model.clone(), format!("K={}", r.k), r.latent_l1, r.splice_loss))
            .collect();
        write_rows(
            &dir.join(format!("frontier_{kind}.csv")),
            &["model", "label", "latent_l1", "splice_loss"],
            points.iter().map(|p| vec![p.0.clone(), p.1.clone(), num(p.2), num(p.3)]),
        )?;
        let svg = scatter(&format!("Sparsity vs splice loss, {kind} base"), "mean latent L1", "splice loss (pixel MSE)", &points);
        write_text(&dir.join(format!("frontier_{kind}.svg")), &svg)?;
    }

    let mut bars_all = Vec::new();
    for &kind in &cfg.probe.base_kinds {
        let bars = probe_bars(runner, kind)?;
        for &k in &cfg.probe.sae_ks {
            for &l in &cfg.trunc_lengths {
                let sel: Vec<&ProbeBarRow> = bars.iter().filter(|b| b.k == k && b.trunc_len == l).collect();
                let stem = format!("probe_{kind}_k{k}_t{l}");
                write_rows(
                    &dir.join(format!("{stem}.csv")),
                    &["task_family", "series", "mean_best_f1"],
                    sel.iter().map(|b| vec![b.family.clone(), b.series.clone(), num(b.mean_best_f1)]),
                )?;
                let data: Vec<(String, String, f64)> = sel.iter().map(|b| (b.family.clone(), b.series.clone(), b.mean_best_f1)).collect();
                let svg = bar_chart(&format!("Best-probe F1, {kind} base, K={k}, truncation {l}"), "mean best F1", &data);
                write_text(&dir.join(format!("{stem}.svg")), &svg)?;
            }
        }
        bars_all.extend(bars);
    }

    let summary = ReportSummary { m_fit, sae_metrics, dictionary, probe_bars: bars_all };
    write_json(&dir.join("summary.json"), &summary)
}
