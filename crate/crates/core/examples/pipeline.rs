//! Runs every stage on a shrunken desk config, then runs again to show the cache.
//!
//! cargo run --release -p eqsae --example pipeline -- [output_dir]

use std::path::PathBuf;

use eqsae::runner::{Command, ExperimentConfig, Runner, SaeGridEntry, Scale, Schedule};
use eqsae::sae::SaeVariant;

fn main() -> eqsae::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("eqsae-pipeline"));
    let mut cfg = ExperimentConfig::preset(Scale::Desk);
    cfg.output_dir = dir.clone();
    cfg.sae_grid = [SaeVariant::Regular, SaeVariant::Invariant].map(|variant| SaeGridEntry { variant, k: 8 }).to_vec();
    cfg.trunc_lengths = vec![8];
    cfg.data.n_train = 64;
    cfg.data.n_eval_orbits = 16;
    cfg.data.n_probe_images = 64;
    let short = Schedule { epochs: 3, batch_size: 16, learning_rate: 1e-3 };
    (cfg.base, cfg.fit_m, cfg.sae) = (short, short, short);
    cfg.probe.sae_ks = vec![8];
    cfg.probe.logreg.epochs = 5;
    cfg.probe.gbt.rounds = 5;

    let runner = Runner::new(cfg, 2)?;
    for pass in ["first", "second"] {
        let records = runner.run(Command::All)?;
        let cached = records.iter().filter(|r| r.cache_hit).count();
        let secs: f64 = records.iter().map(|r| r.wall_clock_s).sum();
        println!("{pass} pass: {} units, {cached} cached, {secs:.1}s", records.len());
    }
    println!("outputs in {}; see report/summary.json", dir.display());
    Ok(())
}
