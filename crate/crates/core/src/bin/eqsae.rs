use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use eqsae::runner::{Command, ExperimentConfig, Runner, Scale};

#[derive(Parser)]
#[command(name = "eqsae", about = "Equivariant sparse autoencoder experiments on rotated shape images")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment config (JSON). Defaults to the preset of `--scale`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Preset to start from; must agree with the config file when both are given.
    #[arg(long, global = true, value_enum)]
    scale: Option<ScaleArg>,
    /// Overrides the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Independent stage units run concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    stage_parallelism: usize,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Suppress per-stage progress.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Render the train, eval and probe image sets.
    GenData,
    /// Train the MLP and CNN autoencoders.
    TrainBase,
    /// Fit the activation transform matrix of every base model.
    FitM,
    /// Train the SAE grid on base-model activations.
    TrainSae,
    /// Run the probing task suite.
    Probe,
    /// Write tables, charts and summary.json.
    Report,
    /// Every stage in order, reusing cached results.
    All,
}

fn resolve(cli: &Cli) -> eqsae::Result<ExperimentConfig> {
    let scale = cli.scale.map(|s| match s {
        ScaleArg::Desk => Scale::Desk,
        ScaleArg::Paper => Scale::Paper,
    });
    let mut cfg = match &cli.config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            if scale.is_some_and(|s| s != cfg.scale) {
                return Err(eqsae::Error::Config(format!("--scale disagrees with `scale` in {}", path.display())));
            }
            cfg
        }
        None => ExperimentConfig::preset(scale.unwrap_or(Scale::Desk)),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::GenData => Command::GenData,
        Cmd::TrainBase => Command::TrainBase,
        Cmd::FitM => Command::FitM,
        Cmd::TrainSae => Command::TrainSae,
        Cmd::Probe => Command::Probe,
        Cmd::Report => Command::Report,
        Cmd::All => Command::All,
    };
    let result = resolve(&cli).and_then(|cfg| Runner::new(cfg, cli.stage_parallelism)).and_then(|r| {
        let r = r.verbose(!cli.quiet);
        let records = r.run(command)?;
        let hits = records.iter().filter(|s| s.cache_hit).count();
        eprintln!("{} stage unit(s), {hits} cached; manifest at {}", records.len(), r.root().join("manifest.json").display());
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
