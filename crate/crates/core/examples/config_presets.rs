//! Prints the desk or paper preset as an editable experiment config.
//!
//! cargo run -p eqsae --example config_presets -- [desk|paper] > my_config.json

use eqsae::runner::{ExperimentConfig, Scale};

fn main() -> eqsae::Result<()> {
    let scale: Scale = std::env::args().nth(1).as_deref().unwrap_or("desk").parse()?;
    let cfg = ExperimentConfig::preset(scale);
    println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
    Ok(())
}
