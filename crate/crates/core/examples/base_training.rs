//! Trains a base autoencoder for a few epochs and reports the loss curve.
//!
//! cargo run --release -p eqsae --example base_training -- [mlp|cnn] [n_images] [epochs]

use std::time::Instant;

use eqsae::base_models::{build_base, train_base, BaseKind, BaseTrainConfig};
use eqsae::dataset::{generate_dataset, stack_pixels, Augment};

fn main() -> eqsae::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let kind = match args.first().map(String::as_str) {
        Some("mlp") => BaseKind::Mlp,
        _ => BaseKind::Cnn,
    };
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(512);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);

    let images = generate_dataset(n, 1, Augment::RandomRotation)?;
    let mut model = build_base::<f32>(kind, 1);
    let config = BaseTrainConfig { epochs, n_samples: n, ..Default::default() };
    let start = Instant::now();
    let report = train_base(&mut model, &images, &config, |e, loss| {
        println!("epoch {e:>3}  mse {loss:.5}  ({:.1}s)", start.elapsed().as_secs_f64());
    })?;

    let held_out = stack_pixels(&generate_dataset(64, 2, Augment::RandomRotation)?);
    let recon = model.reconstruct(&held_out)?;
    let mse = eqsae_numerics::mse(&recon, &held_out)?;
    println!("{kind}: {} parameters, final train mse {:.5}, held-out mse {mse:.5}", model.parameter_count(), report.loss_history.last().unwrap());
    Ok(())
}
