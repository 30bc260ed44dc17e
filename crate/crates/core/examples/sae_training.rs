//! Trains a base model, fits M, then a regular and an invariant SAE on the same
//! activations, and compares their splice loss and latent L1.
//!
//! cargo run --release -p eqsae --example sae_training -- [mlp|cnn] [n_images] [base_epochs] [sae_epochs] [K]

use std::time::Instant;

use eqsae::base_models::{build_base, train_base, BaseKind, BaseTrainConfig};
use eqsae::dataset::{generate_dataset, stack_pixels, Augment};
use eqsae::equivariance::{fit_m, FitConfig};
use eqsae::sae::{activation_orbits, latent_l1, splice_loss, train_sae_on_orbits, SaeModel, SaeTrainConfig, SaeVariant};

fn main() -> eqsae::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let kind = match args.first().map(String::as_str) {
        Some("cnn") => BaseKind::Cnn,
        _ => BaseKind::Mlp,
    };
    let arg = |i: usize, d: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (n, base_epochs, sae_epochs, k) = (arg(1, 500), arg(2, 20), arg(3, 10), arg(4, 16));

    let clock = Instant::now();
    let train = generate_dataset(n, 1, Augment::None)?;
    let mut base = build_base::<f32>(kind, 1);
    let cfg = BaseTrainConfig { epochs: base_epochs, n_samples: n, ..Default::default() };
    let report = train_base(&mut base, &train, &cfg, |_, _| {})?;
    println!("{kind} base: mse {:.5} after {base_epochs} epochs ({:.0}s)", report.loss_history.last().unwrap(), clock.elapsed().as_secs_f64());

    let orbit_train = generate_dataset(n, 1, Augment::AllRotations)?;
    let eval = generate_dataset(128, 2, Augment::AllRotations)?;
    let t = Instant::now();
    let (m, fit) = fit_m(&base, &orbit_train, &eval, &FitConfig { epochs: 150, ..Default::default() }, |_, _| {})?;
    println!(
        "M: r2 {:.3} ± {:.3}, identity {:.3} ± {:.3} ({:.0}s)",
        fit.r2_mean,
        fit.r2_std,
        fit.identity_baseline_r2,
        fit.identity_baseline_std,
        t.elapsed().as_secs_f64()
    );

    let orbits = activation_orbits(&base, &orbit_train)?;
    let eval_pixels = stack_pixels(&eval);
    let eval_acts = base.middle_activations(&eval_pixels)?;
    for variant in [SaeVariant::Regular, SaeVariant::Invariant] {
        let mut sae = SaeModel::<f32>::new(variant, k, 3)?;
        let cfg = SaeTrainConfig { epochs: sae_epochs, n_samples: n, seed: 3, ..Default::default() };
        let t = Instant::now();
        let rep = train_sae_on_orbits(&mut sae, &orbits, variant.mode(), &cfg, |_, _| {})?;
        let secs = t.elapsed().as_secs_f64();
        let plain = splice_loss(&base, &sae, &eval_pixels, None)?;
        let with_m = splice_loss(&base, &sae, &eval_pixels, Some(&m))?;
        println!(
            "{variant} K={k}: train mse {:.5}, splice {plain:.5}, splice with M {with_m:.5}, L1 {:.3} ({:.1}s/epoch)",
            rep.loss_history.last().unwrap(),
            latent_l1(&sae, &eval_acts)?,
            secs / sae_epochs as f64
        );
    }
    Ok(())
}
