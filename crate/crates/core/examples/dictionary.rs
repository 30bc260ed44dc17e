//! Trains an invariant SAE on base-model orbits, then labels each dictionary column
//! by the cosine between `D_i` and `M D_i` and prints the similarity histogram.
//!
//! cargo run --release -p eqsae --example dictionary -- [mlp|cnn] [n_images] [base_epochs] [sae_epochs]

use eqsae::base_models::{build_base, train_base, BaseKind, BaseTrainConfig};
use eqsae::dataset::{generate_dataset, Augment};
use eqsae::equivariance::{classify_dictionary_features, fit_m, similarity_histogram, FeatureLabel, FitConfig};
use eqsae::sae::{activation_orbits, dead_latents, train_sae_on_orbits, SaeModel, SaeTrainConfig, SaeVariant};
use eqsae_numerics::Tensor;

fn main() -> eqsae::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let kind = match args.first().map(String::as_str) {
        Some("mlp") => BaseKind::Mlp,
        _ => BaseKind::Cnn,
    };
    let arg = |i: usize, d: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (n, base_epochs, sae_epochs) = (arg(1, 400), arg(2, 15), arg(3, 20));

    let mut base = build_base::<f32>(kind, 1);
    let train = generate_dataset(n, 1, Augment::None)?;
    train_base(&mut base, &train, &BaseTrainConfig { epochs: base_epochs, n_samples: n, ..Default::default() }, |_, _| {})?;
    let orbits = generate_dataset(n, 1, Augment::AllRotations)?;
    let eval = generate_dataset(128, 2, Augment::AllRotations)?;
    let (m, fit) = fit_m(&base, &orbits, &eval, &FitConfig::default(), |_, _| {})?;
    println!("{kind}: M fit r2 {:.3} (identity {:.3})", fit.r2_mean, fit.identity_baseline_r2);

    let acts = activation_orbits(&base, &orbits)?;
    let mut sae = SaeModel::<f32>::new(SaeVariant::Invariant, 16, 1)?;
    let variant = SaeVariant::Invariant;
    let config = SaeTrainConfig { epochs: sae_epochs, n_samples: n, ..Default::default() };
    train_sae_on_orbits(&mut sae, &acts, variant.mode(), &config, |_, _| {})?;

    let flat = Tensor::new(vec![acts.dims()[0] * 4, acts.dims()[2]], acts.data().to_vec())?;
    let dead = dead_latents(&sae, &flat)?;
    let classes = classify_dictionary_features(&sae, &m, 0.9, Some(&dead))?;
    let count = |l: FeatureLabel| classes.iter().filter(|c| c.label == l).count();
    println!(
        "{} latents: {} invariant, {} equivariant, {} dead",
        classes.len(),
        count(FeatureLabel::Invariant),
        count(FeatureLabel::Equivariant),
        count(FeatureLabel::Dead)
    );
    let bins = similarity_histogram(&classes, 20);
    let peak = bins.iter().map(|b| b.2).max().unwrap_or(1).max(1);
    for (lo, hi, c) in bins {
        println!("  [{lo:+.1}, {hi:+.1})  {c:>4} {}", "*".repeat(c * 50 / peak));
    }
    Ok(())
}
