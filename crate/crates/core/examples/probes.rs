//! Runs the three probes on synthetic fixtures and times them at probe-suite size.
//!
//! cargo run --release -p eqsae --example probes -- [n_rows] [width]

use std::time::Instant;

use eqsae::probing::{f1_score, gbt_probe, knn_probe, logreg_probe, GbtParams, LogregParams, ProbeDataset};
use eqsae_numerics::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture(n: usize, width: usize, concept: impl Fn(&[f64]) -> bool, seed: u64) -> eqsae::Result<ProbeDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features: Vec<f64> = (0..n * width).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let labels = features.chunks(width).map(&concept).collect();
    let cut = n * 3 / 4;
    ProbeDataset::new(Tensor::new(vec![n, width], features)?, labels, (0..cut).collect(), (cut..n).collect())
}

fn main() -> eqsae::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(4096);
    let width: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(256);

    println!("f1 of TP=2 FP=1 FN=1: {:.4}", f1_score(&[true, true, true, false], &[true, true, false, true]));

    let fixtures = [
        ("half-space x0 + x1 > 0", fixture(n, width, |r| r[0] + r[1] > 0.0, 1)?),
        ("xor of x0, x1", fixture(n, width, |r| (r[0] > 0.0) != (r[1] > 0.0), 2)?),
        ("rare corner x0, x1 > 0.6", fixture(n, width, |r| r[0] > 0.6 && r[1] > 0.6, 3)?),
    ];
    for (name, data) in &fixtures {
        let t = Instant::now();
        let knn = knn_probe(data)?;
        let t_knn = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let lr = logreg_probe(data, &LogregParams::default(), 0)?;
        let t_lr = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let gbt = gbt_probe(data, &GbtParams::default())?;
        let t_gbt = t.elapsed().as_secs_f64();
        println!("{name:<26} knn {knn:.3} ({t_knn:.2}s)  logreg {lr:.3} ({t_lr:.2}s)  gbt {gbt:.3} ({t_gbt:.2}s)");
    }
    Ok(())
}
