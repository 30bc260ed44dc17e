//! Shows the glyph set, one rotation orbit and the probing task families with the
//! share of positive labels each gets on a sample of images.
//!
//! cargo run -p eqsae --example dataset_tour -- [n_images]

use eqsae::dataset::{
    enumerate_tasks, generate_dataset, render_glyph, task_label, Augment, ShapeId, TaskFamily, CELL_SIDE,
};
use eqsae_numerics::Tensor;

fn ascii(img: &Tensor<f32>, side: usize, step: usize) -> Vec<String> {
    (0..side)
        .step_by(step)
        .map(|r| (0..side).step_by(step).map(|c| if img.data()[r * side + c] > 0.5 { '#' } else { '.' }).collect())
        .collect()
}

fn main() -> eqsae::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(512);

    for shape in ShapeId::all() {
        println!("{} (period {})", shape.name(), shape.period());
        let glyphs: Vec<Vec<String>> =
            (0..shape.period()).map(|o| render_glyph(shape, o).map(|g| ascii(&g, CELL_SIDE, 2))).collect::<Result<_, _>>()?;
        for line in 0..CELL_SIDE / 2 {
            println!("  {}", glyphs.iter().map(|g| g[line].as_str()).collect::<Vec<_>>().join("  "));
        }
    }

    let orbit = generate_dataset(1, 3, Augment::AllRotations)?;
    println!("\none orbit, quarter turns 0..3");
    let pictures: Vec<Vec<String>> = orbit.iter().map(|img| ascii(&img.pixels, 64, 4)).collect();
    for line in 0..16 {
        println!("  {}", pictures.iter().map(|p| p[line].as_str()).collect::<Vec<_>>().join("  "));
    }

    let images = generate_dataset(n, 0, Augment::AllRotations)?;
    let tasks = enumerate_tasks();
    println!("\n{} tasks on {} images", tasks.len(), images.len());
    for family in TaskFamily::ALL {
        let shares: Vec<f64> = tasks
            .iter()
            .filter(|t| t.family == family)
            .map(|t| images.iter().filter(|img| task_label(img, t)).count() as f64 / images.len() as f64)
            .collect();
        let mean = shares.iter().sum::<f64>() / shares.len() as f64;
        let lo = shares.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = shares.iter().copied().fold(0.0, f64::max);
        println!("  {family:<3} {:>3} tasks  positive share mean {mean:.3}  range {lo:.3}..{hi:.3}", shares.len());
    }
    Ok(())
}
