//! Writes logit-gradient saliency maps as 8-bit PGM images with a CSV sidecar.
//!
//! Run: `cargo run --release --example saliency_export -- [output dir]`

use std::path::PathBuf;

use scoregrad::evaluation::{export_saliency, read_pgm};
use scoregrad::trainer::{train, LrSchedule, TrainConfig};
use scoregrad::Result;

fn main() -> Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("scoregrad-saliency"), PathBuf::from);
    let out = train(&TrainConfig {
        epochs: 2,
        n_train: 2000,
        n_test: 200,
        eval_train_examples: 200,
        schedule: LrSchedule::constant(0.05)?,
        ..TrainConfig::default()
    })?;
    let test = out.dataset.test.head(8);
    let paths = export_saliency(&out.model, &test.x, &test.y, out.dataset.input, &dir)?;
    for p in &paths {
        let (w, h, px) = read_pgm(p)?;
        let mean = px.iter().map(|&v| v as f64).sum::<f64>() / px.len() as f64;
        println!("{} {w}x{h} mean level {mean:.1}", p.display());
    }
    println!("sidecar: {}", dir.join("saliency.csv").display());
    Ok(())
}
