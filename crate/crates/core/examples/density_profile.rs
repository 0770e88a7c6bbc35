//! Mean log density ratio `f_y(x + η) − f_y(x)` as Gaussian noise grows, for a plain and
//! a score-matched classifier.
//!
//! Run: `cargo run --release --example density_profile`

use scoregrad::evaluation::{density_ratio_profile, DensityProfileConfig};
use scoregrad::objectives::{RegMode, RegularizerConfig};
use scoregrad::trainer::{train, LrSchedule, TrainConfig};
use scoregrad::Result;

fn main() -> Result<()> {
    let cfg = DensityProfileConfig {
        sigmas: vec![0.0, 0.05, 0.1, 0.2, 0.5],
        samples_per_sigma: 2,
        ..DensityProfileConfig::default()
    };
    for mode in [RegMode::None, RegMode::ScoreMatching] {
        let out = train(&TrainConfig {
            epochs: 2,
            n_train: 2000,
            n_test: 300,
            eval_train_examples: 300,
            schedule: LrSchedule::constant(0.05)?,
            reg: RegularizerConfig::preset(mode),
            ..TrainConfig::default()
        })?;
        let curve = density_ratio_profile(&out.model, &out.dataset.test, &cfg)?;
        println!("# {mode}");
        print!("{}", curve.to_csv());
    }
    Ok(())
}
