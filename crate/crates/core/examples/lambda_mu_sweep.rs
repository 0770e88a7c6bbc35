//! Grid over the score-matching weight λ and stability weight μ.
//!
//! Run: `cargo run --release --example lambda_mu_sweep`

use scoregrad::evaluation::SamplerConfig;
use scoregrad::objectives::{RegMode, RegularizerConfig};
use scoregrad::trainer::{sweep, LrSchedule, SweepGrid, TrainConfig};
use scoregrad::Result;

fn main() -> Result<()> {
    let base = TrainConfig {
        epochs: 1,
        n_train: 1000,
        n_test: 200,
        eval_train_examples: 200,
        schedule: LrSchedule::constant(0.05)?,
        reg: RegularizerConfig::preset(RegMode::ScoreMatching),
        ..TrainConfig::default()
    };
    let grid = SweepGrid {
        lambdas: vec![1e-4, 1e-3, 1e-2],
        mus: vec![1e-4, 1e-3],
    };
    let report = sweep(&base, &grid, None, &SamplerConfig::default(), 0)?;
    print!("{}", report.to_table());
    Ok(())
}
