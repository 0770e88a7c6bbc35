//! GAN-test: samples drawn from one classifier, labelled by another.
//!
//! Run: `cargo run --release --example gan_test`

use scoregrad::evaluation::{generate_and_score, SamplerConfig};
use scoregrad::models::ArchPreset;
use scoregrad::objectives::{RegMode, RegularizerConfig};
use scoregrad::trainer::{init_model, train_model, LrSchedule, TrainConfig};
use scoregrad::Result;

fn main() -> Result<()> {
    let base = TrainConfig {
        epochs: 3,
        n_train: 3000,
        n_test: 500,
        eval_train_examples: 500,
        schedule: LrSchedule::constant(0.05)?,
        ..TrainConfig::default()
    };
    let ds = base.data.open(base.n_train, base.n_test, 0)?;
    let fit = |cfg: TrainConfig| -> Result<_> {
        let mut m = init_model(&cfg, &ds)?;
        train_model(&mut m, &ds, &cfg, &mut |_, _| Ok(()))?.check()?;
        Ok(m)
    };
    let evaluator = fit(TrainConfig {
        arch: ArchPreset::ConvEval,
        seed: 99,
        ..base.clone()
    })?;
    let (lo, hi) = ds.input_range(0.0, 1.0);
    let sampler = SamplerConfig {
        steps: 100,
        step_size: 0.05,
        range: (lo, hi),
        ..SamplerConfig::default()
    };
    for mode in [RegMode::None, RegMode::AntiScoreMatching] {
        let generator = fit(TrainConfig {
            reg: RegularizerConfig::preset(mode),
            ..base.clone()
        })?;
        let (score, run, _) = generate_and_score(&generator, &evaluator, &sampler, 100, None)?;
        let traj = run.mean_trajectory();
        println!(
            "{:<20} GAN-test {:.2} ± {:.2}  mean logit {:.2} → {:.2}",
            mode.name(),
            score.accuracy,
            score.se(),
            traj[0],
            traj[traj.len() - 1]
        );
    }
    Ok(())
}
