//! Trains the four loss variants on synthetic glyphs and round-trips a checkpoint.
//!
//! Run: `cargo run --release --example train_regularized`

use scoregrad::models::{checkpoint, LogitModel};
use scoregrad::objectives::{RegMode, RegularizerConfig};
use scoregrad::trainer::{train, LrSchedule, TrainConfig};
use scoregrad::Result;

fn main() -> Result<()> {
    env_logger::init();
    let dir = tempfile::tempdir()?;
    for mode in RegMode::ALL {
        let cfg = TrainConfig {
            epochs: 2,
            n_train: 2000,
            n_test: 500,
            eval_train_examples: 500,
            schedule: LrSchedule::constant(0.05)?,
            reg: RegularizerConfig::preset(mode),
            checkpoint_dir: Some(dir.path().join(mode.name())),
            ..TrainConfig::default()
        };
        let out = train(&cfg)?;
        out.report.check()?;
        let last = out.report.epochs.last().expect("at least one epoch");
        println!(
            "{:<20} test acc {:.3}  ce {:.3}  h {:>9.3}  ½‖∇f‖² {:.3}",
            mode.name(),
            last.test_acc,
            last.loss.cross_entropy,
            last.loss.h,
            last.loss.grad_norm
        );

        let path = out.report.final_checkpoint.expect("checkpoint dir was set");
        let reloaded = checkpoint::load(&path)?;
        let same = reloaded.logits(&out.dataset.test.x)?.data() == out.model.logits(&out.dataset.test.x)?.data();
        println!("{:<20} reloaded {} (identical logits: {same})", "", path.display());
    }
    Ok(())
}
