//! Score matching on a 2-D Gaussian mixture, where the true class scores are known.
//!
//! Prints, per epoch, the mean squared distance between `∇ₓf_y` and `∇ₓ log p(x | y)`.
//!
//! Run: `cargo run --release --example mixture_score_matching`

use scoregrad::data::GaussianMixtureSpec;
use scoregrad::trainer::{init_model, train_model};
use scoregrad::verify::{mixture_config, score_mse};
use scoregrad::Result;

fn main() -> Result<()> {
    let spec = GaussianMixtureSpec::desk_default();
    let cfg = mixture_config();
    let ds = cfg
        .data
        .open(cfg.n_train, cfg.n_test, scoregrad::rng::derive(cfg.seed, "data"))?;
    let mut model = init_model(&cfg, &ds)?;
    println!("epoch  score_mse");
    println!("init   {:.4}", score_mse(&model, &spec, &ds.test.x, &ds.test.y)?);
    let report = train_model(&mut model, &ds, &cfg, &mut |epoch, m| {
        println!("{epoch:<6} {:.4}", score_mse(m, &spec, &ds.test.x, &ds.test.y)?);
        Ok(())
    })?;
    report.check()?;
    println!("test accuracy {:.3}", report.final_test_accuracy().unwrap_or(0.0));
    Ok(())
}
