//! Input gradients of a softmax classifier are not pinned down by its predictions.
//!
//! Adding any function of `x` to every logit leaves the loss untouched while rewriting
//! the logit gradients. A small high-frequency term on the loss moves its input gradient
//! by up to `m·ε·D` while moving the loss by at most `ε`.
//!
//! Run: `cargo run --release --example gradient_manipulation`

use scoregrad::manipulation::{
    log_log_slope, sine_perturb_report, verify_shift_invariance, ShiftFn, ShiftInvarianceReport, SinePerturbation,
};
use scoregrad::rng::Gaussian;
use scoregrad::trainer::{train, LrSchedule, TrainConfig};
use scoregrad::{Result, Tensor};

fn main() -> Result<()> {
    let cfg = TrainConfig {
        epochs: 1,
        n_train: 1000,
        n_test: 128,
        eval_train_examples: 128,
        schedule: LrSchedule::constant(0.05)?,
        ..TrainConfig::default()
    };
    let out = train(&cfg)?;
    let (x, y) = (&out.dataset.test.x, &out.dataset.test.y);
    let d = x.row_len();

    println!("{}", ShiftInvarianceReport::CSV_HEADER);
    for shift in [
        ShiftFn::Constant(3.7),
        ShiftFn::Linear(Tensor::new(&[d], Gaussian::from_seed(11).vec(d, 1.0))?),
        ShiftFn::random_mlp(d, 64, 100.0, 12),
    ] {
        println!("{}", verify_shift_invariance(&out.model, &shift, x, y)?.csv_row());
    }

    let mut points = Vec::new();
    for m in [10.0, 1e3, 1e5] {
        let r = sine_perturb_report(&out.model, SinePerturbation::new(0.01, m)?, x, y)?;
        println!(
            "m = {m:>6}: |Δloss| ≤ {:.1e}, mean ‖Δ∇ℓ‖₁ {:.3e}, bound {:.3e}",
            r.max_loss_diff, r.mean_grad_diff_l1, r.grad_bound
        );
        points.push((m, r.mean_grad_diff_l1));
    }
    println!(
        "log-log slope of gradient change against m: {:.3}",
        log_log_slope(&points)?
    );
    Ok(())
}
