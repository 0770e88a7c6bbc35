//! Gradient ascent on class logits of a score-matched mixture classifier lands on the
//! class modes.
//!
//! Run: `cargo run --release --example sample_modes`

use scoregrad::data::GaussianMixtureSpec;
use scoregrad::evaluation::{initial_points, mode_recovery, sample_modes, SamplerConfig, SamplerInit};
use scoregrad::trainer::train;
use scoregrad::verify::mixture_config;
use scoregrad::Result;

fn main() -> Result<()> {
    let spec = GaussianMixtureSpec::desk_default();
    let out = train(&mixture_config())?;
    out.report.check()?;

    let sampler = SamplerConfig {
        steps: 500,
        step_size: 0.01,
        init: SamplerInit::Uniform,
        range: (-2.5, 2.5),
        ..SamplerConfig::default()
    };
    let init = initial_points(&sampler, 30, 2, None)?;
    let (run, classes) = sample_modes(&out.model, &sampler, &init)?;
    run.check()?;
    for (r, class) in classes.iter().enumerate().take(9) {
        let p = run.samples.row(r);
        println!("chain {r:>2} class {class}: ({:>6.3}, {:>6.3})", p[0], p[1]);
    }
    println!(
        "{:.0}% of chains within 3σ of a mode of their class",
        100.0 * mode_recovery(&spec, &run.samples, &classes, 3.0)
    );
    Ok(())
}
