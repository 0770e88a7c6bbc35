//! Parses a `key = value` experiment config, applies an override and prints the
//! fully resolved form.
//!
//! Run: `cargo run --release --example experiment_config`

use scoregrad::config::ExperimentConfig;
use scoregrad::kv::KvMap;
use scoregrad::Result;

const TEXT: &str = "
# score matching on the synthetic mixture
seed = 3
data.source = mixture
model.arch = mlp-small
model.beta = 1
reg.mode = score_matching
reg.lambda = 0.1
trace.method = exact
train.epochs = 30
train.schedule = 0:0.01,20:0.002
";

fn main() -> Result<()> {
    let mut kv = KvMap::parse(TEXT, "inline")?;
    kv.insert("train.batch_size", "64");
    let cfg = ExperimentConfig::from_kv(kv)?;
    print!("{}", cfg.to_kv());

    // unknown keys are rejected with their location
    match ExperimentConfig::parse("train.epoch = 3\n", "typo.kv") {
        Ok(_) => println!("unexpectedly accepted"),
        Err(e) => println!("\nrejected: {e}"),
    }
    Ok(())
}
