//! Pixel-deletion curves on a task whose informative pixels are known.
//!
//! Deleting the least relevant pixels first should leave accuracy intact until only the
//! informative ones remain, if the saliency is any good.
//!
//! Run: `cargo run --release --example pixel_perturbation`

use scoregrad::data::{make_informative_pixels_dataset, DataSource};
use scoregrad::evaluation::{curve_area, pixel_perturbation, PerturbationConfig, SaliencySource};
use scoregrad::models::ArchPreset;
use scoregrad::trainer::{init_model, train_model, LrSchedule, TrainConfig};
use scoregrad::Result;

fn main() -> Result<()> {
    let (d, k) = (64, 4);
    let ds = make_informative_pixels_dataset(d, k, 2000, 8)?;
    let cfg = TrainConfig {
        epochs: 10,
        arch: ArchPreset::Linear,
        schedule: LrSchedule::constant(0.05)?,
        data: DataSource::Informative { dim: d, k },
        eval_train_examples: 500,
        ..TrainConfig::default()
    };
    let mut model = init_model(&cfg, &ds)?;
    train_model(&mut model, &ds, &cfg, &mut |_, _| Ok(()))?.check()?;

    let pcfg = PerturbationConfig {
        fractions: vec![0.0, 0.25, 0.5, 0.75, 0.9, 60.0 / 64.0, 1.0],
        ..PerturbationConfig::default()
    };
    let positions = ds.informative.clone().expect("informative task");
    let sources = [
        ("ideal", SaliencySource::Ideal(positions)),
        ("model gradient", SaliencySource::Model(&model)),
        ("constant", SaliencySource::Constant),
    ];
    for (name, source) in &sources {
        let curve = pixel_perturbation(&model, source, &ds.test, ds.input, &pcfg)?;
        let accs: Vec<String> = curve.points.iter().map(|p| format!("{:.3}", p.value)).collect();
        println!("{name:<15} area {:.4}  [{}]", curve_area(&curve, 1.0), accs.join(", "));
    }
    Ok(())
}
