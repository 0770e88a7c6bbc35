//! Hessian-trace estimators side by side: exact, Hutchinson and the Taylor (finite
//! difference) estimator, on a trained classifier logit and on `½‖x‖²`.
//!
//! Run: `cargo run --release --example trace_estimators`

use scoregrad::data::DataSource;
use scoregrad::models::{ArchPreset, Architecture, ClassifierModel};
use scoregrad::trace::{
    estimate_trace, estimator_variance_report, ClassLogit, FnField, TraceEstimatorConfig, TraceMethod,
};
use scoregrad::{Result, Tensor, Var};

fn main() -> Result<()> {
    let ds = DataSource::Mixture(None).open(10, 10, 0)?;
    let arch = Architecture::build(ArchPreset::MlpSmall, ds.input, ds.classes, 1.0)?;
    let model = ClassifierModel::init(arch, 7);
    let x = Tensor::vector(ds.test.x.row(0).to_vec());
    let field = ClassLogit {
        model: &model,
        class: ds.test.y[0],
    };

    println!("method      estimate   std error  samples");
    for method in [TraceMethod::Exact, TraceMethod::Hutchinson, TraceMethod::Taylor] {
        let cfg = TraceEstimatorConfig {
            method,
            samples: 2000,
            sigma: 0.05,
            seed: 1,
        };
        let est = estimate_trace(&field, &x, &cfg)?;
        println!(
            "{:<10} {:>9.4} {:>11.4} {:>8}",
            method.name(),
            est.value,
            est.std_error(),
            est.n()
        );
    }

    // the Taylor estimator pays 4σ⁻²‖∇f‖² extra variance per probe
    let half_sq = FnField {
        dim: 2,
        f: |x: &Var| -> Result<Var> { Ok(x.square().sum_cols()?.scale(0.5)) },
    };
    let report = estimator_variance_report(
        &half_sq,
        &Tensor::vector(vec![3.0, 4.0]),
        &[0.05, 0.1, 0.5, 1.0],
        1,
        1000,
        4,
    )?;
    print!("\n{}", report.to_csv());
    Ok(())
}
