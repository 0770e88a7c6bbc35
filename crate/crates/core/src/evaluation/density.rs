use crate::data::Split;
use crate::error::{Error, Result};
use crate::models::LogitModel;
use crate::rng::{derive, derive_index, Gaussian};
use crate::tensor::Tensor;

use super::{mean_se, CurvePoint, EvaluationCurve};

/// Which logit a profile follows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ClassSource {
    #[default]
    TrueLabel,
    Predicted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityProfileConfig {
    /// Noise scales, ascending, starting at 0.
    pub sigmas: Vec<f64>,
    pub samples_per_sigma: usize,
    pub seed: u64,
    pub class_source: ClassSource,
}

impl Default for DensityProfileConfig {
    fn default() -> Self {
        DensityProfileConfig {
            sigmas: vec![0.0, 0.05, 0.1, 0.2, 0.5, 1.0],
            samples_per_sigma: 4,
            seed: 0,
            class_source: ClassSource::TrueLabel,
        }
    }
}

impl DensityProfileConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigmas.first() != Some(&0.0) {
            return Err(Error::invalid("density profile σ grid must start at 0"));
        }
        if self.sigmas.windows(2).any(|w| !(w[1] > w[0])) || self.sigmas.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid(
                "density profile σ grid must be finite and strictly ascending",
            ));
        }
        if self.samples_per_sigma == 0 {
            return Err(Error::invalid("samples_per_sigma must be at least 1"));
        }
        Ok(())
    }
}

fn class_logits(model: &dyn LogitModel, x: &Tensor, classes: &[usize]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(classes.len());
    for start in (0..x.rows()).step_by(256) {
        let idx: Vec<usize> = (start..x.rows().min(start + 256)).collect();
        let z = model.logits(&x.gather_rows(&idx))?;
        out.extend(idx.iter().enumerate().map(|(r, &i)| z.row(r)[classes[i]]));
    }
    Ok(out)
}

/// Mean log density ratio `f_i(x + η) − f_i(x)` with `η ~ N(0, σ²I)` for each σ.
///
/// Extra columns: `exp_mean` (the exponentiated mean) and `mean_ratio` (mean of the ratios).
/// Noise directions are shared across σ, so rows differ only in scale.
pub fn density_ratio_profile(
    model: &dyn LogitModel,
    split: &Split,
    cfg: &DensityProfileConfig,
) -> Result<EvaluationCurve> {
    cfg.validate()?;
    let n = split.len();
    let d = model.input_dim();
    let classes = match cfg.class_source {
        ClassSource::TrueLabel => split.y.clone(),
        ClassSource::Predicted => model.logits(&split.x)?.argmax_rows(),
    };
    let f0 = class_logits(model, &split.x, &classes)?;
    let noise_seed = derive(cfg.seed, "density-noise");

    let mut curve = EvaluationCurve::new("density_ratio", "sigma");
    curve.extra_columns = vec!["exp_mean".into(), "mean_ratio".into()];
    for &sigma in &cfg.sigmas {
        let mut log_ratios = Vec::with_capacity(n * cfg.samples_per_sigma);
        for s in 0..cfg.samples_per_sigma {
            let mut noisy = split.x.to_vec();
            for (j, row) in noisy.chunks_mut(d).enumerate() {
                let mut g = Gaussian::from_seed(derive_index(derive_index(noise_seed, j as u64), s as u64));
                for v in row.iter_mut() {
                    *v += sigma * g.sample();
                }
            }
            let f = class_logits(model, &Tensor::new(&[n, d], noisy)?, &classes)?;
            log_ratios.extend(f.iter().zip(&f0).map(|(a, b)| a - b));
        }
        let (mean, se) = mean_se(&log_ratios);
        let mean_ratio = log_ratios.iter().map(|v| v.exp()).sum::<f64>() / log_ratios.len() as f64;
        curve.points.push(CurvePoint {
            abscissa: sigma,
            value: mean,
            spread: se,
            count: log_ratios.len(),
            extra: vec![mean.exp(), mean_ratio],
        });
    }
    Ok(curve)
}
