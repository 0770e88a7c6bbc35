//! Measurements on trained classifiers read as implicit densities.

mod density;
mod perturbation;
mod saliency;
mod sampling;

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub use density::{density_ratio_profile, ClassSource, DensityProfileConfig};
pub use perturbation::{
    curve_area, perturb_images, pixel_perturbation, saliency_for, DeletionOrder, PerturbationConfig, Replacement,
    SaliencySource,
};
pub use saliency::{export_saliency, read_pgm, saliency_maps, write_pgm, SaliencyMap};
pub use sampling::{
    binomial_se, gan_test, generate_and_score, initial_points, mode_recovery, sample_modes, sample_rows, GanTestResult,
    SampleRun, SamplerConfig, SamplerInit,
};

/// One row of an [`EvaluationCurve`].
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub abscissa: f64,
    pub value: f64,
    /// Standard error of `value`.
    pub spread: f64,
    pub count: usize,
    /// Values for the curve's extra columns, in order.
    pub extra: Vec<f64>,
}

/// Labelled series of `(abscissa, value ± spread)` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationCurve {
    pub label: String,
    /// Header of the first column (`sigma`, `fraction`, `step`).
    pub abscissa: String,
    pub extra_columns: Vec<String>,
    pub points: Vec<CurvePoint>,
}

impl EvaluationCurve {
    pub fn new(label: impl Into<String>, abscissa: impl Into<String>) -> Self {
        EvaluationCurve {
            label: label.into(),
            abscissa: abscissa.into(),
            extra_columns: Vec::new(),
            points: Vec::new(),
        }
    }

    pub fn value_at(&self, abscissa: f64) -> Option<f64> {
        self.points.iter().find(|p| p.abscissa == abscissa).map(|p| p.value)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{},value,spread,count", self.abscissa);
        for c in &self.extra_columns {
            write!(s, ",{c}").unwrap();
        }
        s.push('\n');
        for p in &self.points {
            write!(s, "{},{},{},{}", p.abscissa, p.value, p.spread, p.count).unwrap();
            for v in &p.extra {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Inverse of [`to_csv`](Self::to_csv); the label is supplied by the caller.
    pub fn from_csv(label: &str, text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::invalid("empty curve CSV"))?
            .split(',')
            .collect();
        if header.len() < 4 || header[1..4] != ["value", "spread", "count"] {
            return Err(Error::invalid(format!("not a curve header: {}", header.join(","))));
        }
        let mut curve = EvaluationCurve::new(label, header[0]);
        curve.extra_columns = header[4..].iter().map(|s| s.to_string()).collect();
        for (i, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != header.len() {
                return Err(Error::invalid(format!("curve row {} has {} cells", i + 1, cells.len())));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::invalid(format!("bad number `{s}` in curve row {}", i + 1)))
            };
            curve.points.push(CurvePoint {
                abscissa: num(cells[0])?,
                value: num(cells[1])?,
                spread: num(cells[2])?,
                count: cells[3]
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad count in curve row {}", i + 1)))?,
                extra: cells[4..].iter().map(|c| num(c)).collect::<Result<_>>()?,
            });
        }
        Ok(curve)
    }
}

/// Mean and standard error of the mean.
pub(crate) fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (m, 0.0);
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}
