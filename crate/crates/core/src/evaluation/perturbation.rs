use std::str::FromStr;

use crate::data::Split;
use crate::error::{Error, Result};
use crate::models::{InputShape, LogitModel};
use crate::tensor::Tensor;
use crate::trainer::evaluate_accuracy;

use super::saliency::{saliency_maps, SaliencyMap};
use super::sampling::binomial_se;
use super::{CurvePoint, EvaluationCurve};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DeletionOrder {
    #[default]
    LeastRelevantFirst,
    MostRelevantFirst,
}

impl FromStr for DeletionOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "least-relevant-first" | "least" => Ok(DeletionOrder::LeastRelevantFirst),
            "most-relevant-first" | "most" => Ok(DeletionOrder::MostRelevantFirst),
            _ => Err(Error::Usage(format!(
                "unknown deletion order `{s}` (least-relevant-first, most-relevant-first)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Replacement {
    /// Mean over all values of the image.
    #[default]
    ImageMean,
    /// Per-channel mean of the image.
    ChannelMean,
    Constant(f64),
}

impl FromStr for Replacement {
    type Err = Error;

    /// `image-mean`, `channel-mean` or `constant:<v>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image-mean" => Ok(Replacement::ImageMean),
            "channel-mean" => Ok(Replacement::ChannelMean),
            _ => s
                .strip_prefix("constant:")
                .and_then(|v| v.parse().ok())
                .map(Replacement::Constant)
                .ok_or_else(|| {
                    Error::Usage(format!(
                        "unknown replacement `{s}` (image-mean, channel-mean, constant:<v>)"
                    ))
                }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationConfig {
    /// Deletion fractions, ascending, including 0.
    pub fractions: Vec<f64>,
    pub order: DeletionOrder,
    pub replacement: Replacement,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            fractions: (0..=10).map(|i| i as f64 / 10.0).collect(),
            order: DeletionOrder::LeastRelevantFirst,
            replacement: Replacement::ImageMean,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.fractions.contains(&0.0) {
            return Err(Error::invalid("deletion fractions must include 0"));
        }
        if self.fractions.windows(2).any(|w| !(w[1] > w[0])) || self.fractions.iter().any(|f| !(0.0..=1.0).contains(f))
        {
            return Err(Error::invalid("deletion fractions must be ascending within [0, 1]"));
        }
        Ok(())
    }
}

/// Where pixel relevance comes from.
pub enum SaliencySource<'a> {
    /// Logit-gradient of the labelled class.
    Model(&'a dyn LogitModel),
    /// Every pixel equally relevant, so the order is row-major.
    Constant,
    /// Relevance 1 on the given pixel indices, 0 elsewhere.
    Ideal(Vec<usize>),
    Maps(Vec<SaliencyMap>),
}

pub fn saliency_for(source: &SaliencySource<'_>, split: &Split, shape: InputShape) -> Result<Vec<SaliencyMap>> {
    match source {
        SaliencySource::Model(m) => saliency_maps(*m, &split.x, &split.y, shape),
        SaliencySource::Constant => Ok(vec![SaliencyMap::constant(shape, 1.0); split.len()]),
        SaliencySource::Ideal(pos) => {
            let mut map = SaliencyMap::constant(shape, 0.0);
            for &p in pos {
                let px = p / shape.channels;
                if px >= map.values.len() {
                    return Err(Error::invalid(format!("informative index {p} outside the input")));
                }
                map.values[px] = 1.0;
            }
            Ok(vec![map; split.len()])
        }
        SaliencySource::Maps(maps) => {
            if maps.len() != split.len() {
                return Err(Error::invalid(format!(
                    "{} saliency maps for {} images",
                    maps.len(),
                    split.len()
                )));
            }
            Ok(maps.clone())
        }
    }
}

/// Pixel deletion order for one map; ties keep row-major order.
fn ranking(map: &SaliencyMap, order: DeletionOrder) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..map.values.len()).collect();
    match order {
        DeletionOrder::LeastRelevantFirst => idx.sort_by(|&a, &b| map.values[a].total_cmp(&map.values[b])),
        DeletionOrder::MostRelevantFirst => idx.sort_by(|&a, &b| map.values[b].total_cmp(&map.values[a])),
    }
    idx
}

fn deletion_count(fraction: f64, pixels: usize) -> usize {
    ((fraction * pixels as f64) + 1e-9).floor().min(pixels as f64) as usize
}

/// Images with the first `fraction` of each ranking replaced.
pub fn perturb_images(
    x: &Tensor,
    maps: &[SaliencyMap],
    shape: InputShape,
    fraction: f64,
    cfg: &PerturbationConfig,
) -> Result<Tensor> {
    let c = shape.channels;
    let k = deletion_count(fraction, shape.pixels());
    let mut out = x.to_vec();
    for (j, row) in out.chunks_mut(shape.dim()).enumerate() {
        let fill: Vec<f64> = match cfg.replacement {
            Replacement::ImageMean => vec![row.iter().sum::<f64>() / row.len() as f64; c],
            Replacement::ChannelMean => (0..c)
                .map(|ch| row.iter().skip(ch).step_by(c).sum::<f64>() / shape.pixels() as f64)
                .collect(),
            Replacement::Constant(v) => vec![v; c],
        };
        for &px in ranking(&maps[j], cfg.order).iter().take(k) {
            row[px * c..(px + 1) * c].copy_from_slice(&fill);
        }
    }
    Tensor::new(x.shape(), out)
}

/// Accuracy of `model` as growing fractions of pixels are deleted by `saliency`'s ranking.
pub fn pixel_perturbation(
    model: &dyn LogitModel,
    saliency: &SaliencySource<'_>,
    split: &Split,
    shape: InputShape,
    cfg: &PerturbationConfig,
) -> Result<EvaluationCurve> {
    cfg.validate()?;
    if model.input_dim() != shape.dim() {
        return Err(Error::invalid(format!(
            "model takes {} inputs, images have {}",
            model.input_dim(),
            shape.dim()
        )));
    }
    let maps = saliency_for(saliency, split, shape)?;
    let mut curve = EvaluationCurve::new("pixel_perturbation", "fraction");
    for &fraction in &cfg.fractions {
        let x = if fraction == 0.0 {
            split.x.clone()
        } else {
            perturb_images(&split.x, &maps, shape, fraction, cfg)?
        };
        let acc = evaluate_accuracy(model, &Split { x, y: split.y.clone() })?;
        curve.points.push(CurvePoint {
            abscissa: fraction,
            value: acc,
            spread: binomial_se(acc, split.len()),
            count: split.len(),
            extra: Vec::new(),
        });
    }
    Ok(curve)
}

/// Trapezoidal area under the curve for abscissae in `[0, upto]`.
pub fn curve_area(curve: &EvaluationCurve, upto: f64) -> f64 {
    let pts: Vec<(f64, f64)> = curve
        .points
        .iter()
        .filter(|p| p.abscissa <= upto + 1e-12)
        .map(|p| (p.abscissa, p.value))
        .collect();
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}
