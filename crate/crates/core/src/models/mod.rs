//! Softmax classifiers whose logits double as un-normalised class-conditional
//! log-densities, plus the cross-entropy loss written as `-f_i + logsumexp(f)`.

pub mod checkpoint;
mod params;

use crate::autodiff::{self, no_grad, Var};
use crate::error::{Error, Result};
use crate::rng::Gaussian;
use crate::tensor::{ConvGeom, Tensor};

pub use params::ParamSet;

/// Sharpness used by every score-matched model.
pub const DEFAULT_BETA: f64 = 10.0;

/// Spatial layout of one input; `dim() = height·width·channels`, stored NHWC.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InputShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl InputShape {
    /// A plain feature vector.
    pub fn flat(dim: usize) -> Self {
        InputShape {
            height: 1,
            width: 1,
            channels: dim,
        }
    }

    pub fn image(height: usize, width: usize, channels: usize) -> Self {
        InputShape {
            height,
            width,
            channels,
        }
    }

    pub fn dim(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Softplus(f64),
    Relu,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ArchPreset {
    /// Two softplus hidden layers of 256 units.
    MlpSmall,
    /// Two stride-2 convolutions (8, 16 channels) then 128 hidden units, softplus.
    ConvSmall,
    /// Independent ReLU evaluator: convolutions with 16 and 32 channels, 128 hidden units.
    ConvEval,
    /// Single affine layer.
    Linear,
    /// Softplus MLP with the given hidden widths.
    Mlp(Vec<usize>),
}

impl ArchPreset {
    pub fn name(&self) -> String {
        match self {
            ArchPreset::MlpSmall => "mlp-small".into(),
            ArchPreset::ConvSmall => "conv-small".into(),
            ArchPreset::ConvEval => "conv-eval".into(),
            ArchPreset::Linear => "linear".into(),
            ArchPreset::Mlp(h) => format!("mlp:{}", h.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",")),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "mlp-small" => ArchPreset::MlpSmall,
            "conv-small" => ArchPreset::ConvSmall,
            "conv-eval" => ArchPreset::ConvEval,
            "linear" => ArchPreset::Linear,
            other => {
                let Some(spec) = other.strip_prefix("mlp:") else {
                    return Err(Error::Usage(format!("unknown architecture preset `{other}`")));
                };
                let widths = spec
                    .split(',')
                    .map(|w| w.trim().parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::Usage(format!("bad MLP widths `{spec}`")))?;
                if widths.contains(&0) {
                    return Err(Error::Usage(format!("zero-width layer in `{spec}`")));
                }
                ArchPreset::Mlp(widths)
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Affine {
        inputs: usize,
        outputs: usize,
    },
    Conv {
        in_h: usize,
        in_w: usize,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
}

impl Layer {
    fn conv_geom(&self, batch: usize) -> Option<ConvGeom> {
        match *self {
            Layer::Conv {
                in_h,
                in_w,
                in_c,
                kernel,
                stride,
                pad,
                ..
            } => Some(ConvGeom {
                batch,
                in_h,
                in_w,
                in_c,
                kernel,
                stride,
                pad,
            }),
            Layer::Affine { .. } => None,
        }
    }

    fn param_shapes(&self) -> ([usize; 2], usize) {
        match *self {
            Layer::Affine { inputs, outputs } => ([inputs, outputs], outputs),
            Layer::Conv {
                in_c, out_c, kernel, ..
            } => ([kernel * kernel * in_c, out_c], out_c),
        }
    }

    fn fan_in(&self) -> usize {
        self.param_shapes().0[0]
    }
}

/// Resolved layer list for a preset at a given input shape and class count.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub preset: ArchPreset,
    pub input: InputShape,
    pub classes: usize,
    /// Softplus sharpness given at build time (unused by ReLU presets).
    pub beta: f64,
    pub activation: Activation,
    pub layers: Vec<Layer>,
}

impl Architecture {
    pub fn build(preset: ArchPreset, input: InputShape, classes: usize, beta: f64) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid("a softmax classifier needs at least 2 classes"));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!(
                "softplus sharpness must be positive, got {beta}"
            )));
        }
        let d = input.dim();
        let mut layers = Vec::new();
        let mlp = |widths: &[usize], layers: &mut Vec<Layer>| {
            let mut prev = d;
            for &w in widths {
                layers.push(Layer::Affine {
                    inputs: prev,
                    outputs: w,
                });
                prev = w;
            }
            layers.push(Layer::Affine {
                inputs: prev,
                outputs: classes,
            });
        };
        let activation = match preset {
            ArchPreset::ConvEval => Activation::Relu,
            _ => Activation::Softplus(beta),
        };
        match &preset {
            ArchPreset::MlpSmall => mlp(&[256, 256], &mut layers),
            ArchPreset::Linear => mlp(&[], &mut layers),
            ArchPreset::Mlp(widths) => mlp(widths, &mut layers),
            ArchPreset::ConvSmall | ArchPreset::ConvEval => {
                if input.height < 4 || input.width < 4 {
                    return Err(Error::invalid(format!(
                        "{} needs image input, got {input:?}",
                        preset.name()
                    )));
                }
                let (c1, c2) = if preset == ArchPreset::ConvSmall {
                    (8, 16)
                } else {
                    (16, 32)
                };
                let (mut h, mut w, mut c) = (input.height, input.width, input.channels);
                for out_c in [c1, c2] {
                    layers.push(Layer::Conv {
                        in_h: h,
                        in_w: w,
                        in_c: c,
                        out_c,
                        kernel: 3,
                        stride: 2,
                        pad: 1,
                    });
                    h = (h + 2 - 3) / 2 + 1;
                    w = (w + 2 - 3) / 2 + 1;
                    c = out_c;
                }
                layers.push(Layer::Affine {
                    inputs: h * w * c,
                    outputs: 128,
                });
                layers.push(Layer::Affine {
                    inputs: 128,
                    outputs: classes,
                });
            }
        }
        Ok(Architecture {
            preset,
            input,
            classes,
            beta,
            activation,
            layers,
        })
    }
}

/// Anything that maps a batch `[B, D]` to logits `[B, C]` differentiably.
pub trait LogitModel {
    fn input_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    /// Logits with parameters held constant; gradients flow to `x` only.
    fn logits_var(&self, x: &Var) -> Result<Var>;

    /// Logits for `[D]` or `[B, D]` input, no graph recorded.
    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let xb = as_batch(x, self.input_dim())?;
        let out = no_grad(|| self.logits_var(&Var::constant(xb)))?;
        if x.rank() == 1 {
            out.value().reshape(&[self.num_classes()])
        } else {
            Ok(out.value().clone())
        }
    }
}

/// Views `[D]` as `[1, D]`; checks the feature width.
pub fn as_batch(x: &Tensor, dim: usize) -> Result<Tensor> {
    let ok = match x.shape() {
        [d] => *d == dim,
        [_, d] => *d == dim,
        _ => false,
    };
    if !ok {
        return Err(Error::ShapeMismatch {
            op: "logits",
            lhs: x.shape().to_vec(),
            rhs: vec![dim],
        });
    }
    if x.rank() == 1 {
        x.reshape(&[1, dim])
    } else {
        Ok(x.clone())
    }
}

#[derive(Clone, Debug)]
pub struct ClassifierModel {
    pub arch: Architecture,
    pub params: ParamSet,
}

impl ClassifierModel {
    /// He-scaled Gaussian weights, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut params = ParamSet::default();
        for (i, layer) in arch.layers.iter().enumerate() {
            let (wshape, bsize) = layer.param_shapes();
            let std = (2.0 / layer.fan_in() as f64).sqrt();
            let mut g = Gaussian::from_seed(crate::rng::derive_index(seed, i as u64));
            let w = Tensor::from_parts(wshape.to_vec(), g.vec(wshape[0] * wshape[1], std));
            params.insert(format!("layer{i}.weight"), w).expect("fresh names");
            params
                .insert(format!("layer{i}.bias"), Tensor::zeros(&[bsize]))
                .expect("fresh names");
        }
        ClassifierModel { arch, params }
    }

    pub fn zeros(arch: Architecture) -> Self {
        let mut m = Self::init(arch, 0);
        m.params = m.params.map(|t| Tensor::zeros(t.shape()));
        m
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    /// Forward pass with explicit parameter nodes (in `ParamSet` order).
    pub fn forward_with(&self, params: &[Var], x: &Var) -> Result<Var> {
        let d = self.arch.input.dim();
        let batch = match x.shape() {
            [b, dd] if *dd == d => *b,
            s => {
                return Err(Error::ShapeMismatch {
                    op: "logits",
                    lhs: s.to_vec(),
                    rhs: vec![d],
                })
            }
        };
        if params.len() != 2 * self.arch.layers.len() {
            return Err(Error::invalid("parameter count does not match architecture"));
        }
        let last = self.arch.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.arch.layers.iter().enumerate() {
            let (w, b) = (&params[2 * i], &params[2 * i + 1]);
            h = match layer.conv_geom(batch) {
                Some(g) => {
                    let img = h.reshape(&g.input_shape())?;
                    img.conv2d(w, b, &g)?
                }
                None => {
                    let flat = h.value().len() / batch;
                    h.reshape(&[batch, flat])?.affine(w, b)?
                }
            };
            if i != last {
                h = match self.arch.activation {
                    Activation::Softplus(beta) => h.softplus(beta),
                    Activation::Relu => h.relu(),
                };
            }
        }
        Ok(h)
    }

    pub fn leaf_params(&self) -> Vec<Var> {
        self.params.iter().map(|(_, t)| Var::leaf(t.clone())).collect()
    }

    pub fn const_params(&self) -> Vec<Var> {
        self.params.iter().map(|(_, t)| Var::constant(t.clone())).collect()
    }
}

impl LogitModel for ClassifierModel {
    fn input_dim(&self) -> usize {
        self.arch.input.dim()
    }

    fn num_classes(&self) -> usize {
        self.arch.classes
    }

    fn logits_var(&self, x: &Var) -> Result<Var> {
        self.forward_with(&self.const_params(), x)
    }
}

/// `ℓ_i = -f_i + log Σ_j exp(f_j)` for one logit vector.
pub fn cross_entropy(logits: &[f64], class: usize) -> Result<f64> {
    let c = logits.len();
    if c < 2 {
        return Err(Error::invalid(format!(
            "cross-entropy needs at least 2 classes, got {c}"
        )));
    }
    if class >= c {
        return Err(Error::invalid(format!("class {class} out of range for {c} logits")));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|f| (f - m).exp()).sum::<f64>().ln();
    Ok(lse - logits[class])
}

/// Stabilised softmax.
pub fn softmax_probs(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|f| (f - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Per-example cross-entropy `[B]` from logits `[B, C]`.
pub fn cross_entropy_rows(logits: &Var, labels: &[usize]) -> Result<Var> {
    let c = logits.shape().get(1).copied().unwrap_or(0);
    if c < 2 {
        return Err(Error::invalid("cross-entropy needs at least 2 classes"));
    }
    let picked = select_class(logits, labels)?;
    logits.log_sum_exp_rows()?.sub(&picked)
}

/// `f_{labels[b]}` for every row of `[B, C]` logits.
pub fn select_class(logits: &Var, labels: &[usize]) -> Result<Var> {
    let c = logits.shape().get(1).copied().unwrap_or(0);
    if logits.shape().first() != Some(&labels.len()) {
        return Err(Error::ShapeMismatch {
            op: "select_class",
            lhs: logits.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    let onehot = Var::constant(Tensor::one_hot(labels, c)?);
    logits.mul(&onehot)?.sum_cols()
}

/// Logit-gradients `∇ₓ f_{class[b]}(x_b)` for every row.
pub fn logit_gradients(model: &dyn LogitModel, x: &Tensor, classes: &[usize]) -> Result<Tensor> {
    let _mode = autodiff::GradModeGuard::set(true);
    let xv = Var::leaf(as_batch(x, model.input_dim())?);
    let f = select_class(&model.logits_var(&xv)?, classes)?.sum();
    Ok(autodiff::grad_tensors(&f, &[&xv])?.remove(0))
}

/// Per-example losses and loss-gradients `∇ₓ ℓ_{class[b]}(x_b)`.
pub fn loss_gradients(model: &dyn LogitModel, x: &Tensor, classes: &[usize]) -> Result<(Vec<f64>, Tensor)> {
    let _mode = autodiff::GradModeGuard::set(true);
    let xv = Var::leaf(as_batch(x, model.input_dim())?);
    let losses = cross_entropy_rows(&model.logits_var(&xv)?, classes)?;
    let g = autodiff::grad_tensors(&losses.sum(), &[&xv])?.remove(0);
    Ok((losses.value().to_vec(), g))
}

/// Argmax predictions (ties to the lowest class index).
pub fn predict(model: &dyn LogitModel, x: &Tensor) -> Result<Vec<usize>> {
    let xb = as_batch(x, model.input_dim())?;
    Ok(model.logits(&xb)?.argmax_rows())
}
