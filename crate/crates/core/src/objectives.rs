//! Training losses: plain cross-entropy, stabilised score matching, anti-score-matching
//! and gradient-norm regularisation.
//!
//! The regulariser acts on the target-class logit `f_i` of each example:
//!
//! ```text
//! score matching        ℓ + λ·(h + ½‖∇ₓf_i‖² + μ·h²)
//! anti-score matching   ℓ − λ·min(h, τ)
//! gradient norm         ℓ + λ·½‖∇ₓf_i‖²
//! ```
//!
//! where `h` estimates the Hessian trace of `f_i` at `x`. Every term is a graph node, so
//! the total can be differentiated with respect to the parameters.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{self, GradModeGuard, Var};
use crate::error::{Error, Result};
use crate::models::{cross_entropy_rows, select_class};
use crate::tensor::Tensor;
use crate::trace::{self, TraceEstimatorConfig, TraceMethod, EXACT_TRACE_MAX_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RegMode {
    None,
    ScoreMatching,
    AntiScoreMatching,
    GradNorm,
}

impl RegMode {
    pub const ALL: [RegMode; 4] = [
        RegMode::None,
        RegMode::ScoreMatching,
        RegMode::AntiScoreMatching,
        RegMode::GradNorm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegMode::None => "none",
            RegMode::ScoreMatching => "score_matching",
            RegMode::AntiScoreMatching => "anti_score_matching",
            RegMode::GradNorm => "grad_norm",
        }
    }
}

impl fmt::Display for RegMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        RegMode::ALL.into_iter().find(|m| m.name() == norm).ok_or_else(|| {
            Error::Usage(format!(
                "unknown regularizer `{s}` (expected none, score_matching, \
                     anti_score_matching or grad_norm)"
            ))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizerConfig {
    pub mode: RegMode,
    pub lambda: f64,
    pub mu: f64,
    pub tau: f64,
    pub trace: TraceEstimatorConfig,
}

impl RegularizerConfig {
    /// Default constants for each mode: λ = 1e-3 (1e-4 for anti), μ = 1e-4, τ = 1000.
    pub fn preset(mode: RegMode) -> Self {
        RegularizerConfig {
            mode,
            lambda: match mode {
                RegMode::None => 0.0,
                RegMode::AntiScoreMatching => 1e-4,
                _ => 1e-3,
            },
            mu: 1e-4,
            tau: 1000.0,
            trace: TraceEstimatorConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::invalid(format!(
                "regularizer {what} must be finite and ≥ 0, got {v}"
            )))
        };
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad("lambda", self.lambda);
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return bad("mu", self.mu);
        }
        if self.mode == RegMode::AntiScoreMatching && !(self.tau > 0.0) {
            return Err(Error::invalid(format!(
                "anti-score-matching needs tau > 0, got {}",
                self.tau
            )));
        }
        if matches!(self.mode, RegMode::ScoreMatching | RegMode::AntiScoreMatching) {
            self.trace.validate()?;
        }
        Ok(())
    }
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        RegularizerConfig::preset(RegMode::None)
    }
}

/// Batch means of the loss terms.
///
/// `h` is the mean Hessian-trace estimate, or the mean of `min(h, τ)` in anti mode.
/// `grad_norm` is the mean of `‖∇ₓf_i‖²` without the ½ factor, `stability` the mean
/// of `h²`. Terms the active mode does not use are exactly zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub cross_entropy: f64,
    pub h: f64,
    pub grad_norm: f64,
    pub stability: f64,
}

impl LossBreakdown {
    /// Assembles a breakdown from its parts using the mode's formula.
    pub fn compose(cfg: &RegularizerConfig, ce: f64, h: f64, grad_norm: f64, stability: f64) -> Self {
        let (h, grad_norm, stability) = match cfg.mode {
            RegMode::None => (0.0, 0.0, 0.0),
            RegMode::ScoreMatching => (h, grad_norm, stability),
            RegMode::AntiScoreMatching => (h, 0.0, 0.0),
            RegMode::GradNorm => (0.0, grad_norm, 0.0),
        };
        let mut b = LossBreakdown {
            total: 0.0,
            cross_entropy: ce,
            h,
            grad_norm,
            stability,
        };
        b.total = b.reconstruct(cfg);
        b
    }

    pub fn reconstruct(&self, cfg: &RegularizerConfig) -> f64 {
        let l = cfg.lambda;
        match cfg.mode {
            RegMode::None => self.cross_entropy,
            RegMode::ScoreMatching => {
                self.cross_entropy + l * (self.h + 0.5 * self.grad_norm + cfg.mu * self.stability)
            }
            RegMode::AntiScoreMatching => self.cross_entropy - l * self.h,
            RegMode::GradNorm => self.cross_entropy + l * 0.5 * self.grad_norm,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.total, self.cross_entropy, self.h, self.grad_norm, self.stability]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Name of the first non-finite term, for divergence diagnostics.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("cross_entropy", self.cross_entropy),
            ("h", self.h),
            ("grad_norm", self.grad_norm),
            ("stability", self.stability),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }

    /// Weighted running mean, for epoch aggregation.
    pub fn accumulate(&mut self, other: &LossBreakdown, weight: f64, total_weight: f64) {
        let w = weight / total_weight;
        self.total += w * other.total;
        self.cross_entropy += w * other.cross_entropy;
        self.h += w * other.h;
        self.grad_norm += w * other.grad_norm;
        self.stability += w * other.stability;
    }
}

/// Lowest value of `λ(h + μh²)` over `h`, attained at `h = −1/(2μ)`.
pub fn stability_floor(lambda: f64, mu: f64) -> f64 {
    -lambda / (4.0 * mu)
}

/// Differentiable loss and its breakdown.
pub struct Loss {
    pub total: Var,
    pub breakdown: LossBreakdown,
    /// Per-example Hessian-trace estimates (before clamping).
    pub h_per_example: Vec<f64>,
}

fn first_non_finite(v: &Var) -> Option<usize> {
    v.value().data().iter().position(|x| !x.is_finite())
}

/// Per-example Hessian-trace estimates `[B]` of `f_{labels[b]}` at row `b` of `x`.
///
/// `x` must be a leaf requiring grad; `f0` is `select_class(logits(x), labels)`. For the
/// Taylor method the `s`-th perturbation of row `b` is `σ·probe(seeds[b], s)`.
pub fn hessian_trace_rows(
    logits: &dyn Fn(&Var) -> Result<Var>,
    x: &Var,
    f0: &Var,
    labels: &[usize],
    cfg: &TraceEstimatorConfig,
    seeds: &[u64],
) -> Result<Var> {
    let (b, d) = (x.shape()[0], x.shape()[1]);
    let n = cfg.samples;
    match cfg.method {
        TraceMethod::Taylor => {
            let mut data = Vec::with_capacity(n * b * d);
            for s in 0..n {
                for (r, &seed) in seeds.iter().enumerate() {
                    let row = &x.value().data()[r * d..(r + 1) * d];
                    let u = trace::probe(seed, s, d);
                    data.extend(row.iter().zip(u).map(|(xv, uv)| xv + cfg.sigma * uv));
                }
            }
            let noisy = Var::constant(Tensor::new(&[n * b, d], data)?);
            let rep: Vec<usize> = (0..n).flat_map(|_| labels.iter().copied()).collect();
            let fs = select_class(&logits(&noisy)?, &rep)?.reshape(&[n, b])?;
            // Σ_s f(x_b + v_bs) per example
            let stacked_sum = Var::constant(Tensor::ones(&[1, n])).matmul(&fs)?.reshape(&[b])?;
            let diff = stacked_sum.sub(&f0.scale(n as f64))?;
            Ok(diff.scale(2.0 / (n as f64 * cfg.sigma * cfg.sigma)))
        }
        TraceMethod::Hutchinson | TraceMethod::Exact => {
            if cfg.method == TraceMethod::Exact && d > EXACT_TRACE_MAX_DIM {
                return Err(Error::invalid(format!(
                    "exact trace over {d} inputs exceeds the limit of {EXACT_TRACE_MAX_DIM}"
                )));
            }
            let g = autodiff::grad(&f0.sum(), &[x], true)?.remove(0);
            let probes: Vec<Tensor> = if cfg.method == TraceMethod::Exact {
                (0..d)
                    .map(|k| {
                        let mut e = vec![0.0; b * d];
                        for r in 0..b {
                            e[r * d + k] = 1.0;
                        }
                        Tensor::from_parts(vec![b, d], e)
                    })
                    .collect()
            } else {
                (0..n)
                    .map(|s| {
                        let mut v = Vec::with_capacity(b * d);
                        for &seed in seeds {
                            v.extend(trace::probe(seed, s, d));
                        }
                        Tensor::from_parts(vec![b, d], v)
                    })
                    .collect()
            };
            let count = probes.len() as f64;
            let mut acc: Option<Var> = None;
            for v in probes {
                let v = Var::constant(v);
                let gv = g.mul(&v)?.sum();
                let hv = autodiff::grad(&gv, &[x], true)?.remove(0);
                let q = hv.mul(&v)?.sum_cols()?;
                acc = Some(match acc {
                    Some(a) => a.add(&q)?,
                    None => q,
                });
            }
            let sum = acc.expect("at least one probe");
            Ok(if cfg.method == TraceMethod::Exact {
                sum
            } else {
                sum.scale(1.0 / count)
            })
        }
    }
}

/// Regularised loss of a batch.
///
/// `logits` maps `[B, D]` to `[B, C]` with whatever parameters the caller has bound;
/// `seeds[b]` drives the estimator noise of example `b`.
pub fn regularized_loss(
    logits: &dyn Fn(&Var) -> Result<Var>,
    x: &Tensor,
    labels: &[usize],
    cfg: &RegularizerConfig,
    seeds: &[u64],
) -> Result<Loss> {
    cfg.validate()?;
    if x.rank() != 2 || x.rows() != labels.len() || seeds.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "regularized_loss",
            lhs: x.shape().to_vec(),
            rhs: vec![labels.len(), seeds.len()],
        });
    }
    let _mode = GradModeGuard::set(true);
    let needs_input_grad = cfg.mode != RegMode::None;
    let xv = if needs_input_grad {
        Var::leaf(x.clone())
    } else {
        Var::constant(x.clone())
    };
    let out = logits(&xv)?;
    let ce_rows = cross_entropy_rows(&out, labels)?;
    let ce = ce_rows.mean();

    let zero = || Var::scalar(0.0);
    let (mut h_mean, mut gn_mean, mut stab_mean) = (zero(), zero(), zero());
    let mut h_per_example = Vec::new();

    if needs_input_grad {
        let f0 = select_class(&out, labels)?;
        if matches!(cfg.mode, RegMode::ScoreMatching | RegMode::GradNorm) {
            let g = autodiff::grad(&f0.sum(), &[&xv], true)?.remove(0);
            let gn = g.square().sum_cols()?;
            if let Some(i) = first_non_finite(&gn) {
                return Err(Error::NonFinite {
                    term: "grad_norm".into(),
                    index: i,
                });
            }
            gn_mean = gn.mean();
        }
        if matches!(cfg.mode, RegMode::ScoreMatching | RegMode::AntiScoreMatching) {
            let h = hessian_trace_rows(logits, &xv, &f0, labels, &cfg.trace, seeds)?;
            if let Some(i) = first_non_finite(&h) {
                return Err(Error::NonFinite {
                    term: "h".into(),
                    index: i,
                });
            }
            h_per_example = h.value().to_vec();
            if cfg.mode == RegMode::AntiScoreMatching {
                h_mean = h.clamp_max(cfg.tau).mean();
            } else {
                stab_mean = h.square().mean();
                h_mean = h.mean();
            }
        }
    }

    let l = cfg.lambda;
    let total = match cfg.mode {
        RegMode::None => ce.clone(),
        RegMode::ScoreMatching => {
            let reg = h_mean.add(&gn_mean.scale(0.5))?.add(&stab_mean.scale(cfg.mu))?;
            ce.add(&reg.scale(l))?
        }
        RegMode::AntiScoreMatching => ce.sub(&h_mean.scale(l))?,
        RegMode::GradNorm => ce.add(&gn_mean.scale(0.5 * l))?,
    };
    let mut breakdown = LossBreakdown::compose(cfg, ce.item()?, h_mean.item()?, gn_mean.item()?, stab_mean.item()?);
    breakdown.total = total.item()?;
    Ok(Loss {
        total,
        breakdown,
        h_per_example,
    })
}

/// Finite-sample score-matching objective with exact traces:
/// mean over rows of `tr ∇ₓ²f_i(x) + ½‖∇ₓf_i(x)‖²`.
pub fn score_matching_objective_exact(
    logits: &dyn Fn(&Var) -> Result<Var>,
    x: &Tensor,
    classes: &[usize],
) -> Result<f64> {
    if x.rank() != 2 || x.rows() != classes.len() {
        return Err(Error::ShapeMismatch {
            op: "score_matching_objective_exact",
            lhs: x.shape().to_vec(),
            rhs: vec![classes.len()],
        });
    }
    let _mode = GradModeGuard::set(true);
    let xv = Var::leaf(x.clone());
    let f0 = select_class(&logits(&xv)?, classes)?;
    let exact = TraceEstimatorConfig {
        method: TraceMethod::Exact,
        ..TraceEstimatorConfig::default()
    };
    let h = hessian_trace_rows(logits, &xv, &f0, classes, &exact, &vec![0; classes.len()])?;
    let g = autodiff::grad(&f0.sum(), &[&xv], false)?.remove(0);
    let gn = g.value().mul(g.value())?.sum() / classes.len() as f64;
    Ok(h.value().mean() + 0.5 * gn)
}

#[cfg(test)]
mod tests;
