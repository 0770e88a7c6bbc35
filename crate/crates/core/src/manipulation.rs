//! Input-gradients are not unique: shifting all logits by a shared `g(x)` leaves the
//! classifier untouched but rewrites its logit-gradients, and a small high-frequency
//! sine added to the loss rewrites loss-gradients while barely moving the loss.

use std::fmt::Write as _;

use crate::autodiff::{self, GradModeGuard, Var};
use crate::error::{Error, Result};
use crate::models::{cross_entropy_rows, logit_gradients, loss_gradients, softmax_probs, LogitModel};
use crate::rng::Gaussian;
use crate::tensor::Tensor;

/// Scalar field `g: ℝ^D → ℝ` added to every logit.
#[derive(Clone, Debug, PartialEq)]
pub enum ShiftFn {
    Constant(f64),
    /// `wᵀx`
    Linear(Tensor),
    /// `scale · w2ᵀ softplus(W1ᵀx + b1)` with random weights.
    Mlp {
        w1: Tensor,
        b1: Tensor,
        w2: Tensor,
        scale: f64,
    },
}

impl ShiftFn {
    /// Random MLP with `hidden` units. Larger `scale` gives gradients that swamp the base model's.
    pub fn random_mlp(dim: usize, hidden: usize, scale: f64, seed: u64) -> Self {
        let mut g = Gaussian::from_seed(seed);
        let w1 = Tensor::new(&[dim, hidden], g.vec(dim * hidden, (1.0 / dim as f64).sqrt())).unwrap();
        let b1 = Tensor::vector(g.vec(hidden, 1.0));
        let w2 = Tensor::new(&[hidden, 1], g.vec(hidden, (1.0 / hidden as f64).sqrt())).unwrap();
        ShiftFn::Mlp { w1, b1, w2, scale }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ShiftFn::Constant(_) => "constant",
            ShiftFn::Linear(_) => "linear",
            ShiftFn::Mlp { .. } => "mlp",
        }
    }

    /// `[B, D] → [B]`.
    pub fn eval_var(&self, x: &Var) -> Result<Var> {
        let b = x.shape()[0];
        match self {
            ShiftFn::Constant(c) => Ok(Var::constant(Tensor::full(&[b], *c))),
            ShiftFn::Linear(w) => {
                let wm = Var::constant(w.reshape(&[w.len(), 1])?);
                x.matmul(&wm)?.reshape(&[b])
            }
            ShiftFn::Mlp { w1, b1, w2, scale } => {
                let h = x
                    .affine(&Var::constant(w1.clone()), &Var::constant(b1.clone()))?
                    .softplus(1.0);
                Ok(h.matmul(&Var::constant(w2.clone()))?.reshape(&[b])?.scale(*scale))
            }
        }
    }
}

/// `f̃_i(x) = f_i(x) + g(x)` for every class.
pub struct LogitShim<'a> {
    pub base: &'a dyn LogitModel,
    pub shift: ShiftFn,
}

impl<'a> LogitShim<'a> {
    pub fn new(base: &'a dyn LogitModel, shift: ShiftFn) -> Result<Self> {
        if let ShiftFn::Linear(w) = &shift {
            if w.len() != base.input_dim() {
                return Err(Error::invalid(format!(
                    "linear shift has {} weights, model takes {}",
                    w.len(),
                    base.input_dim()
                )));
            }
        }
        if let ShiftFn::Mlp { w1, .. } = &shift {
            if w1.shape()[0] != base.input_dim() {
                return Err(Error::invalid("MLP shift input width differs from the model"));
            }
        }
        Ok(LogitShim { base, shift })
    }
}

impl LogitModel for LogitShim<'_> {
    fn input_dim(&self) -> usize {
        self.base.input_dim()
    }

    fn num_classes(&self) -> usize {
        self.base.num_classes()
    }

    fn logits_var(&self, x: &Var) -> Result<Var> {
        let f = self.base.logits_var(x)?;
        let g = self.shift.eval_var(x)?.broadcast_cols(self.num_classes())?;
        f.add(&g)
    }
}

pub fn shim_logits(base: &dyn LogitModel, shift: ShiftFn) -> Result<LogitShim<'_>> {
    LogitShim::new(base, shift)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 && nb == 0.0 {
        1.0
    } else if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftInvarianceReport {
    pub shift: &'static str,
    pub examples: usize,
    pub max_loss_diff: f64,
    pub max_loss_grad_diff_inf: f64,
    pub max_prob_diff: f64,
    pub predictions_agree: bool,
    /// Mean cosine between base and shimmed logit-gradients of the labelled class.
    pub mean_logit_grad_cosine: f64,
}

impl ShiftInvarianceReport {
    pub const TOLERANCE: f64 = 1e-8;

    pub fn passed(&self) -> bool {
        self.max_loss_diff < Self::TOLERANCE && self.max_loss_grad_diff_inf < Self::TOLERANCE
    }

    pub const CSV_HEADER: &'static str =
        "shift,examples,max_loss_diff,max_loss_grad_diff_inf,max_prob_diff,predictions_agree,mean_logit_grad_cosine,passed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:e},{:e},{:e},{},{},{}",
            self.shift,
            self.examples,
            self.max_loss_diff,
            self.max_loss_grad_diff_inf,
            self.max_prob_diff,
            self.predictions_agree,
            self.mean_logit_grad_cosine,
            self.passed()
        )
    }
}

/// Compares a model with its shimmed copy on `x: [B, D]` with `labels`.
pub fn verify_shift_invariance(
    model: &dyn LogitModel,
    shift: &ShiftFn,
    x: &Tensor,
    labels: &[usize],
) -> Result<ShiftInvarianceReport> {
    let shim = LogitShim::new(model, shift.clone())?;
    let (l0, g0) = loss_gradients(model, x, labels)?;
    let (l1, g1) = loss_gradients(&shim, x, labels)?;
    let max_loss_diff = l0.iter().zip(&l1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let max_loss_grad_diff_inf = g0.sub(&g1)?.max_abs();

    let z0 = model.logits(x)?;
    let z1 = shim.logits(x)?;
    let mut max_prob_diff = 0.0_f64;
    for r in 0..z0.rows() {
        let p0 = softmax_probs(z0.row(r));
        let p1 = softmax_probs(z1.row(r));
        for (a, b) in p0.iter().zip(&p1) {
            max_prob_diff = max_prob_diff.max((a - b).abs());
        }
    }
    let predictions_agree = z0.argmax_rows() == z1.argmax_rows();

    let lg0 = logit_gradients(model, x, labels)?;
    let lg1 = logit_gradients(&shim, x, labels)?;
    let n = lg0.rows();
    let mean_logit_grad_cosine = (0..n).map(|r| cosine(lg0.row(r), lg1.row(r))).sum::<f64>() / n as f64;

    Ok(ShiftInvarianceReport {
        shift: shift.name(),
        examples: n,
        max_loss_diff,
        max_loss_grad_diff_inf,
        max_prob_diff,
        predictions_agree,
        mean_logit_grad_cosine,
    })
}

/// Loss perturbation `g(x) = ε·sin(m·Σ_d x_d)`.
///
/// The sum inside the sine keeps `|g| ≤ ε` while `‖∇g‖₁ = ε·m·D·|cos(·)| ≤ m·ε·D`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinePerturbation {
    pub epsilon: f64,
    pub frequency: f64,
}

impl SinePerturbation {
    pub fn new(epsilon: f64, frequency: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite() && frequency > 0.0 && frequency.is_finite()) {
            return Err(Error::invalid(format!(
                "sine perturbation needs finite ε, m > 0 (got ε={epsilon}, m={frequency})"
            )));
        }
        Ok(SinePerturbation { epsilon, frequency })
    }

    /// `[B, D] → [B]`.
    pub fn eval_var(&self, x: &Var) -> Result<Var> {
        Ok(x.sum_cols()?.scale(self.frequency).sin().scale(self.epsilon))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SineReport {
    pub epsilon: f64,
    pub frequency: f64,
    pub dim: usize,
    pub examples: usize,
    pub max_loss_diff: f64,
    pub max_grad_diff_l1: f64,
    pub mean_grad_diff_l1: f64,
    /// `m·ε·D`
    pub grad_bound: f64,
}

impl SineReport {
    pub fn attained_fraction(&self) -> f64 {
        self.max_grad_diff_l1 / self.grad_bound
    }

    pub fn within_bounds(&self) -> bool {
        self.max_loss_diff <= self.epsilon && self.max_grad_diff_l1 <= self.grad_bound
    }

    pub const CSV_HEADER: &'static str =
        "epsilon,m,dim,examples,max_loss_diff,max_grad_diff_l1,mean_grad_diff_l1,grad_bound,attained_fraction,within_bounds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:e},{:e},{:e},{:e},{},{}",
            self.epsilon,
            self.frequency,
            self.dim,
            self.examples,
            self.max_loss_diff,
            self.max_grad_diff_l1,
            self.mean_grad_diff_l1,
            self.grad_bound,
            self.attained_fraction(),
            self.within_bounds()
        )
    }
}

/// Measures how far the sine-perturbed loss and its input-gradient move on `x: [B, D]`.
pub fn sine_perturb_report(
    model: &dyn LogitModel,
    perturbation: SinePerturbation,
    x: &Tensor,
    labels: &[usize],
) -> Result<SineReport> {
    let _mode = GradModeGuard::set(true);
    let xv = Var::leaf(x.clone());
    let base = cross_entropy_rows(&model.logits_var(&xv)?, labels)?;
    let perturbed = base.add(&perturbation.eval_var(&xv)?)?;
    let g0 = autodiff::grad_tensors(&base.sum(), &[&xv])?.remove(0);
    let g1 = autodiff::grad_tensors(&perturbed.sum(), &[&xv])?.remove(0);
    let max_loss_diff = base
        .value()
        .data()
        .iter()
        .zip(perturbed.value().data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let diff = g1.sub(&g0)?;
    let l1: Vec<f64> = (0..diff.rows())
        .map(|r| diff.row(r).iter().map(|v| v.abs()).sum())
        .collect();
    let d = x.row_len();
    Ok(SineReport {
        epsilon: perturbation.epsilon,
        frequency: perturbation.frequency,
        dim: d,
        examples: l1.len(),
        max_loss_diff,
        max_grad_diff_l1: l1.iter().copied().fold(0.0, f64::max),
        mean_grad_diff_l1: l1.iter().sum::<f64>() / l1.len() as f64,
        grad_bound: perturbation.frequency * perturbation.epsilon * d as f64,
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::invalid("log-log slope needs ≥ 2 positive points"));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

pub fn sine_reports_csv(reports: &[SineReport]) -> String {
    let mut s = format!("{}\n", SineReport::CSV_HEADER);
    for r in reports {
        writeln!(s, "{}", r.csv_row()).unwrap();
    }
    s
}

#[cfg(test)]
mod tests;
