//! Hessian-trace estimators: exact (D unit-vector HVPs), Hutchinson (`vᵀHv`, v standard
//! normal) and the forward-only Taylor estimator `(2/σ²)·(f(x+v) − f(x))`, v ~ N(0, σ²I).
//!
//! The stochastic estimators draw their `i`-th probe from a stream seeded by
//! `derive_index(seed, i)`, as a standard normal `u`. Hutchinson uses `u` and Taylor uses
//! `σu`, so the two estimators share noise under a common seed.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::autodiff::{self, no_grad, GradModeGuard, Var};
use crate::error::{Error, Result};
use crate::models::{select_class, LogitModel};
use crate::rng::{derive_index, Gaussian};
use crate::tensor::Tensor;

/// Largest input width `exact_trace` accepts.
pub const EXACT_TRACE_MAX_DIM: usize = 4096;

/// Rows per batched evaluation in the exact and Hutchinson paths.
const CHUNK: usize = 256;

/// A scalar function evaluated row-wise: `[B, D] → [B]`, differentiable in its input.
pub trait ScalarField {
    fn dim(&self) -> usize;
    fn eval_var(&self, x: &Var) -> Result<Var>;

    fn eval(&self, x: &Tensor) -> Result<Tensor> {
        Ok(no_grad(|| self.eval_var(&Var::constant(x.clone())))?.value().clone())
    }
}

/// The logit `f_class` of a model.
pub struct ClassLogit<'a> {
    pub model: &'a dyn LogitModel,
    pub class: usize,
}

impl ScalarField for ClassLogit<'_> {
    fn dim(&self) -> usize {
        self.model.input_dim()
    }

    fn eval_var(&self, x: &Var) -> Result<Var> {
        let b = x.shape()[0];
        select_class(&self.model.logits_var(x)?, &vec![self.class; b])
    }
}

/// Wraps a row-wise closure.
pub struct FnField<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&Var) -> Result<Var>> ScalarField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_var(&self, x: &Var) -> Result<Var> {
        (self.f)(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceMethod {
    Exact,
    Hutchinson,
    Taylor,
}

impl TraceMethod {
    pub fn name(self) -> &'static str {
        match self {
            TraceMethod::Exact => "exact",
            TraceMethod::Hutchinson => "hutchinson",
            TraceMethod::Taylor => "taylor",
        }
    }
}

impl FromStr for TraceMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(TraceMethod::Exact),
            "hutchinson" => Ok(TraceMethod::Hutchinson),
            "taylor" => Ok(TraceMethod::Taylor),
            other => Err(Error::Usage(format!(
                "unknown trace method `{other}` (expected exact, hutchinson or taylor)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceEstimatorConfig {
    pub method: TraceMethod,
    pub samples: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for TraceEstimatorConfig {
    fn default() -> Self {
        TraceEstimatorConfig {
            method: TraceMethod::Taylor,
            samples: 1,
            sigma: 0.1,
            seed: 0,
        }
    }
}

impl TraceEstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::invalid("trace estimator needs at least one sample"));
        }
        if self.method == TraceMethod::Taylor && !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::invalid(format!(
                "taylor estimator needs a finite sigma > 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEstimate {
    pub value: f64,
    pub samples: Vec<f64>,
    pub method: TraceMethod,
    pub sigma: Option<f64>,
}

impl TraceEstimate {
    fn from_samples(samples: Vec<f64>, method: TraceMethod, sigma: Option<f64>) -> Self {
        let value = mean(&samples);
        TraceEstimate {
            value,
            samples,
            method,
            sigma,
        }
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    /// Standard error of `value` (0 for a single sample).
    pub fn std_error(&self) -> f64 {
        let n = self.samples.len();
        if n < 2 {
            return 0.0;
        }
        (sample_variance(&self.samples) / n as f64).sqrt()
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample variance; 0 for fewer than two values.
pub(crate) fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

fn check_point(f: &dyn ScalarField, x: &Tensor) -> Result<usize> {
    let d = f.dim();
    if x.shape() != [d] {
        return Err(Error::ShapeMismatch {
            op: "trace",
            lhs: x.shape().to_vec(),
            rhs: vec![d],
        });
    }
    Ok(d)
}

fn repeat_row(x: &Tensor, n: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * x.len());
    for _ in 0..n {
        data.extend_from_slice(x.data());
    }
    Tensor::from_parts(vec![n, x.len()], data)
}

/// Standard-normal probe `u_i` for probe index `i`.
pub fn probe(seed: u64, index: usize, dim: usize) -> Vec<f64> {
    Gaussian::from_seed(derive_index(seed, index as u64)).vec(dim, 1.0)
}

/// Rows of `H(x)·v_r` for every row `v_r` of `vs`, with the Hessian taken at `x`.
fn batched_hvp(f: &dyn ScalarField, x: &Tensor, vs: &Tensor) -> Result<Tensor> {
    let _mode = GradModeGuard::set(true);
    let xs = Var::leaf(repeat_row(x, vs.rows()));
    let y = f.eval_var(&xs)?.sum();
    let g = autodiff::grad(&y, &[&xs], true)?.remove(0);
    let gv = g.mul(&Var::constant(vs.clone()))?.sum();
    Ok(autodiff::grad_tensors(&gv, &[&xs])?.remove(0))
}

/// `Σ_d e_dᵀ H e_d`, for `D ≤ EXACT_TRACE_MAX_DIM`.
pub fn exact_trace(f: &dyn ScalarField, x: &Tensor) -> Result<f64> {
    let d = check_point(f, x)?;
    if d > EXACT_TRACE_MAX_DIM {
        return Err(Error::invalid(format!(
            "exact trace needs {d} Hessian-vector products (limit {EXACT_TRACE_MAX_DIM}); \
             use the hutchinson or taylor estimator"
        )));
    }
    let mut total = 0.0;
    for start in (0..d).step_by(CHUNK) {
        let n = CHUNK.min(d - start);
        let mut basis = vec![0.0; n * d];
        for r in 0..n {
            basis[r * d + start + r] = 1.0;
        }
        let hv = batched_hvp(f, x, &Tensor::from_parts(vec![n, d], basis))?;
        for r in 0..n {
            total += hv.row(r)[start + r];
        }
    }
    Ok(total)
}

/// Hutchinson estimate with caller-supplied probes (rows of `probes`).
pub fn hutchinson_with(f: &dyn ScalarField, x: &Tensor, probes: &Tensor) -> Result<TraceEstimate> {
    let d = check_point(f, x)?;
    if probes.rank() != 2 || probes.row_len() != d || probes.rows() == 0 {
        return Err(Error::ShapeMismatch {
            op: "hutchinson",
            lhs: probes.shape().to_vec(),
            rhs: vec![d],
        });
    }
    let mut samples = Vec::with_capacity(probes.rows());
    for start in (0..probes.rows()).step_by(CHUNK) {
        let idx: Vec<usize> = (start..probes.rows().min(start + CHUNK)).collect();
        let vs = probes.gather_rows(&idx);
        let hv = batched_hvp(f, x, &vs)?;
        for r in 0..vs.rows() {
            samples.push(dot(vs.row(r), hv.row(r)));
        }
    }
    Ok(TraceEstimate::from_samples(samples, TraceMethod::Hutchinson, None))
}

pub fn hutchinson_trace(f: &dyn ScalarField, x: &Tensor, cfg: &TraceEstimatorConfig) -> Result<TraceEstimate> {
    cfg.validate()?;
    let d = check_point(f, x)?;
    hutchinson_with(f, x, &probe_matrix(cfg.seed, cfg.samples, d, 1.0))
}

/// Taylor estimate with caller-supplied perturbations `v_i` (rows, already scaled by σ).
pub fn taylor_with(f: &dyn ScalarField, x: &Tensor, sigma: f64, perturbations: &Tensor) -> Result<TraceEstimate> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid(format!("taylor estimator needs sigma > 0, got {sigma}")));
    }
    let d = check_point(f, x)?;
    if perturbations.rank() != 2 || perturbations.row_len() != d || perturbations.rows() == 0 {
        return Err(Error::ShapeMismatch {
            op: "taylor",
            lhs: perturbations.shape().to_vec(),
            rhs: vec![d],
        });
    }
    let n = perturbations.rows();
    let base = f.eval(&repeat_row(x, 1))?.data()[0];
    let shifted = f.eval(&repeat_row(x, n).add(perturbations)?)?;
    let scale = 2.0 / (sigma * sigma);
    let samples = shifted.data().iter().map(|fv| scale * (fv - base)).collect();
    Ok(TraceEstimate::from_samples(samples, TraceMethod::Taylor, Some(sigma)))
}

pub fn taylor_trace(f: &dyn ScalarField, x: &Tensor, cfg: &TraceEstimatorConfig) -> Result<TraceEstimate> {
    if !(cfg.sigma.is_finite() && cfg.sigma > 0.0) {
        return Err(Error::invalid(format!(
            "taylor estimator needs sigma > 0, got {}",
            cfg.sigma
        )));
    }
    cfg.validate()?;
    let d = check_point(f, x)?;
    taylor_with(f, x, cfg.sigma, &probe_matrix(cfg.seed, cfg.samples, d, cfg.sigma))
}

/// Dispatches on `cfg.method`. Exact results carry a single sample.
pub fn estimate_trace(f: &dyn ScalarField, x: &Tensor, cfg: &TraceEstimatorConfig) -> Result<TraceEstimate> {
    match cfg.method {
        TraceMethod::Exact => Ok(TraceEstimate::from_samples(
            vec![exact_trace(f, x)?],
            TraceMethod::Exact,
            None,
        )),
        TraceMethod::Hutchinson => hutchinson_trace(f, x, cfg),
        TraceMethod::Taylor => taylor_trace(f, x, cfg),
    }
}

/// `[n, d]` matrix whose row `i` is `scale · probe(seed, i, d)`.
pub fn probe_matrix(seed: u64, n: usize, d: usize, scale: f64) -> Tensor {
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        data.extend(probe(seed, i, d).into_iter().map(|u| scale * u));
    }
    Tensor::from_parts(vec![n, d], data)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceRow {
    pub sigma: f64,
    pub var_tte: f64,
    pub var_hutchinson: f64,
    /// `4σ⁻²‖∇f(x)‖²`. On quadratics the expected excess is this divided by N.
    pub bound: f64,
    pub n_trials: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceReport {
    pub rows: Vec<VarianceRow>,
    pub samples_per_trial: usize,
    pub grad_norm_sq: f64,
    pub warning: Option<String>,
}

impl VarianceReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("sigma,var_tte,var_hutchinson,bound,n_trials\n");
        if let Some(w) = &self.warning {
            writeln!(s, "# warning: {w}").unwrap();
        }
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{}",
                r.sigma, r.var_tte, r.var_hutchinson, r.bound, r.n_trials
            )
            .unwrap();
        }
        s
    }
}

/// Empirical variance of the N-sample Taylor and Hutchinson estimates over `trials`
/// independent trials per σ. Both estimators share probes within a trial.
pub fn estimator_variance_report(
    f: &dyn ScalarField,
    x: &Tensor,
    sigmas: &[f64],
    samples: usize,
    trials: usize,
    seed: u64,
) -> Result<VarianceReport> {
    let d = check_point(f, x)?;
    if samples == 0 || trials < 2 {
        return Err(Error::invalid("variance report needs samples ≥ 1 and trials ≥ 2"));
    }
    let (_, g) = autodiff::value_and_grad(|v| Ok(f.eval_var(&v.reshape(&[1, d])?)?.sum()), x)?;
    let grad_norm_sq = g.norm_sq();
    let warning = (trials < 30).then(|| format!("only {trials} trials; confidence intervals are unreliable below 30"));

    // one probe set per trial, reused for every σ
    let mut hutch = Vec::with_capacity(trials);
    let mut probes = Vec::with_capacity(trials);
    for t in 0..trials {
        let u = probe_matrix(derive_index(seed, t as u64), samples, d, 1.0);
        hutch.push(hutchinson_with(f, x, &u)?.value);
        probes.push(u);
    }
    let var_h = sample_variance(&hutch);

    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let mut tte = Vec::with_capacity(trials);
        for u in &probes {
            tte.push(taylor_with(f, x, sigma, &u.scale(sigma))?.value);
        }
        rows.push(VarianceRow {
            sigma,
            var_tte: sample_variance(&tte),
            var_hutchinson: var_h,
            bound: 4.0 * grad_norm_sq / (sigma * sigma),
            n_trials: trials,
        });
    }
    Ok(VarianceReport {
        rows,
        samples_per_trial: samples,
        grad_norm_sq,
        warning,
    })
}
