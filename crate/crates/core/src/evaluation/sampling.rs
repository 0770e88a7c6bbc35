use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{self, GradModeGuard, Var};
use crate::data::{GaussianMixtureSpec, Split};
use crate::error::{Error, Result};
use crate::models::{select_class, LogitModel};
use crate::rng::{derive, derive_index, stream, Gaussian};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default, PartialEq)]
pub enum SamplerInit {
    #[default]
    Uniform,
    Gaussian,
    Dataset,
}

impl FromStr for SamplerInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SamplerInit::Uniform),
            "gaussian" => Ok(SamplerInit::Gaussian),
            "dataset" => Ok(SamplerInit::Dataset),
            _ => Err(Error::Usage(format!(
                "unknown sampler init `{s}` (uniform, gaussian, dataset)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub step_size: f64,
    pub init: SamplerInit,
    /// Target class; `None` cycles through all classes.
    pub class: Option<usize>,
    /// Scale of the `√(2·step)` Langevin noise; 0 gives plain ascent.
    pub langevin_scale: f64,
    pub clip: bool,
    /// Halve a chain's step until its logit does not decrease (plain ascent only).
    pub backtracking: bool,
    /// Input range used by uniform init and clipping.
    pub range: (f64, f64),
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            steps: 500,
            step_size: 0.05,
            init: SamplerInit::Uniform,
            class: None,
            langevin_scale: 0.0,
            clip: true,
            backtracking: true,
            range: (-1.0, 1.0),
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("sampler needs steps ≥ 1 and a positive step size"));
        }
        if !(self.langevin_scale >= 0.0 && self.langevin_scale.is_finite()) {
            return Err(Error::invalid("Langevin noise scale must be finite and ≥ 0"));
        }
        if !(self.range.0 < self.range.1) {
            return Err(Error::invalid(format!("empty input range {:?}", self.range)));
        }
        Ok(())
    }

    /// Target class of chain `j` out of `classes`.
    pub fn class_of(&self, j: usize, classes: usize) -> usize {
        self.class.unwrap_or(j % classes)
    }
}

/// Starting points for `n` chains of dimension `dim`.
pub fn initial_points(cfg: &SamplerConfig, n: usize, dim: usize, data: Option<&Split>) -> Result<Tensor> {
    let base = derive(cfg.seed, "sampler-init");
    let mut out = Vec::with_capacity(n * dim);
    match cfg.init {
        SamplerInit::Uniform => {
            for j in 0..n {
                let mut rng = stream(derive_index(base, j as u64));
                out.extend((0..dim).map(|_| rng.gen_range(cfg.range.0..cfg.range.1)));
            }
        }
        SamplerInit::Gaussian => {
            for j in 0..n {
                out.extend(Gaussian::from_seed(derive_index(base, j as u64)).vec(dim, 1.0));
            }
        }
        SamplerInit::Dataset => {
            let split = data.ok_or_else(|| Error::invalid("dataset init needs a data split"))?;
            if split.is_empty() {
                return Err(Error::invalid("dataset init needs a non-empty split"));
            }
            let mut rng = stream(base);
            for _ in 0..n {
                out.extend_from_slice(split.x.row(rng.gen_range(0..split.len())));
            }
        }
    }
    Tensor::new(&[n, dim], out)
}

/// Chains after ascent plus the per-step log.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRun {
    pub samples: Tensor,
    /// `f` of every chain before step 0 and after each step: `[steps + 1][chains]`.
    pub f_history: Vec<Vec<f64>>,
    /// Step at which an iterate became non-finite.
    pub aborted_at: Option<usize>,
    /// Steps in which at least one coordinate was clipped.
    pub clipped_steps: usize,
}

impl SampleRun {
    pub fn check(&self) -> Result<()> {
        match self.aborted_at {
            None => Ok(()),
            Some(step) => Err(Error::NonFinite {
                term: "sampler iterate".into(),
                index: step,
            }),
        }
    }

    pub fn mean_trajectory(&self) -> Vec<f64> {
        self.f_history
            .iter()
            .map(|f| f.iter().sum::<f64>() / f.len() as f64)
            .collect()
    }

    /// Whether every chain's `f` never decreased.
    pub fn is_monotone(&self) -> bool {
        self.f_history
            .windows(2)
            .all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| b >= a))
    }

    pub fn trajectory_csv(&self) -> String {
        let mut s = String::from("step,mean_f,min_f,max_f\n");
        for (t, f) in self.f_history.iter().enumerate() {
            let mean = f.iter().sum::<f64>() / f.len() as f64;
            let lo = f.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            s.push_str(&format!("{t},{mean},{lo},{hi}\n"));
        }
        s
    }
}

fn values_and_grads(f: &dyn Fn(&Var) -> Result<Var>, x: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let _mode = GradModeGuard::set(true);
    let xv = Var::leaf(x.clone());
    let out = f(&xv)?;
    let g = autodiff::grad_tensors(&out.sum(), &[&xv])?.remove(0);
    Ok((out.value().to_vec(), g))
}

fn values(f: &dyn Fn(&Var) -> Result<Var>, x: &Tensor) -> Result<Vec<f64>> {
    let _mode = GradModeGuard::set(false);
    Ok(f(&Var::constant(x.clone()))?.value().to_vec())
}

/// Gradient ascent (optionally Langevin) on row-wise scalars `f: [B, D] → [B]` from `init`.
pub fn sample_rows(f: &dyn Fn(&Var) -> Result<Var>, cfg: &SamplerConfig, init: &Tensor) -> Result<SampleRun> {
    cfg.validate()?;
    let (n, d) = (init.rows(), init.row_len());
    let noise_seed = derive(cfg.seed, "langevin");
    let backtrack = cfg.backtracking && cfg.langevin_scale == 0.0;
    let clip = |v: &mut [f64]| -> bool {
        let mut hit = false;
        if cfg.clip {
            for x in v.iter_mut() {
                let c = x.clamp(cfg.range.0, cfg.range.1);
                hit |= c != *x;
                *x = c;
            }
        }
        hit
    };

    let mut x = init.clone();
    let mut run = SampleRun {
        samples: init.clone(),
        f_history: Vec::with_capacity(cfg.steps + 1),
        aborted_at: None,
        clipped_steps: 0,
    };
    for step in 0..cfg.steps {
        let (f0, g) = values_and_grads(f, &x)?;
        if step == 0 {
            run.f_history.push(f0.clone());
        }
        let mut eta = vec![cfg.step_size; n];
        let propose = |eta: &[f64]| -> (Vec<f64>, bool) {
            let mut next = x.to_vec();
            for j in 0..n {
                let row = &mut next[j * d..(j + 1) * d];
                for (v, gi) in row.iter_mut().zip(g.row(j)) {
                    *v += eta[j] * gi;
                }
                if cfg.langevin_scale > 0.0 {
                    let mut gauss = Gaussian::from_seed(derive_index(derive_index(noise_seed, j as u64), step as u64));
                    let s = (2.0 * eta[j]).sqrt() * cfg.langevin_scale;
                    for v in row.iter_mut() {
                        *v += s * gauss.sample();
                    }
                }
            }
            let hit = clip(&mut next);
            (next, hit)
        };
        let (mut next, mut hit) = propose(&eta);
        let mut f1 = values(f, &Tensor::new(&[n, d], next.clone())?)?;
        if backtrack {
            for _ in 0..40 {
                let bad: Vec<usize> = (0..n).filter(|&j| !(f1[j] >= f0[j])).collect();
                if bad.is_empty() {
                    break;
                }
                for &j in &bad {
                    eta[j] *= 0.5;
                }
                (next, hit) = propose(&eta);
                f1 = values(f, &Tensor::new(&[n, d], next.clone())?)?;
            }
            // chains that still fail stay put
            for j in 0..n {
                if !(f1[j] >= f0[j]) {
                    next[j * d..(j + 1) * d].copy_from_slice(x.row(j));
                    f1[j] = f0[j];
                }
            }
        }
        if next.iter().any(|v| !v.is_finite()) || f1.iter().any(|v| !v.is_finite()) {
            run.aborted_at = Some(step);
            break;
        }
        run.clipped_steps += hit as usize;
        x = Tensor::new(&[n, d], next)?;
        run.f_history.push(f1);
    }
    run.samples = x;
    Ok(run)
}

/// Ascends `f_{class_j}` for every chain of a classifier.
pub fn sample_modes(model: &dyn LogitModel, cfg: &SamplerConfig, init: &Tensor) -> Result<(SampleRun, Vec<usize>)> {
    let c = model.num_classes();
    if let Some(k) = cfg.class {
        if k >= c {
            return Err(Error::invalid(format!("target class {k} ≥ {c} classes")));
        }
    }
    let classes: Vec<usize> = (0..init.rows()).map(|j| cfg.class_of(j, c)).collect();
    let f = |v: &Var| select_class(&model.logits_var(v)?, &classes);
    Ok((sample_rows(&f, cfg, init)?, classes))
}

/// Fraction of samples within `k_sigma·σ` of some component mean of their class.
pub fn mode_recovery(spec: &GaussianMixtureSpec, samples: &Tensor, classes: &[usize], k_sigma: f64) -> f64 {
    let hits = (0..samples.rows())
        .filter(|&j| {
            spec.classes[classes[j]].iter().any(|comp| {
                let dist = samples
                    .row(j)
                    .iter()
                    .zip(&comp.mean)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                dist <= k_sigma * comp.sigma
            })
        })
        .count();
    hits as f64 / samples.rows() as f64
}

pub fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanTestResult {
    pub accuracy: f64,
    pub n: usize,
}

impl GanTestResult {
    pub fn se(&self) -> f64 {
        binomial_se(self.accuracy, self.n)
    }
}

/// Fraction of `samples` the evaluator assigns to their intended class.
pub fn gan_test(samples: &Tensor, labels: &[usize], evaluator: &dyn LogitModel) -> Result<GanTestResult> {
    if samples.rank() != 2 || samples.rows() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "gan_test",
            lhs: samples.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    let split = Split {
        x: samples.clone(),
        y: labels.to_vec(),
    };
    Ok(GanTestResult {
        accuracy: crate::trainer::evaluate_accuracy(evaluator, &split)?,
        n: labels.len(),
    })
}

/// Samples `n` chains from `generator` and scores them with `evaluator`.
pub fn generate_and_score(
    generator: &dyn LogitModel,
    evaluator: &dyn LogitModel,
    cfg: &SamplerConfig,
    n: usize,
    data: Option<&Split>,
) -> Result<(GanTestResult, SampleRun, Vec<usize>)> {
    if generator.input_dim() != evaluator.input_dim() || generator.num_classes() != evaluator.num_classes() {
        return Err(Error::invalid(
            "generator and evaluator disagree on input width or classes",
        ));
    }
    let init = initial_points(cfg, n, generator.input_dim(), data)?;
    let (run, classes) = sample_modes(generator, cfg, &init)?;
    run.check()?;
    let score = gan_test(&run.samples, &classes, evaluator)?;
    Ok((score, run, classes))
}
