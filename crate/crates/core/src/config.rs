//! Experiment configuration: one flat `key = value` file with dotted keys.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::evaluation::{
    DeletionOrder, DensityProfileConfig, PerturbationConfig, Replacement, SamplerConfig, SamplerInit,
};
use crate::kv::KvMap;
use crate::models::ArchPreset;
use crate::objectives::{RegMode, RegularizerConfig};
use crate::trace::TraceMethod;
use crate::trainer::{SweepGrid, TrainConfig};

/// Trace-estimator benchmark settings.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub sigmas: Vec<f64>,
    pub trials: usize,
    pub samples: usize,
    /// Evaluation point of `½‖x‖²`.
    pub point: Vec<f64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sigmas: vec![0.05, 0.1, 0.5, 1.0],
            trials: 1000,
            samples: 1,
            point: vec![3.0, 4.0],
        }
    }
}

/// Gradient-manipulation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct FoolConfig {
    pub epsilon: f64,
    pub frequencies: Vec<f64>,
    pub mlp_hidden: usize,
    pub mlp_scale: f64,
}

impl Default for FoolConfig {
    fn default() -> Self {
        FoolConfig {
            epsilon: 0.01,
            frequencies: vec![10.0, 1e3, 1e5],
            mlp_hidden: 64,
            mlp_scale: 100.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub density: DensityProfileConfig,
    pub sampler: SamplerConfig,
    /// Chains for sampling and GAN-test.
    pub samples: usize,
    pub perturbation: PerturbationConfig,
    pub sweep: SweepGrid,
    pub bench: BenchConfig,
    pub fool: FoolConfig,
    /// Test examples used by evaluation commands (0 = all).
    pub eval_examples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train: TrainConfig::default(),
            density: DensityProfileConfig::default(),
            sampler: SamplerConfig::default(),
            samples: 100,
            perturbation: PerturbationConfig::default(),
            sweep: SweepGrid {
                lambdas: vec![1e-4, 1e-3, 1e-2],
                mus: vec![1e-5, 1e-4, 1e-3],
            },
            bench: BenchConfig::default(),
            fool: FoolConfig::default(),
            eval_examples: 256,
        }
    }
}

fn fmt_list<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_kv(KvMap::parse(&text, &path.display().to_string())?)
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        Self::from_kv(KvMap::parse(text, origin)?)
    }

    /// Consumes every known key; anything left over is an error. Setting `reg.mode`
    /// loads that mode's preset before explicit `reg.*` values apply.
    pub fn from_kv(mut kv: KvMap) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        let t = &mut c.train;
        t.seed = kv.take_or("seed", t.seed)?;
        t.epochs = kv.take_or("train.epochs", t.epochs)?;
        t.batch_size = kv.take_or("train.batch_size", t.batch_size)?;
        t.schedule = kv.take_or("train.schedule", t.schedule.clone())?;
        t.momentum = kv.take_or("train.momentum", t.momentum)?;
        t.weight_decay = kv.take_or("train.weight_decay", t.weight_decay)?;
        t.eval_train_examples = kv.take_or("train.eval_train_examples", t.eval_train_examples)?;
        t.data = kv.take_or("data.source", t.data.clone())?;
        t.n_train = kv.take_or("data.n_train", t.n_train)?;
        t.n_test = kv.take_or("data.n_test", t.n_test)?;
        if let Some(a) = kv.take_str("model.arch") {
            t.arch = ArchPreset::parse(&a)?;
        }
        t.beta = kv.take_or("model.beta", t.beta)?;

        if let Some(mode) = kv.take::<RegMode>("reg.mode")? {
            t.reg = RegularizerConfig::preset(mode);
        }
        let r = &mut t.reg;
        r.lambda = kv.take_or("reg.lambda", r.lambda)?;
        r.mu = kv.take_or("reg.mu", r.mu)?;
        r.tau = kv.take_or("reg.tau", r.tau)?;
        r.trace.method = kv.take_or::<TraceMethod>("trace.method", r.trace.method)?;
        r.trace.samples = kv.take_or("trace.samples", r.trace.samples)?;
        r.trace.sigma = kv.take_or("trace.sigma", r.trace.sigma)?;

        let d = &mut c.density;
        d.sigmas = kv.take_list("density.sigmas")?.unwrap_or(d.sigmas.clone());
        d.samples_per_sigma = kv.take_or("density.samples", d.samples_per_sigma)?;

        let s = &mut c.sampler;
        s.steps = kv.take_or("sampler.steps", s.steps)?;
        s.step_size = kv.take_or("sampler.step_size", s.step_size)?;
        s.init = kv.take_or::<SamplerInit>("sampler.init", s.init.clone())?;
        if let Some(k) = kv.take_str("sampler.class") {
            s.class = if k == "all" {
                None
            } else {
                Some(
                    k.parse()
                        .map_err(|_| crate::Error::Usage(format!("bad sampler.class `{k}`")))?,
                )
            };
        }
        s.langevin_scale = kv.take_or("sampler.langevin", s.langevin_scale)?;
        s.clip = kv.take_or("sampler.clip", s.clip)?;
        s.backtracking = kv.take_or("sampler.backtracking", s.backtracking)?;
        c.samples = kv.take_or("sampler.chains", c.samples)?;

        let p = &mut c.perturbation;
        p.fractions = kv.take_list("perturb.fractions")?.unwrap_or(p.fractions.clone());
        p.order = kv.take_or::<DeletionOrder>("perturb.order", p.order)?;
        p.replacement = kv.take_or::<Replacement>("perturb.replacement", p.replacement)?;

        c.sweep.lambdas = kv.take_list("sweep.lambdas")?.unwrap_or(c.sweep.lambdas.clone());
        c.sweep.mus = kv.take_list("sweep.mus")?.unwrap_or(c.sweep.mus.clone());

        let b = &mut c.bench;
        b.sigmas = kv.take_list("bench.sigmas")?.unwrap_or(b.sigmas.clone());
        b.trials = kv.take_or("bench.trials", b.trials)?;
        b.samples = kv.take_or("bench.samples", b.samples)?;
        b.point = kv.take_list("bench.point")?.unwrap_or(b.point.clone());

        let f = &mut c.fool;
        f.epsilon = kv.take_or("fool.epsilon", f.epsilon)?;
        f.frequencies = kv.take_list("fool.frequencies")?.unwrap_or(f.frequencies.clone());
        f.mlp_hidden = kv.take_or("fool.mlp_hidden", f.mlp_hidden)?;
        f.mlp_scale = kv.take_or("fool.mlp_scale", f.mlp_scale)?;

        c.eval_examples = kv.take_or("eval.examples", c.eval_examples)?;
        kv.finish()?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.density.validate()?;
        self.sampler.validate()?;
        self.perturbation.validate()
    }

    /// Fully resolved config, parseable by [`parse`](Self::parse).
    pub fn to_kv(&self) -> String {
        let t = &self.train;
        let r = &t.reg;
        let s = &self.sampler;
        let mut o = String::new();
        let mut kv = |k: &str, v: String| writeln!(o, "{k} = {v}").unwrap();
        kv("seed", t.seed.to_string());
        kv("train.epochs", t.epochs.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.schedule", t.schedule.to_string());
        kv("train.momentum", t.momentum.to_string());
        kv("train.weight_decay", t.weight_decay.to_string());
        kv("train.eval_train_examples", t.eval_train_examples.to_string());
        kv("data.source", t.data.to_string());
        kv("data.n_train", t.n_train.to_string());
        kv("data.n_test", t.n_test.to_string());
        kv("model.arch", t.arch.name());
        kv("model.beta", t.beta.to_string());
        kv("reg.mode", r.mode.to_string());
        kv("reg.lambda", r.lambda.to_string());
        kv("reg.mu", r.mu.to_string());
        kv("reg.tau", r.tau.to_string());
        kv("trace.method", r.trace.method.name().to_string());
        kv("trace.samples", r.trace.samples.to_string());
        kv("trace.sigma", r.trace.sigma.to_string());
        kv("density.sigmas", fmt_list(&self.density.sigmas));
        kv("density.samples", self.density.samples_per_sigma.to_string());
        kv("sampler.steps", s.steps.to_string());
        kv("sampler.step_size", s.step_size.to_string());
        kv(
            "sampler.init",
            match s.init {
                SamplerInit::Uniform => "uniform",
                SamplerInit::Gaussian => "gaussian",
                SamplerInit::Dataset => "dataset",
            }
            .into(),
        );
        kv("sampler.class", s.class.map_or("all".into(), |k| k.to_string()));
        kv("sampler.langevin", s.langevin_scale.to_string());
        kv("sampler.clip", s.clip.to_string());
        kv("sampler.backtracking", s.backtracking.to_string());
        kv("sampler.chains", self.samples.to_string());
        kv("perturb.fractions", fmt_list(&self.perturbation.fractions));
        kv(
            "perturb.order",
            match self.perturbation.order {
                DeletionOrder::LeastRelevantFirst => "least-relevant-first",
                DeletionOrder::MostRelevantFirst => "most-relevant-first",
            }
            .into(),
        );
        kv(
            "perturb.replacement",
            match self.perturbation.replacement {
                Replacement::ImageMean => "image-mean".into(),
                Replacement::ChannelMean => "channel-mean".into(),
                Replacement::Constant(v) => format!("constant:{v}"),
            },
        );
        kv("sweep.lambdas", fmt_list(&self.sweep.lambdas));
        kv("sweep.mus", fmt_list(&self.sweep.mus));
        kv("bench.sigmas", fmt_list(&self.bench.sigmas));
        kv("bench.trials", self.bench.trials.to_string());
        kv("bench.samples", self.bench.samples.to_string());
        kv("bench.point", fmt_list(&self.bench.point));
        kv("fool.epsilon", self.fool.epsilon.to_string());
        kv("fool.frequencies", fmt_list(&self.fool.frequencies));
        kv("fool.mlp_hidden", self.fool.mlp_hidden.to_string());
        kv("fool.mlp_scale", self.fool.mlp_scale.to_string());
        kv("eval.examples", self.eval_examples.to_string());
        o
    }
}
