//! SGD-with-momentum training with checkpoints and deterministic replay.

mod sweep;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;

use crate::autodiff::{self, GradModeGuard, Var};
use crate::data::{DataSource, Dataset, Split};
use crate::error::{Error, Result};
use crate::models::{checkpoint, ArchPreset, Architecture, ClassifierModel, LogitModel, DEFAULT_BETA};
use crate::objectives::{regularized_loss, LossBreakdown, RegularizerConfig};
use crate::rng::{derive, derive_index, stream};
use crate::tensor::Tensor;

pub use sweep::{sweep, SweepCell, SweepGrid, SweepReport};

/// Piecewise-constant learning rate: `(first epoch, lr)` pairs sorted by epoch, starting at 0.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule(Vec<(usize, f64)>);

impl LrSchedule {
    pub fn new(mut points: Vec<(usize, f64)>) -> Result<Self> {
        points.sort_by_key(|p| p.0);
        if points.first().map(|p| p.0) != Some(0) {
            return Err(Error::invalid("learning-rate schedule must start at epoch 0"));
        }
        if points.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid("learning-rate schedule repeats an epoch"));
        }
        if let Some(&(_, lr)) = points.iter().find(|p| !(p.1 > 0.0 && p.1.is_finite())) {
            return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
        }
        Ok(LrSchedule(points))
    }

    pub fn constant(lr: f64) -> Result<Self> {
        Self::new(vec![(0, lr)])
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.0.iter().rev().find(|p| p.0 <= epoch).map(|p| p.1).unwrap()
    }

    /// Epochs at which the rate changes (excluding 0).
    pub fn boundaries(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().skip(1).map(|p| p.0)
    }
}

impl FromStr for LrSchedule {
    type Err = Error;

    /// `0:0.05,40:0.005`, or a single rate.
    fn from_str(s: &str) -> Result<Self> {
        if let Ok(lr) = s.trim().parse::<f64>() {
            return Self::constant(lr);
        }
        let mut pts = Vec::new();
        for part in s.split(',') {
            let (e, lr) = part
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::Usage(format!("bad schedule item `{part}` (want epoch:lr)")))?;
            pts.push((
                e.trim().parse().map_err(|_| Error::Usage(format!("bad epoch `{e}`")))?,
                lr.trim()
                    .parse()
                    .map_err(|_| Error::Usage(format!("bad rate `{lr}`")))?,
            ));
        }
        Self::new(pts)
    }
}

impl std::fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(e, lr)| format!("{e}:{lr}")).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub reg: RegularizerConfig,
    pub data: DataSource,
    pub n_train: usize,
    pub n_test: usize,
    pub arch: ArchPreset,
    pub beta: f64,
    /// Training examples scored for `train_acc` at the end of each epoch.
    pub eval_train_examples: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 128,
            schedule: LrSchedule(vec![(0, 0.05), (40, 0.005)]),
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            reg: RegularizerConfig::default(),
            data: DataSource::Glyphs,
            n_train: 10_000,
            n_test: 2_000,
            arch: ArchPreset::ConvSmall,
            beta: DEFAULT_BETA,
            eval_train_examples: 2_000,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("epochs and batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight decay must be finite and ≥ 0"));
        }
        self.reg.validate()
    }
}

/// Momentum SGD: `v ← m·v + g`, `θ ← θ − lr·(v + wd·θ)`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "sgd",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            let mut next = p.to_vec();
            for ((theta, &gi), vi) in next.iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi;
                *theta -= lr * (*vi + self.weight_decay * *theta);
            }
            *p = Tensor::new(p.shape(), next)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub loss: LossBreakdown,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DivergenceInfo {
    pub epoch: usize,
    pub step: usize,
    pub term: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: Option<PathBuf>,
    pub divergence: Option<DivergenceInfo>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,lr,train_acc,test_acc,total,ce,h,grad_norm,stability\n");
        for e in &self.epochs {
            let l = &e.loss;
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                e.epoch, e.lr, e.train_acc, e.test_acc, l.total, l.cross_entropy, l.h, l.grad_norm, l.stability
            )
            .unwrap();
        }
        s
    }

    pub fn steps_csv(&self) -> String {
        let mut s = String::from("step,total,ce,h,grad_norm,stability\n");
        for r in &self.steps {
            let l = &r.loss;
            writeln!(
                s,
                "{},{},{},{},{},{}",
                r.step, l.total, l.cross_entropy, l.h, l.grad_norm, l.stability
            )
            .unwrap();
        }
        s
    }

    /// `Err(Divergence)` when the run aborted.
    pub fn check(&self) -> Result<()> {
        match &self.divergence {
            None => Ok(()),
            Some(d) => Err(Error::Divergence {
                epoch: d.epoch,
                step: d.step,
                term: d.term.clone(),
            }),
        }
    }

    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.test_acc)
    }
}

/// Fraction of argmax-correct predictions (ties go to the lowest class index).
pub fn evaluate_accuracy(model: &dyn LogitModel, split: &Split) -> Result<f64> {
    if split.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for start in (0..split.len()).step_by(256) {
        let idx: Vec<usize> = (start..split.len().min(start + 256)).collect();
        let pred = model.logits(&split.x.gather_rows(&idx))?.argmax_rows();
        correct += pred.iter().zip(&idx).filter(|(p, &i)| **p == split.y[i]).count();
    }
    Ok(correct as f64 / split.len() as f64)
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = stream(seed);
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.gen_range(0..=i));
    }
    p
}

/// Called after every epoch with the epoch index and current model.
pub type EpochHook<'a> = dyn FnMut(usize, &ClassifierModel) -> Result<()> + 'a;

fn save_checkpoint(
    model: &ClassifierModel,
    dir: &Option<PathBuf>,
    name: &str,
    report: &mut TrainReport,
) -> Result<Option<PathBuf>> {
    let Some(dir) = dir else {
        return Ok(None);
    };
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    checkpoint::save(model, &path)?;
    report.checkpoints.push(path.clone());
    Ok(Some(path))
}

/// Trains `model` in place on `ds`.
///
/// A non-finite loss ends the run early: the model keeps the last finite parameters,
/// which are also written as `last_finite.ckpt`, and `report.divergence` names the term.
pub fn train_model(
    model: &mut ClassifierModel,
    ds: &Dataset,
    cfg: &TrainConfig,
    hook: &mut EpochHook<'_>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if model.input_dim() != ds.input.dim() || model.num_classes() != ds.classes {
        return Err(Error::invalid(format!(
            "model expects D={} C={}, dataset {} has D={} C={}",
            model.input_dim(),
            model.num_classes(),
            ds.id,
            ds.input.dim(),
            ds.classes
        )));
    }
    let mut report = TrainReport::default();
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);
    let n = ds.train.len();
    let shuffle_seed = derive(cfg.seed, "shuffle");
    let noise_seed = derive(cfg.seed, "trace-noise");
    let eval_split = ds.train.head(cfg.eval_train_examples);
    let boundaries: Vec<usize> = cfg.schedule.boundaries().collect();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        if boundaries.contains(&epoch) {
            save_checkpoint(model, &cfg.checkpoint_dir, &format!("epoch{epoch}.ckpt"), &mut report)?;
        }
        let started = Instant::now();
        let lr = cfg.schedule.lr_at(epoch);
        let order = permutation(n, derive_index(shuffle_seed, epoch as u64));
        let epoch_noise = derive_index(noise_seed, epoch as u64);
        let mut agg = LossBreakdown::default();

        for batch in order.chunks(cfg.batch_size) {
            let x = ds.train.x.gather_rows(batch);
            let y: Vec<usize> = batch.iter().map(|&i| ds.train.y[i]).collect();
            let seeds: Vec<u64> = batch.iter().map(|&i| derive_index(epoch_noise, i as u64)).collect();

            let outcome = {
                let _mode = GradModeGuard::set(true);
                let params = model.leaf_params();
                let loss = regularized_loss(&|v: &Var| model.forward_with(&params, v), &x, &y, &cfg.reg, &seeds);
                match loss {
                    Ok(loss) if loss.breakdown.is_finite() => {
                        let refs: Vec<&Var> = params.iter().collect();
                        let grads = autodiff::grad_tensors(&loss.total, &refs)?;
                        if grads.iter().all(Tensor::all_finite) {
                            Ok((loss.breakdown, grads))
                        } else {
                            Err("gradient".to_string())
                        }
                    }
                    Ok(loss) => Err(loss.breakdown.non_finite_term().unwrap_or("total").to_string()),
                    Err(Error::NonFinite { term, .. }) => Err(term),
                    Err(e) => return Err(e),
                }
            };
            let (breakdown, grads) = match outcome {
                Ok(v) => v,
                Err(term) => {
                    log::warn!("divergence at epoch {epoch} step {step}: {term} is non-finite");
                    report.divergence = Some(DivergenceInfo { epoch, step, term });
                    save_checkpoint(model, &cfg.checkpoint_dir, "last_finite.ckpt", &mut report)?;
                    return Ok(report);
                }
            };
            let mut tensors = model.params.tensors();
            opt.step(&mut tensors, &grads, lr)?;
            if !tensors.iter().all(Tensor::all_finite) {
                report.divergence = Some(DivergenceInfo {
                    epoch,
                    step,
                    term: "parameters".into(),
                });
                save_checkpoint(model, &cfg.checkpoint_dir, "last_finite.ckpt", &mut report)?;
                return Ok(report);
            }
            model.params.set_all(tensors)?;
            agg.accumulate(&breakdown, batch.len() as f64, n as f64);
            report.steps.push(StepRecord { step, loss: breakdown });
            step += 1;
        }

        let record = EpochRecord {
            epoch,
            lr,
            train_acc: evaluate_accuracy(model, &eval_split)?,
            test_acc: evaluate_accuracy(model, &ds.test)?,
            loss: agg,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch} lr {lr} loss {:.5} train {:.4} test {:.4} ({:.1}s)",
            agg.total,
            record.train_acc,
            record.test_acc,
            record.seconds
        );
        report.epochs.push(record);
        hook(epoch, model)?;
    }
    report.final_checkpoint = save_checkpoint(model, &cfg.checkpoint_dir, "final.ckpt", &mut report)?;
    Ok(report)
}

/// Fresh model for `cfg` and `ds`.
pub fn init_model(cfg: &TrainConfig, ds: &Dataset) -> Result<ClassifierModel> {
    let arch = Architecture::build(cfg.arch.clone(), ds.input, ds.classes, cfg.beta)?;
    Ok(ClassifierModel::init(arch, derive(cfg.seed, "init")))
}

pub struct TrainOutcome {
    pub model: ClassifierModel,
    pub dataset: Dataset,
    pub report: TrainReport,
}

/// Opens the configured dataset, initialises a model and trains it.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let dataset = cfg.data.open(cfg.n_train, cfg.n_test, derive(cfg.seed, "data"))?;
    let mut model = init_model(cfg, &dataset)?;
    let report = train_model(&mut model, &dataset, cfg, &mut |_, _| Ok(()))?;
    Ok(TrainOutcome { model, dataset, report })
}

pub fn load_model(path: &Path) -> Result<ClassifierModel> {
    checkpoint::load(path)
}

#[cfg(test)]
mod tests;
