//! The `scoregrad` command line: one subcommand per experiment, each writing a
//! self-contained output directory.

use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::evaluation::{
    density_ratio_profile, export_saliency, generate_and_score, initial_points, pixel_perturbation, sample_modes,
    write_pgm, SaliencySource,
};
use crate::kv::KvMap;
use crate::manipulation::{
    log_log_slope, sine_perturb_report, sine_reports_csv, verify_shift_invariance, ShiftFn, ShiftInvarianceReport,
    SinePerturbation,
};
use crate::models::{checkpoint, ClassifierModel, LogitModel};
use crate::objectives::RegMode;
use crate::rng::{derive, Gaussian};
use crate::tensor::Tensor;
use crate::trace::{estimator_variance_report, FnField};
use crate::trainer::{self, SweepGrid};
use crate::verify;

#[derive(Parser, Debug)]
#[command(
    name = "scoregrad",
    version,
    about = "Score-matched classifiers and input-gradient diagnostics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// key = value config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key (repeatable), e.g. --set reg.lambda=1e-2
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write into a non-empty output directory
    #[arg(long)]
    pub force: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one classifier
    Train {
        #[command(flatten)]
        common: Common,
        /// Regulariser preset: none, score_matching, anti_score_matching, grad_norm
        #[arg(long)]
        reg: Option<String>,
    },
    /// Train a λ × μ grid and report accuracy and GAN-test
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        reg: Option<String>,
        /// Checkpoint of an independent evaluator for GAN-test
        #[arg(long)]
        evaluator: Option<PathBuf>,
    },
    /// Variance of the Taylor and Hutchinson trace estimators on ½‖x‖²
    TraceBench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated noise scales
        #[arg(long)]
        sigma: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
        /// Probes per estimate
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Logit shifts and sine perturbations that leave the loss intact
    Fool {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Mean log density ratio under growing input noise
    DensityProfile {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Gradient ascent on the class logits
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Classify generated samples with an independent evaluator
    GanTest {
        #[command(flatten)]
        common: Common,
        /// Generator checkpoint
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        evaluator: PathBuf,
    },
    /// Accuracy of MODEL as pixels ranked least relevant are replaced
    PixelPerturb {
        #[command(flatten)]
        common: Common,
        /// Model whose accuracy is measured
        #[arg(long)]
        model: PathBuf,
        /// Checkpoint providing the saliency maps, or `constant` / `ideal`; defaults to MODEL
        #[arg(long)]
        saliency_from: Option<String>,
    },
    /// Export logit-gradient saliency maps as PGM images
    Saliency {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Run the built-in checks and print a pass/fail table
    Verify {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
        /// Comma-separated criterion numbers instead of the default set
        #[arg(long)]
        criteria: Option<String>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train { .. } => "train",
            Command::Sweep { .. } => "sweep",
            Command::TraceBench { .. } => "trace-bench",
            Command::Fool { .. } => "fool",
            Command::DensityProfile { .. } => "density-profile",
            Command::Sample { .. } => "sample",
            Command::GanTest { .. } => "gan-test",
            Command::PixelPerturb { .. } => "pixel-perturb",
            Command::Saliency { .. } => "saliency",
            Command::Verify { .. } => "verify",
        }
    }
}

/// An output directory held under a lock file for the life of the command.
pub struct OutputDir {
    pub path: PathBuf,
    lock: PathBuf,
    log: File,
}

impl OutputDir {
    /// Refuses a non-empty directory unless `force`; fails if another run holds the lock.
    pub fn open(path: &Path, force: bool) -> Result<Self> {
        if path.exists() {
            let occupied = fs::read_dir(path)?.next().is_some();
            if occupied && !force {
                return Err(Error::Usage(format!(
                    "output directory {} is not empty (pass --force to reuse it)",
                    path.display()
                )));
            }
        }
        fs::create_dir_all(path)?;
        let lock = path.join(".lock");
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::AlreadyExists {
                    Error::Io(std::io::Error::new(
                        e.kind(),
                        format!("{} is locked by another run", path.display()),
                    ))
                } else {
                    Error::Io(e)
                }
            })?;
        let log = File::create(path.join("run.log"))?;
        Ok(OutputDir {
            path: path.to_path_buf(),
            lock,
            log,
        })
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path.join(name);
        fs::write(&p, contents)?;
        Ok(p)
    }

    pub fn log(&mut self, line: impl AsRef<str>) -> Result<()> {
        writeln!(self.log, "{}", line.as_ref())?;
        log::info!("{}", line.as_ref());
        Ok(())
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

/// Reads `--config` then applies `--set` overrides in order.
pub fn resolve_config(common: &Common) -> Result<ExperimentConfig> {
    let mut kv = match &common.config {
        Some(p) => {
            require_file(p)?;
            let text = fs::read_to_string(p)?;
            KvMap::parse(&text, &p.display().to_string())?
        }
        None => KvMap::default(),
    };
    for o in &common.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
        kv.insert(k.trim(), v.trim());
    }
    ExperimentConfig::from_kv(kv)
}

fn start(name: &str, common: &Common, cfg: &ExperimentConfig) -> Result<OutputDir> {
    let path = common.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(name));
    let mut out = OutputDir::open(&path, common.force)?;
    out.write("config.kv", cfg.to_kv())?;
    out.log(format!("scoregrad {} {name}", env!("CARGO_PKG_VERSION")))?;
    out.log(format!("seed {}", cfg.train.seed))?;
    out.log(format!("args {}", std::env::args().collect::<Vec<_>>().join(" ")))?;
    Ok(out)
}

/// A missing input is a usage error naming the path.
fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Usage(format!("no such file `{}`", path.display())))
    }
}

fn load(path: &Path) -> Result<ClassifierModel> {
    require_file(path)?;
    checkpoint::load(path)
}

fn open_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    let t = &cfg.train;
    t.data.open(t.n_train, t.n_test, derive(t.seed, "data"))
}

fn eval_split(cfg: &ExperimentConfig, ds: &Dataset) -> Split {
    if cfg.eval_examples == 0 {
        ds.test.clone()
    } else {
        ds.test.head(cfg.eval_examples)
    }
}

fn check_compatible(model: &dyn LogitModel, ds: &Dataset, what: &str) -> Result<()> {
    if model.input_dim() != ds.input.dim() || model.num_classes() != ds.classes {
        return Err(Error::invalid(format!(
            "{what} expects D={} C={}, dataset {} has D={} C={}",
            model.input_dim(),
            model.num_classes(),
            ds.id,
            ds.input.dim(),
            ds.classes
        )));
    }
    Ok(())
}

fn apply_reg(cfg: &mut ExperimentConfig, reg: &Option<String>) -> Result<()> {
    if let Some(r) = reg {
        let mode: RegMode = r.parse()?;
        let trace = cfg.train.reg.trace;
        cfg.train.reg = crate::objectives::RegularizerConfig::preset(mode);
        cfg.train.reg.trace = trace;
    }
    Ok(())
}

fn cmd_train(common: &Common, reg: &Option<String>) -> Result<()> {
    let mut cfg = resolve_config(common)?;
    apply_reg(&mut cfg, reg)?;
    let mut out = start("train", common, &cfg)?;
    cfg.train.checkpoint_dir = Some(out.path.clone());
    let t = Instant::now();
    let outcome = trainer::train(&cfg.train)?;
    let report = &outcome.report;
    out.write("train.csv", report.to_csv())?;
    out.write("steps.csv", report.steps_csv())?;
    for c in &report.checkpoints {
        out.log(format!("checkpoint {}", c.display()))?;
    }
    if let Some(acc) = report.final_test_accuracy() {
        out.log(format!("final test accuracy {acc:.4}"))?;
    }
    out.log(format!("elapsed {:.1}s", t.elapsed().as_secs_f64()))?;
    if let Some(d) = &report.divergence {
        out.log(format!("diverged at epoch {} step {} ({})", d.epoch, d.step, d.term))?;
    }
    report.check()
}

fn cmd_sweep(common: &Common, reg: &Option<String>, evaluator: &Option<PathBuf>) -> Result<()> {
    let mut cfg = resolve_config(common)?;
    apply_reg(&mut cfg, reg)?;
    let mut out = start("sweep", common, &cfg)?;
    let ev = evaluator.as_deref().map(load).transpose()?;
    let ds = open_data(&cfg)?;
    let mut sampler = cfg.sampler.clone();
    if ds.input.height > 1 {
        sampler.range = ds.input_range(0.0, 1.0);
    }
    let grid = SweepGrid {
        lambdas: cfg.sweep.lambdas.clone(),
        mus: cfg.sweep.mus.clone(),
    };
    let report = trainer::sweep(
        &cfg.train,
        &grid,
        ev.as_ref().map(|m| m as &dyn LogitModel),
        &sampler,
        cfg.samples,
    )?;
    out.write("sweep.csv", report.to_csv())?;
    out.write("sweep.txt", report.to_table())?;
    out.log(report.to_table())?;
    Ok(())
}

fn cmd_trace_bench(
    common: &Common,
    sigma: &Option<String>,
    trials: Option<usize>,
    samples: Option<usize>,
) -> Result<()> {
    let mut cfg = resolve_config(common)?;
    if let Some(s) = sigma {
        cfg.bench.sigmas = crate::kv::parse_list(s).map_err(Error::Usage)?;
    }
    if let Some(t) = trials {
        cfg.bench.trials = t;
    }
    if let Some(s) = samples {
        cfg.bench.samples = s;
    }
    let mut out = start("trace-bench", common, &cfg)?;
    let b = &cfg.bench;
    let d = b.point.len();
    let half_norm = FnField {
        dim: d,
        f: |x: &crate::Var| Ok(x.square().sum_cols()?.scale(0.5)),
    };
    let report = estimator_variance_report(
        &half_norm,
        &Tensor::vector(b.point.clone()),
        &b.sigmas,
        b.samples,
        b.trials,
        derive(cfg.train.seed, "trace-bench"),
    )?;
    if let Some(w) = &report.warning {
        log::warn!("{w}");
    }
    out.write("variance.csv", report.to_csv())?;
    out.log(format!("‖∇f‖² = {}", report.grad_norm_sq))?;
    Ok(())
}

fn cmd_fool(common: &Common, model: &Path) -> Result<()> {
    let cfg = resolve_config(common)?;
    let mut out = start("fool", common, &cfg)?;
    let m = load(model)?;
    let ds = open_data(&cfg)?;
    check_compatible(&m, &ds, "model")?;
    let split = eval_split(&cfg, &ds);
    let d = ds.input.dim();
    let f = &cfg.fool;
    let shifts = [
        ShiftFn::Constant(1.0),
        ShiftFn::Linear(Tensor::new(
            &[d],
            Gaussian::from_seed(derive(cfg.train.seed, "fool-linear")).vec(d, 1.0),
        )?),
        ShiftFn::random_mlp(d, f.mlp_hidden, f.mlp_scale, derive(cfg.train.seed, "fool-mlp")),
    ];
    let mut csv = format!("{}\n", ShiftInvarianceReport::CSV_HEADER);
    for s in &shifts {
        let r = verify_shift_invariance(&m, s, &split.x, &split.y)?;
        writeln!(csv, "{}", r.csv_row()).unwrap();
    }
    out.write("shifts.csv", csv)?;
    let mut reports = Vec::new();
    for &freq in &f.frequencies {
        reports.push(sine_perturb_report(
            &m,
            SinePerturbation::new(f.epsilon, freq)?,
            &split.x,
            &split.y,
        )?);
    }
    out.write("sine.csv", sine_reports_csv(&reports))?;
    if reports.len() >= 2 {
        let pts: Vec<(f64, f64)> = reports.iter().map(|r| (r.frequency, r.mean_grad_diff_l1)).collect();
        if let Ok(slope) = log_log_slope(&pts) {
            out.log(format!("log-log slope of mean ‖Δ∇ℓ‖₁ against m: {slope:.4}"))?;
        }
    }
    Ok(())
}

fn cmd_density(common: &Common, model: &Path) -> Result<()> {
    let cfg = resolve_config(common)?;
    let mut out = start("density-profile", common, &cfg)?;
    let m = load(model)?;
    let ds = open_data(&cfg)?;
    check_compatible(&m, &ds, "model")?;
    let mut dcfg = cfg.density.clone();
    dcfg.seed = derive(cfg.train.seed, "density");
    let curve = density_ratio_profile(&m, &eval_split(&cfg, &ds), &dcfg)?;
    out.write("density.csv", curve.to_csv())?;
    out.log(format!("profile over {} sigmas", curve.points.len()))?;
    Ok(())
}

/// Writes each sample as a raw-scale PGM when the data are single-channel images.
fn write_samples(out: &OutputDir, ds: &Dataset, samples: &Tensor, classes: &[usize]) -> Result<()> {
    let mut csv = String::from("index,class");
    for j in 0..samples.row_len() {
        write!(csv, ",x{j}").unwrap();
    }
    csv.push('\n');
    for (i, c) in classes.iter().enumerate() {
        write!(csv, "{i},{c}").unwrap();
        for v in samples.row(i) {
            write!(csv, ",{v}").unwrap();
        }
        csv.push('\n');
    }
    out.write("samples.csv", csv)?;
    let shape = ds.input;
    if shape.channels == 1 && shape.height > 1 {
        let raw = ds.normalization.invert(samples);
        for (i, c) in classes.iter().enumerate() {
            let px: Vec<u8> = raw
                .row(i)
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect();
            write_pgm(
                &out.path.join(format!("sample_{i:04}_class{c}.pgm")),
                shape.width,
                shape.height,
                &px,
            )?;
        }
    }
    Ok(())
}

fn sampler_for(cfg: &ExperimentConfig, ds: &Dataset) -> crate::evaluation::SamplerConfig {
    let mut s = cfg.sampler.clone();
    if ds.input.height > 1 {
        s.range = ds.input_range(0.0, 1.0);
    }
    s.seed = derive(cfg.train.seed, "sampler");
    s
}

fn cmd_sample(common: &Common, model: &Path) -> Result<()> {
    let cfg = resolve_config(common)?;
    let mut out = start("sample", common, &cfg)?;
    let m = load(model)?;
    let ds = open_data(&cfg)?;
    check_compatible(&m, &ds, "model")?;
    let sampler = sampler_for(&cfg, &ds);
    let init = initial_points(&sampler, cfg.samples, ds.input.dim(), Some(&ds.train))?;
    let (run, classes) = sample_modes(&m, &sampler, &init)?;
    out.write("trajectory.csv", run.trajectory_csv())?;
    write_samples(&out, &ds, &run.samples, &classes)?;
    out.log(format!("{} chains, {} clipped steps", classes.len(), run.clipped_steps))?;
    run.check()
}

fn cmd_gan_test(common: &Common, model: &Path, evaluator: &Path) -> Result<()> {
    let cfg = resolve_config(common)?;
    let mut out = start("gan-test", common, &cfg)?;
    let gen = load(model)?;
    let ev = load(evaluator)?;
    let ds = open_data(&cfg)?;
    check_compatible(&gen, &ds, "generator")?;
    check_compatible(&ev, &ds, "evaluator")?;
    let sampler = sampler_for(&cfg, &ds);
    let (res, run, classes) = generate_and_score(&gen, &ev, &sampler, cfg.samples, Some(&ds.train))?;
    out.write(
        "gan_test.csv",
        format!("accuracy,se,n\n{},{},{}\n", res.accuracy, res.se(), res.n),
    )?;
    out.write("trajectory.csv", run.trajectory_csv())?;
    write_samples(&out, &ds, &run.samples, &classes)?;
    out.log(format!(
        "GAN-test {:.4} ± {:.4} over {} samples",
        res.accuracy,
        res.se(),
        res.n
    ))?;
    run.check()
}

fn cmd_pixel_perturb(common: &Common, model: &Path, saliency_from: &Option<String>) -> Result<()> {
    let cfg = resolve_config(common)?;
    let mut out = start("pixel-perturb", common, &cfg)?;
    let m = load(model)?;
    let ds = open_data(&cfg)?;
    check_compatible(&m, &ds, "model")?;
    let explainer;
    let source = match saliency_from.as_deref() {
        None => SaliencySource::Model(&m),
        Some("constant") => SaliencySource::Constant,
        Some("ideal") => SaliencySource::Ideal(
            ds.informative
                .clone()
                .ok_or_else(|| Error::invalid(format!("dataset {} has no informative pixels", ds.id)))?,
        ),
        Some(path) => {
            explainer = load(Path::new(path))?;
            check_compatible(&explainer, &ds, "saliency model")?;
            SaliencySource::Model(&explainer)
        }
    };
    let curve = pixel_perturbation(&m, &source, &eval_split(&cfg, &ds), ds.input, &cfg.perturbation)?;
    out.write("perturbation.csv", curve.to_csv())?;
    let upto = cfg.perturbation.fractions.iter().copied().fold(0.0, f64::max);
    out.log(format!(
        "area under accuracy curve to {upto}: {:.5}",
        crate::evaluation::curve_area(&curve, upto)
    ))?;
    Ok(())
}

fn cmd_saliency(common: &Common, model: &Path) -> Result<()> {
    let cfg = resolve_config(common)?;
    let mut out = start("saliency", common, &cfg)?;
    let m = load(model)?;
    let ds = open_data(&cfg)?;
    check_compatible(&m, &ds, "model")?;
    let split = eval_split(&cfg, &ds);
    let files = export_saliency(&m, &split.x, &split.y, ds.input, &out.path)?;
    out.log(format!("wrote {} maps", files.len()))?;
    Ok(())
}

fn cmd_verify(out: &Option<PathBuf>, force: bool, criteria: &Option<String>) -> Result<bool> {
    let mut dir = out.as_deref().map(|p| OutputDir::open(p, force)).transpose()?;
    let mut print = |r: &verify::CheckResult| println!("{}", r.line());
    let results = match criteria {
        None => verify::verify_all(&mut print)?,
        Some(list) => {
            let ids: Vec<u32> = crate::kv::parse_list(list).map_err(Error::Usage)?;
            let mut v = Vec::new();
            for id in ids {
                let r = verify::run_criterion(id)?;
                print(&r);
                v.push(r);
            }
            v
        }
    };
    let table = verify::table(&results);
    println!("{}", table.lines().last().unwrap_or(""));
    if let Some(d) = dir.as_mut() {
        let mut csv = String::from("id,name,passed,seconds,detail\n");
        for r in &results {
            writeln!(
                csv,
                "{},{},{},{:.3},\"{}\"",
                r.id,
                r.name,
                r.passed,
                r.seconds,
                r.detail.replace('"', "'")
            )
            .unwrap();
        }
        d.write("verify.csv", csv)?;
        d.write("verify.txt", &table)?;
    }
    Ok(results.iter().all(|r| r.passed))
}

/// Reads the `SCOREGRAD_THREADS` worker cap. Computation runs on one thread, so any
/// positive cap is honoured; the value is validated and logged.
pub fn thread_limit() -> Result<Option<usize>> {
    match std::env::var("SCOREGRAD_THREADS") {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Usage(format!(
                "SCOREGRAD_THREADS must be a positive integer, got `{v}`"
            ))),
        },
        _ => Ok(None),
    }
}

/// Runs a parsed command. `Ok(false)` means the command ran but its checks failed.
pub fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::Train { common, reg } => cmd_train(common, reg).map(|_| true),
        Command::Sweep { common, reg, evaluator } => cmd_sweep(common, reg, evaluator).map(|_| true),
        Command::TraceBench {
            common,
            sigma,
            trials,
            samples,
        } => cmd_trace_bench(common, sigma, *trials, *samples).map(|_| true),
        Command::Fool { common, model } => cmd_fool(common, model).map(|_| true),
        Command::DensityProfile { common, model } => cmd_density(common, model).map(|_| true),
        Command::Sample { common, model } => cmd_sample(common, model).map(|_| true),
        Command::GanTest {
            common,
            model,
            evaluator,
        } => cmd_gan_test(common, model, evaluator).map(|_| true),
        Command::PixelPerturb {
            common,
            model,
            saliency_from,
        } => cmd_pixel_perturb(common, model, saliency_from).map(|_| true),
        Command::Saliency { common, model } => cmd_saliency(common, model).map(|_| true),
        Command::Verify { out, force, criteria } => cmd_verify(out, *force, criteria),
    }
}

/// Process entry point; returns the exit code.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let name = cli.command.name();
    let outcome = thread_limit().and_then(|n| {
        if let Some(n) = n {
            log::debug!("worker cap {n}; computation is single-threaded");
        }
        run(cli)
    });
    match outcome {
        Ok(true) => 0,
        Ok(false) => {
            eprintln!("error category: check");
            eprintln!("{name}: one or more checks failed");
            1
        }
        Err(e) => {
            eprintln!("error category: {}", e.category());
            eprintln!("{name}: {e}");
            e.exit_code()
        }
    }
}
