//! Self-checks behind the `verify` subcommand and the acceptance test.
//!
//! Each `criterion_*` function builds its own data and models from fixed seeds, so the
//! checks are independent and reproducible. A check that runs to completion returns a
//! [`CheckResult`]; errors are reserved for broken plumbing.

use std::fmt::Write as _;
use std::time::Instant;

use crate::autodiff::{gradcheck, Var};
use crate::data::formats::{encode_idx, load_idx, IdxArray};
use crate::data::{make_informative_pixels_dataset, mixture_dataset, DataSource, Dataset, GaussianMixtureSpec};
use crate::error::{Error, Result};
use crate::evaluation::{
    binomial_se, curve_area, density_ratio_profile, generate_and_score, initial_points, mode_recovery,
    pixel_perturbation, sample_modes, sample_rows, DensityProfileConfig, PerturbationConfig, Replacement,
    SaliencySource, SamplerConfig, SamplerInit,
};
use crate::manipulation::{log_log_slope, sine_perturb_report, verify_shift_invariance, ShiftFn, SinePerturbation};
use crate::models::{checkpoint, logit_gradients, ArchPreset, ClassifierModel, LogitModel};
use crate::objectives::{score_matching_objective_exact, stability_floor, RegMode, RegularizerConfig};
use crate::rng::{derive, stream, Gaussian};
use crate::tensor::Tensor;
use crate::trace::{
    self, estimate_trace, estimator_variance_report, hutchinson_with, taylor_with, FnField, TraceEstimatorConfig,
    TraceMethod,
};
use crate::trainer::{evaluate_accuracy, init_model, train, train_model, LrSchedule, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    /// `"1"`..`"10"` for criteria, `inv` for invariants.
    pub id: String,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "[{}] {:>3} {:<28} {:>7.1}s  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.seconds,
            self.detail
        )
    }
}

pub const CRITERION_NAMES: [&str; 10] = [
    "shift invariance",
    "sine bounds",
    "trace estimator bias",
    "variance bound",
    "mixture score fidelity",
    "stability regulariser",
    "regulariser trends",
    "pixel perturbation oracle",
    "mode recovery",
    "infrastructure",
];

/// Criteria run by `verify` (the rest train for minutes).
pub const VERIFY_CRITERIA: [u32; 6] = [1, 2, 3, 4, 8, 9];

fn timed(id: u32, body: impl FnOnce() -> Result<(bool, String)>) -> Result<CheckResult> {
    let start = Instant::now();
    let (passed, detail) = body()?;
    Ok(CheckResult {
        id: id.to_string(),
        name: CRITERION_NAMES[id as usize - 1],
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn run_criterion(id: u32) -> Result<CheckResult> {
    match id {
        1 => criterion_1(),
        2 => criterion_2(),
        3 => criterion_3(),
        4 => criterion_4(),
        5 => criterion_5(),
        6 => criterion_6(),
        7 => criterion_7(),
        8 => criterion_8(),
        9 => criterion_9(),
        10 => criterion_10(None),
        _ => Err(Error::Usage(format!("no criterion {id} (expected 1..=10)"))),
    }
}

/// Small conv-small model on glyphs with 256 test images.
fn glyph_model() -> Result<(ClassifierModel, Dataset)> {
    let cfg = TrainConfig {
        epochs: 2,
        n_train: 2000,
        n_test: 256,
        schedule: LrSchedule::constant(0.05)?,
        eval_train_examples: 256,
        seed: 1,
        ..TrainConfig::default()
    };
    let out = train(&cfg)?;
    out.report.check()?;
    Ok((out.model, out.dataset))
}

pub fn criterion_1() -> Result<CheckResult> {
    timed(1, || {
        let (model, ds) = glyph_model()?;
        let d = ds.input.dim();
        let shifts = [
            ShiftFn::Constant(3.7),
            ShiftFn::Linear(Tensor::new(&[d], Gaussian::from_seed(11).vec(d, 1.0))?),
            ShiftFn::random_mlp(d, 64, 100.0, 12),
        ];
        let mut ok = true;
        let mut detail = String::new();
        for s in &shifts {
            let r = verify_shift_invariance(&model, s, &ds.test.x, &ds.test.y)?;
            ok &= r.passed();
            write!(
                detail,
                "{}: Δℓ {:.1e} Δ∇ℓ {:.1e} cos {:.3}; ",
                r.shift, r.max_loss_diff, r.max_loss_grad_diff_inf, r.mean_logit_grad_cosine
            )
            .unwrap();
            if matches!(s, ShiftFn::Mlp { .. }) {
                ok &= r.mean_logit_grad_cosine < 0.9;
            }
        }
        Ok((ok, detail.trim_end_matches("; ").to_string()))
    })
}

pub fn criterion_2() -> Result<CheckResult> {
    timed(2, || {
        let (model, ds) = glyph_model()?;
        let mut ok = true;
        let mut points = Vec::new();
        for m in [10.0, 1e3, 1e5] {
            let r = sine_perturb_report(&model, SinePerturbation::new(0.01, m)?, &ds.test.x, &ds.test.y)?;
            ok &= r.within_bounds();
            points.push((m, r.mean_grad_diff_l1));
        }
        let slope = log_log_slope(&points)?;
        ok &= (slope - 1.0).abs() <= 0.1;
        Ok((
            ok,
            format!(
                "slope {slope:.4}, mean ‖Δ∇ℓ‖₁ {:?}",
                points.iter().map(|p| p.1).collect::<Vec<_>>()
            ),
        ))
    })
}

/// Row-wise `½ Σ a_d x_d² + b·x + c`.
fn diag_quadratic(a: Vec<f64>, b: Vec<f64>, c: f64) -> FnField<impl Fn(&Var) -> Result<Var>> {
    let d = a.len();
    FnField {
        dim: d,
        f: move |x: &Var| {
            let n = x.shape()[0];
            let tile = |v: &[f64]| -> Result<Var> { Ok(Var::constant(Tensor::new(&[n, d], v.repeat(n))?)) };
            Ok(x.square()
                .mul(&tile(&a)?)?
                .scale(0.5)
                .add(&x.mul(&tile(&b)?)?)?
                .sum_cols()?
                .add_scalar(c))
        },
    }
}

fn sample_var(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

pub fn criterion_3() -> Result<CheckResult> {
    timed(3, || {
        let mut ok = true;
        let mut detail = String::new();
        let f = diag_quadratic(vec![1.0, 2.0, -0.5], vec![0.3, 0.0, 1.0], 2.0);
        let x = Tensor::vector(vec![0.5, -1.0, 0.25]);
        let exact = 2.5;
        for method in [TraceMethod::Taylor, TraceMethod::Hutchinson] {
            let cfg = TraceEstimatorConfig {
                method,
                samples: 1000,
                sigma: 0.5,
                seed: 3,
            };
            let est = estimate_trace(&f, &x, &cfg)?;
            let z = (est.value - exact).abs() / est.std_error();
            ok &= z <= 4.0;
            write!(detail, "{} {:.2}σ; ", method.name(), z).unwrap();
        }

        // x⁴ at x = 1: exact trace 12, Taylor bias 6σ². Antithetic pairs cancel odd terms; the
        // shared-noise Hutchinson sample 12u² is subtracted as a control variate.
        let quartic = FnField {
            dim: 1,
            f: |x: &Var| x.square().square().sum_cols(),
        };
        let one = Tensor::vector(vec![1.0]);
        let pairs = 200_000;
        for sigma in [0.1, 0.01] {
            let u = trace::probe_matrix(5, pairs, 1, 1.0);
            let mut probes = Vec::with_capacity(2 * pairs);
            for v in u.data() {
                probes.push(*v);
                probes.push(-*v);
            }
            let probes = Tensor::new(&[2 * pairs, 1], probes)?;
            let t = taylor_with(&quartic, &one, sigma, &probes.scale(sigma))?;
            let h = hutchinson_with(&quartic, &one, &probes)?;
            let pair_bias: Vec<f64> = t.samples.chunks(2).map(|p| 0.5 * (p[0] + p[1]) - 12.0).collect();
            let cv: Vec<f64> = t
                .samples
                .chunks(2)
                .zip(h.samples.chunks(2))
                .map(|(a, b)| 0.5 * (a[0] + a[1] - b[0] - b[1]))
                .collect();
            let n = pairs as f64;
            let target = 6.0 * sigma * sigma;
            let plain = pair_bias.iter().sum::<f64>() / n;
            let plain_se = (sample_var(&pair_bias) / n).sqrt();
            let reduced = cv.iter().sum::<f64>() / n;
            let reduced_se = (sample_var(&cv) / n).sqrt();
            ok &= (plain - target).abs() <= 3.0 * plain_se && (reduced - target).abs() <= 3.0 * reduced_se;
            write!(
                detail,
                "σ={sigma}: bias {plain:.3e}±{plain_se:.1e}, control-variate {reduced:.4e}±{reduced_se:.1e} vs {target:.1e}; "
            )
            .unwrap();
        }
        Ok((ok, detail.trim_end_matches("; ").to_string()))
    })
}

pub fn criterion_4() -> Result<CheckResult> {
    timed(4, || {
        let f = diag_quadratic(vec![1.0, 1.0], vec![0.0; 2], 0.0);
        let sigmas = [0.05, 0.1, 0.5, 1.0];
        let trials = 1000;
        let mut ok = true;
        let mut detail = String::new();
        let rep = estimator_variance_report(&f, &Tensor::vector(vec![3.0, 4.0]), &sigmas, 1, trials, 4)?;
        for r in &rep.rows {
            let bound = 4.0 * 25.0 / (r.sigma * r.sigma);
            let excess = r.var_tte - r.var_hutchinson;
            ok &= excess <= bound * 1.2;
            write!(detail, "σ={}: {:.3}×bound; ", r.sigma, excess / bound).unwrap();
        }
        let origin = estimator_variance_report(&f, &Tensor::zeros(&[2]), &sigmas, 1, trials, 4)?;
        for r in &origin.rows {
            // 95% interval of a sample variance
            let ci = 1.96 * r.var_hutchinson * (2.0 / (trials as f64 - 1.0)).sqrt();
            ok &= (r.var_tte - r.var_hutchinson).abs() <= ci;
        }
        write!(detail, "origin: equal within CI").unwrap();
        Ok((ok, detail))
    })
}

/// Score-matching setup on the desk mixture: mlp-small with β = 1, exact traces (D = 2).
pub fn mixture_config() -> TrainConfig {
    let mut reg = RegularizerConfig::preset(RegMode::ScoreMatching);
    reg.lambda = 0.1;
    reg.trace.method = TraceMethod::Exact;
    TrainConfig {
        epochs: 30,
        batch_size: 64,
        schedule: "0:0.01,20:0.002".parse().expect("valid schedule"),
        weight_decay: 0.0,
        reg,
        data: DataSource::Mixture(None),
        n_train: 3000,
        n_test: 600,
        arch: ArchPreset::MlpSmall,
        beta: 1.0,
        eval_train_examples: 600,
        ..TrainConfig::default()
    }
}

/// Mean squared distance between `∇ₓf_y` and the analytic class score, over rows of `x`.
pub fn score_mse(model: &dyn LogitModel, spec: &GaussianMixtureSpec, x: &Tensor, y: &[usize]) -> Result<f64> {
    let g = logit_gradients(model, x, y)?;
    let mut total = 0.0;
    for (r, &c) in y.iter().enumerate() {
        let s = spec.score(c, x.row(r))?;
        total += g.row(r).iter().zip(&s).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(total / y.len() as f64)
}

/// Exact finite-sample objective on 20 held-out batches: mean and standard error.
fn objective_with_se(model: &ClassifierModel, ds: &Dataset) -> Result<(f64, f64)> {
    let params = model.const_params();
    let batches = 20;
    let per = ds.test.len() / batches;
    let mut vals = Vec::with_capacity(batches);
    for k in 0..batches {
        let idx: Vec<usize> = (k * per..(k + 1) * per).collect();
        let s = ds.test.subset(&idx);
        vals.push(score_matching_objective_exact(
            &|v: &Var| model.forward_with(&params, v),
            &s.x,
            &s.y,
        )?);
    }
    let m = vals.iter().sum::<f64>() / batches as f64;
    Ok((m, (sample_var(&vals) / batches as f64).sqrt()))
}

/// Trains [`mixture_config`]-style models; `hook` also sees the untrained model first.
fn mixture_model(
    cfg: &TrainConfig,
    hook: &mut dyn FnMut(usize, &ClassifierModel) -> Result<()>,
) -> Result<(ClassifierModel, Dataset)> {
    let spec = GaussianMixtureSpec::desk_default();
    let ds = mixture_dataset(&spec, cfg.n_train, cfg.n_test, derive(cfg.seed, "data"))?;
    let mut model = init_model(cfg, &ds)?;
    hook(usize::MAX, &model)?;
    let report = train_model(&mut model, &ds, cfg, hook)?;
    report.check()?;
    Ok((model, ds))
}

pub fn criterion_5() -> Result<CheckResult> {
    timed(5, || {
        let spec = GaussianMixtureSpec::desk_default();
        let mut mses = Vec::new();
        let mut objectives = Vec::new();
        let cfg = mixture_config();
        let ds = mixture_dataset(&spec, cfg.n_train, cfg.n_test, derive(cfg.seed, "data"))?;
        mixture_model(&cfg, &mut |_, m| {
            mses.push(score_mse(m, &spec, &ds.test.x, &ds.test.y)?);
            objectives.push(objective_with_se(m, &ds)?);
            Ok(())
        })?;
        let ratio = mses.last().unwrap() / mses[0];
        // each epoch's 95% interval must reach down to the previous epoch's
        let monotone = objectives
            .windows(2)
            .all(|w| w[1].0 - 1.96 * w[1].1 <= w[0].0 + 1.96 * w[0].1);
        let ok = ratio < 0.15 && monotone;
        Ok((
            ok,
            format!(
                "score MSE {:.3} → {:.3} (ratio {ratio:.3}); objective {:.2} → {:.2}, monotone within CI: {monotone}",
                mses[0],
                mses.last().unwrap(),
                objectives[0].0,
                objectives.last().unwrap().0
            ),
        ))
    })
}

pub fn criterion_6() -> Result<CheckResult> {
    timed(6, || {
        let run = |mu: f64| -> Result<crate::trainer::TrainReport> {
            let mut reg = RegularizerConfig::preset(RegMode::ScoreMatching);
            reg.lambda = 1e-2;
            reg.mu = mu;
            let cfg = TrainConfig {
                epochs: 10,
                n_train: 4000,
                n_test: 500,
                schedule: LrSchedule::constant(0.05)?,
                eval_train_examples: 500,
                reg,
                ..TrainConfig::default()
            };
            Ok(train(&cfg)?.report)
        };
        let free = run(0.0)?;
        let min_h = free.steps.iter().map(|s| s.loss.h).fold(f64::INFINITY, f64::min);
        let collapsed = min_h < -1e3 || free.divergence.is_some();

        let mu = 1e-4;
        let held = run(mu)?;
        let floor = stability_floor(1e-2, mu);
        let min_term = held
            .steps
            .iter()
            .map(|s| 1e-2 * (s.loss.h + mu * s.loss.stability))
            .fold(f64::INFINITY, f64::min);
        let completed = held.divergence.is_none() && held.epochs.len() == 10;
        let ok = collapsed && completed && min_term >= floor - 1e-6;
        Ok((
            ok,
            format!(
                "μ=0: min h {min_h:.1}, diverged {}; μ=1e-4: completed {completed}, min λ(h+μh²) {min_term:.4} ≥ {floor}",
                free.divergence.is_some()
            ),
        ))
    })
}

/// Measurements behind the trend criterion, one row per variant in `RegMode::ALL` order.
#[derive(Clone, Debug, PartialEq)]
pub struct TrendRow {
    pub mode: RegMode,
    pub test_accuracy: f64,
    pub gan_test: f64,
    pub gan_se: f64,
    pub log_ratio: f64,
    pub log_ratio_se: f64,
    pub perturbation_area: f64,
}

pub fn trend_rows() -> Result<Vec<TrendRow>> {
    let base = TrainConfig {
        epochs: 15,
        n_train: 6000,
        n_test: 2000,
        schedule: "0:0.05,10:0.005".parse().expect("valid schedule"),
        ..TrainConfig::default()
    };
    let ds = base.data.open(base.n_train, base.n_test, derive(base.seed, "data"))?;
    let fit = |cfg: &TrainConfig| -> Result<(ClassifierModel, f64)> {
        let mut model = init_model(cfg, &ds)?;
        let report = train_model(&mut model, &ds, cfg, &mut |_, _| Ok(()))?;
        report.check()?;
        Ok((model, report.final_test_accuracy().unwrap_or(0.0)))
    };
    let (evaluator, _) = fit(&TrainConfig {
        arch: ArchPreset::ConvEval,
        seed: 99,
        ..base.clone()
    })?;
    let mut models = Vec::new();
    for mode in RegMode::ALL {
        models.push(fit(&TrainConfig {
            reg: RegularizerConfig::preset(mode),
            ..base.clone()
        })?);
    }
    let (lo, hi) = ds.input_range(0.0, 1.0);
    let sampler = SamplerConfig {
        steps: 200,
        step_size: 0.05,
        range: (lo, hi),
        ..SamplerConfig::default()
    };
    let held_out = ds.test.head(500);
    let density = DensityProfileConfig {
        sigmas: vec![0.0, 0.1],
        samples_per_sigma: 2,
        ..DensityProfileConfig::default()
    };
    let perturb = PerturbationConfig {
        fractions: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
        ..PerturbationConfig::default()
    };
    let baseline = &models[0].0;
    let mut rows = Vec::new();
    for (mode, (model, acc)) in RegMode::ALL.into_iter().zip(&models) {
        let (gan, _, _) = generate_and_score(model, &evaluator, &sampler, 300, None)?;
        let profile = density_ratio_profile(model, &held_out, &density)?;
        let curve = pixel_perturbation(baseline, &SaliencySource::Model(model), &held_out, ds.input, &perturb)?;
        rows.push(TrendRow {
            mode,
            test_accuracy: *acc,
            gan_test: gan.accuracy,
            gan_se: gan.se(),
            log_ratio: profile.points[1].value,
            log_ratio_se: profile.points[1].spread,
            perturbation_area: curve_area(&curve, 0.5),
        });
    }
    Ok(rows)
}

/// Applies the three ordering checks to [`trend_rows`] output: `(gan, density, perturbation)`.
pub fn trend_orderings(rows: &[TrendRow]) -> (bool, bool, bool) {
    let get = |m: RegMode| rows.iter().find(|r| r.mode == m).expect("all modes present");
    let (base, sm, anti, gn) = (
        get(RegMode::None),
        get(RegMode::ScoreMatching),
        get(RegMode::AntiScoreMatching),
        get(RegMode::GradNorm),
    );
    let gap = |a: &TrendRow, b: &TrendRow| (a.gan_test - b.gan_test) > 3.0 * a.gan_se.hypot(b.gan_se);
    let gan = gap(gn, base) && gap(sm, base) && gap(base, anti);
    let density = anti.log_ratio > base.log_ratio && base.log_ratio > gn.log_ratio.max(sm.log_ratio);
    let area = sm.perturbation_area.min(gn.perturbation_area) > base.perturbation_area
        && base.perturbation_area > anti.perturbation_area;
    (gan, density, area)
}

pub fn criterion_7() -> Result<CheckResult> {
    timed(7, || {
        let rows = trend_rows()?;
        let (gan, density, area) = trend_orderings(&rows);
        let mut detail = format!("gan ordering {gan}, density ordering {density}, perturbation ordering {area} | ");
        for r in &rows {
            write!(
                detail,
                "{}: acc {:.3} gan {:.3}±{:.3} logratio {:.4} area {:.4}; ",
                r.mode, r.test_accuracy, r.gan_test, r.gan_se, r.log_ratio, r.perturbation_area
            )
            .unwrap();
        }
        Ok((gan && density && area, detail.trim_end_matches("; ").to_string()))
    })
}

/// Accuracy after replacing the first `floor(frac·P)` pixels in row-major order with the
/// image mean, computed without the saliency machinery.
fn row_major_accuracy(model: &dyn LogitModel, x: &Tensor, y: &[usize], frac: f64) -> Result<f64> {
    let d = x.row_len();
    let k = (frac * d as f64 + 1e-9).floor() as usize;
    let mut data = x.data().to_vec();
    for row in data.chunks_mut(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        row[..k].iter_mut().for_each(|v| *v = mean);
    }
    let logits = model.logits(&Tensor::new(x.shape(), data)?)?;
    let pred = logits.argmax_rows();
    Ok(pred.iter().zip(y).filter(|(p, t)| p == t).count() as f64 / y.len() as f64)
}

pub fn criterion_8() -> Result<CheckResult> {
    timed(8, || {
        let (d, k) = (64, 4);
        let ds = make_informative_pixels_dataset(d, k, 2000, 8)?;
        let cfg = TrainConfig {
            epochs: 10,
            arch: ArchPreset::Linear,
            schedule: LrSchedule::constant(0.05)?,
            data: DataSource::Informative { dim: d, k },
            eval_train_examples: 500,
            ..TrainConfig::default()
        };
        let mut model = init_model(&cfg, &ds)?;
        train_model(&mut model, &ds, &cfg, &mut |_, _| Ok(()))?.check()?;
        let keep_only = (d - k) as f64 / d as f64;
        let mut fractions: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        fractions.extend([keep_only, 1.0]);
        let pcfg = PerturbationConfig {
            fractions: fractions.clone(),
            replacement: Replacement::ImageMean,
            ..PerturbationConfig::default()
        };
        let positions = ds.informative.clone().expect("informative task records positions");
        let curve = pixel_perturbation(&model, &SaliencySource::Ideal(positions), &ds.test, ds.input, &pcfg)?;
        let kept = curve
            .points
            .iter()
            .filter(|p| p.abscissa <= keep_only)
            .all(|p| p.value >= 0.99);
        let beyond = curve.points.last().unwrap().value;
        let chance = (beyond - 0.5).abs() <= 3.0 * binomial_se(0.5, ds.test.len());

        let constant = pixel_perturbation(&model, &SaliencySource::Constant, &ds.test, ds.input, &pcfg)?;
        let mut bit_exact = true;
        for p in &constant.points {
            let explicit = if p.abscissa == 0.0 {
                evaluate_accuracy(&model, &ds.test)?
            } else {
                row_major_accuracy(&model, &ds.test.x, &ds.test.y, p.abscissa)?
            };
            bit_exact &= explicit.to_bits() == p.value.to_bits();
        }
        Ok((
            kept && chance && bit_exact,
            format!(
                "ideal ≥ 0.99 through {keep_only:.4}: {kept} (min {:.4}); all replaced {beyond:.4}; row-major fallback bit-exact: {bit_exact}",
                curve.points.iter().filter(|p| p.abscissa <= keep_only).map(|p| p.value).fold(1.0, f64::min)
            ),
        ))
    })
}

pub fn criterion_9() -> Result<CheckResult> {
    timed(9, || {
        let spec = GaussianMixtureSpec::desk_default();
        let (model, _) = mixture_model(&mixture_config(), &mut |_, _| Ok(()))?;
        let sampler = SamplerConfig {
            steps: 500,
            step_size: 0.01,
            init: SamplerInit::Uniform,
            range: (-2.5, 2.5),
            ..SamplerConfig::default()
        };
        let init = initial_points(&sampler, 100, 2, None)?;
        let (run, classes) = sample_modes(&model, &sampler, &init)?;
        run.check()?;
        let recovered = mode_recovery(&spec, &run.samples, &classes, 3.0);

        let mu = [0.7, -1.3, 2.0];
        let quad = |x: &Var| -> Result<Var> {
            let n = x.shape()[0];
            let m = Var::constant(Tensor::new(&[n, 3], mu.repeat(n))?);
            Ok(x.sub(&m)?.square().sum_cols()?.scale(-0.5))
        };
        let toy = SamplerConfig {
            steps: 500,
            step_size: 0.1,
            clip: false,
            ..SamplerConfig::default()
        };
        let toy_run = sample_rows(&quad, &toy, &initial_points(&toy, 10, 3, None)?)?;
        let worst = toy_run
            .samples
            .data()
            .chunks(3)
            .flat_map(|r| r.iter().zip(&mu).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        Ok((
            recovered >= 0.9 && worst < 1e-6,
            format!(
                "{:.0}% of 100 chains within 3σ of a class mode; quadratic error {worst:.1e}",
                100.0 * recovered
            ),
        ))
    })
}

/// `verify_seconds`, when given, is the measured runtime of the `verify` set, checked
/// against the 10-minute budget.
pub fn criterion_10(verify_seconds: Option<f64>) -> Result<CheckResult> {
    timed(10, || {
        let (model, ds) = glyph_model()?;
        let restored = checkpoint::from_bytes(&checkpoint::to_bytes(&model))?;
        let path = std::env::temp_dir().join(format!("scoregrad-verify-{}.ckpt", std::process::id()));
        checkpoint::save(&model, &path)?;
        let loaded = checkpoint::load(&path);
        let _ = std::fs::remove_file(&path);
        let loaded = loaded?;
        let same_params = |m: &ClassifierModel| {
            model.params.tensors().iter().zip(m.params.tensors()).all(|(a, b)| {
                a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits())
            })
        };
        let z = model.logits(&ds.test.x)?;
        let round_trip = same_params(&restored)
            && same_params(&loaded)
            && loaded.arch == model.arch
            && z.data()
                .iter()
                .zip(loaded.logits(&ds.test.x)?.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());

        let ratios = gradcheck::check_ops(20, 1e-6, 1e-4)?;
        let worst = ratios
            .iter()
            .cloned()
            .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
        let ops_ok = ratios.iter().all(|r| r.1 <= 1.0);
        let budget_ok = verify_seconds.is_none_or(|s| s < 600.0);
        let mut detail = format!(
            "checkpoint bit-exact: {round_trip}; {} ops, worst {} at {:.1e} of tolerance",
            ratios.len(),
            worst.0,
            worst.1
        );
        if let Some(s) = verify_seconds {
            write!(detail, "; verify set {s:.0}s").unwrap();
        }
        Ok((round_trip && ops_ok && budget_ok, detail))
    })
}

fn invariant(name: &'static str, body: impl FnOnce() -> Result<(bool, String)>) -> Result<CheckResult> {
    let start = Instant::now();
    let (passed, detail) = body()?;
    Ok(CheckResult {
        id: "inv".into(),
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Fast invariants of the data, training and trace modules.
pub fn invariant_suite() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    out.push(invariant("normalisation", || {
        let ds = DataSource::Glyphs.open(500, 10, 3)?;
        let x = ds.train.x.data();
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Ok((
            mean.abs() < 1e-10 && (std - 1.0).abs() < 1e-10,
            format!("mean {mean:.1e}, std−1 {:.1e}", std - 1.0),
        ))
    })?);
    out.push(invariant("loader determinism", || {
        let dir = std::env::temp_dir().join(format!("scoregrad-verify-idx-{}", std::process::id()));
        std::fs::create_dir_all(&dir)?;
        let mut rng = stream(4);
        let images = IdxArray {
            dims: vec![6, 5, 5],
            data: (0..150).map(|_| rand::Rng::gen(&mut rng)).collect(),
        };
        let labels = IdxArray {
            dims: vec![6],
            data: vec![0, 1, 2, 3, 4, 5],
        };
        std::fs::write(dir.join("images"), encode_idx(&images))?;
        std::fs::write(dir.join("labels"), encode_idx(&labels))?;
        let a = load_idx(&dir.join("images"), &dir.join("labels"));
        let b = load_idx(&dir.join("images"), &dir.join("labels"));
        let _ = std::fs::remove_dir_all(&dir);
        let (a, b) = (a?, b?);
        let same = a.1 == b.1
            && a.0.y == b.0.y
            && a.0
                .x
                .data()
                .iter()
                .zip(b.0.x.data())
                .all(|(p, q)| p.to_bits() == q.to_bits());
        Ok((same, "reloading the same IDX files gives bit-identical tensors".into()))
    })?);
    out.push(invariant("analytic mixture score", || {
        let spec = GaussianMixtureSpec::desk_default();
        let mut g = Gaussian::from_seed(5);
        let mut worst = 0.0_f64;
        for i in 0..1000 {
            let x = g.vec(2, 1.5);
            let class = i % 3;
            let s = spec.score(class, &x)?;
            for d in 0..2 {
                let h = 1e-5;
                let (mut up, mut down) = (x.clone(), x.clone());
                up[d] += h;
                down[d] -= h;
                let fd = (spec.log_density(class, &up)? - spec.log_density(class, &down)?) / (2.0 * h);
                worst = worst.max((fd - s[d]).abs());
            }
        }
        Ok((worst < 1e-6, format!("max |score − FD| {worst:.1e} over 1000 points")))
    })?);
    out.push(invariant("replay determinism", || {
        let cfg = TrainConfig {
            epochs: 2,
            n_train: 200,
            n_test: 100,
            batch_size: 32,
            data: DataSource::Blobs,
            arch: ArchPreset::MlpSmall,
            reg: RegularizerConfig::preset(RegMode::ScoreMatching),
            ..TrainConfig::default()
        };
        let a = train(&cfg)?;
        let b = train(&cfg)?;
        let same = a.report.steps_csv() == b.report.steps_csv()
            && checkpoint::to_bytes(&a.model) == checkpoint::to_bytes(&b.model);
        Ok((
            same,
            "identical config and seed give identical steps and weights".into(),
        ))
    })?);
    out.push(invariant("shared trace noise", || {
        let f = diag_quadratic(vec![1.0, 3.0], vec![0.5, -1.0], 0.0);
        let x = Tensor::vector(vec![2.0, 1.0]);
        let sigma = 0.1;
        let u = trace::probe_matrix(11, 50, 2, 1.0);
        let t = taylor_with(&f, &x, sigma, &u.scale(sigma))?;
        let h = hutchinson_with(&f, &x, &u)?;
        // on a quadratic the two samples differ by exactly the first-order term (2/σ)·∇f·u
        let grad = [2.0 + 0.5, 3.0 - 1.0];
        let worst = (0..50)
            .map(|i| {
                let lin = 2.0 / sigma * (grad[0] * u.row(i)[0] + grad[1] * u.row(i)[1]);
                (t.samples[i] - h.samples[i] - lin).abs()
            })
            .fold(0.0, f64::max);
        Ok((worst < 1e-9, format!("max deviation {worst:.1e}")))
    })?);
    Ok(out)
}

/// Runs the `verify` set: criteria 1–4, 8, 9 and the invariants.
pub fn verify_all(progress: &mut dyn FnMut(&CheckResult)) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for id in VERIFY_CRITERIA {
        let r = run_criterion(id)?;
        progress(&r);
        out.push(r);
    }
    for r in invariant_suite()? {
        progress(&r);
        out.push(r);
    }
    Ok(out)
}

pub fn table(results: &[CheckResult]) -> String {
    let mut s = String::new();
    for r in results {
        writeln!(s, "{}", r.line()).unwrap();
    }
    let passed = results.iter().filter(|r| r.passed).count();
    writeln!(s, "{passed}/{} checks passed", results.len()).unwrap();
    s
}
