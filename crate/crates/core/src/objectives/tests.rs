use super::*;
use crate::models::{ArchPreset, Architecture, ClassifierModel, InputShape};
use crate::rng::Gaussian;
use crate::trace::probe;

fn toy_model() -> ClassifierModel {
    // 2·8 + 8 + 8·3 + 3 = 51 parameters
    let arch = Architecture::build(ArchPreset::Mlp(vec![8]), InputShape::flat(2), 3, 10.0).unwrap();
    ClassifierModel::init(arch, 21)
}

fn toy_batch() -> (Tensor, Vec<usize>, Vec<u64>) {
    let x = Tensor::new(&[4, 2], Gaussian::from_seed(5).vec(8, 1.0)).unwrap();
    (x, vec![0, 2, 1, 2], vec![10, 11, 12, 13])
}

fn with_mode(mode: RegMode) -> RegularizerConfig {
    let mut cfg = RegularizerConfig::preset(mode);
    cfg.lambda = 0.1;
    cfg.mu = 0.01;
    cfg.tau = 2.0;
    cfg.trace.samples = 3;
    cfg
}

fn model_loss(m: &ClassifierModel, cfg: &RegularizerConfig) -> Loss {
    let (x, y, seeds) = toy_batch();
    let params = m.const_params();
    regularized_loss(&|v: &Var| m.forward_with(&params, v), &x, &y, cfg, &seeds).unwrap()
}

#[test]
fn zero_lambda_gives_cross_entropy_exactly() {
    let m = toy_model();
    let base = model_loss(&m, &RegularizerConfig::preset(RegMode::None)).breakdown;
    for mode in RegMode::ALL {
        let mut cfg = with_mode(mode);
        cfg.lambda = 0.0;
        let b = model_loss(&m, &cfg).breakdown;
        assert_eq!(b.total, b.cross_entropy, "{mode}");
        assert_eq!(b.total, base.total, "{mode}");
    }
}

#[test]
fn composition_examples() {
    let mut cfg = RegularizerConfig::preset(RegMode::ScoreMatching);
    cfg.lambda = 1e-3;
    cfg.mu = 1e-4;
    let b = LossBreakdown::compose(&cfg, 0.5, 2.0, 1.0, 4.0);
    assert!((b.total - 0.5025004).abs() < 1e-15);

    let anti = RegularizerConfig::preset(RegMode::AntiScoreMatching);
    assert_eq!(anti.lambda, 1e-4);
    let clamp = |h: f64| h.min(anti.tau);
    let b = LossBreakdown::compose(&anti, 1.0, clamp(500.0), 0.0, 0.0);
    assert!((b.total - 0.95).abs() < 1e-15);
    let b = LossBreakdown::compose(&anti, 1.0, clamp(1500.0), 0.0, 0.0);
    assert!((b.total - 0.9).abs() < 1e-15);
}

#[test]
fn clamp_blocks_gradient_beyond_tau() {
    let _g = GradModeGuard::set(true);
    for (h0, expect) in [(1500.0, 0.0), (500.0, -1e-4)] {
        let h = Var::leaf(Tensor::vector(vec![h0]));
        let total = h.clamp_max(1000.0).mean().scale(-1e-4).add_scalar(1.0);
        let g = autodiff::grad_tensors(&total, &[&h]).unwrap().remove(0);
        assert_eq!(g.data(), &[expect]);
    }
}

#[test]
fn grad_norm_penalty_of_a_linear_logit() {
    // f_0(x) = 3x₁ + 4x₂, f_1 = 0
    let w = Var::constant(Tensor::matrix(2, 2, vec![3.0, 0.0, 4.0, 0.0]).unwrap());
    let logits = |x: &Var| x.matmul(&w);
    let x = Tensor::matrix(2, 2, vec![0.1, 0.2, -1.0, 5.0]).unwrap();
    let cfg = RegularizerConfig::preset(RegMode::GradNorm);
    let loss = regularized_loss(&logits, &x, &[0, 0], &cfg, &[0, 1]).unwrap();
    let b = loss.breakdown;
    assert!((b.grad_norm - 25.0).abs() < 1e-12);
    assert!((b.total - b.cross_entropy - 1e-3 * 12.5).abs() < 1e-15);
}

#[test]
fn inactive_terms_are_exactly_zero() {
    let m = toy_model();
    for mode in RegMode::ALL {
        let cfg = with_mode(mode);
        let b = model_loss(&m, &cfg).breakdown;
        let (h, gn, st) = (b.h != 0.0, b.grad_norm != 0.0, b.stability != 0.0);
        match mode {
            RegMode::None => assert!(!h && !gn && !st),
            RegMode::ScoreMatching => assert!(h && gn && st),
            RegMode::AntiScoreMatching => assert!(h && !gn && !st),
            RegMode::GradNorm => assert!(!h && gn && !st),
        }
        assert!((b.reconstruct(&cfg) - b.total).abs() < 1e-10, "{mode}");
    }
}

#[test]
fn anti_mode_reports_the_clamped_mean() {
    let m = toy_model();
    let mut cfg = with_mode(RegMode::AntiScoreMatching);
    cfg.tau = 1e-3;
    let loss = model_loss(&m, &cfg);
    let expect = loss.h_per_example.iter().map(|h| h.min(cfg.tau)).sum::<f64>() / 4.0;
    assert!((loss.breakdown.h - expect).abs() < 1e-12);
}

/// Central differences of the total over every parameter.
fn fd_check(cfg: &RegularizerConfig) {
    let m = toy_model();
    let (x, y, seeds) = toy_batch();
    let _g = GradModeGuard::set(true);
    let params = m.leaf_params();
    let loss = regularized_loss(&|v: &Var| m.forward_with(&params, v), &x, &y, cfg, &seeds).unwrap();
    let refs: Vec<&Var> = params.iter().collect();
    let grads = autodiff::grad_tensors(&loss.total, &refs).unwrap();
    assert_eq!(grads.iter().map(|g| g.len()).sum::<usize>(), 51);

    let eval = |tensors: Vec<Tensor>| {
        let ps: Vec<Var> = tensors.into_iter().map(Var::constant).collect();
        regularized_loss(&|v: &Var| m.forward_with(&ps, v), &x, &y, cfg, &seeds)
            .unwrap()
            .breakdown
            .total
    };
    let base = m.params.tensors();
    let eps = 1e-5;
    let gmax = grads.iter().map(|g| g.max_abs()).fold(0.0, f64::max);
    for (k, g) in grads.iter().enumerate() {
        for j in 0..g.len() {
            let mut plus = base.clone();
            let mut d = plus[k].to_vec();
            d[j] += eps;
            plus[k] = Tensor::new(plus[k].shape(), d).unwrap();
            let mut minus = base.clone();
            let mut d = minus[k].to_vec();
            d[j] -= eps;
            minus[k] = Tensor::new(minus[k].shape(), d).unwrap();
            let fd = (eval(plus) - eval(minus)) / (2.0 * eps);
            let an = g.data()[j];
            assert!(
                (fd - an).abs() <= 1e-5 * an.abs().max(gmax * 1e-2),
                "{}: param {k}[{j}] analytic {an} fd {fd}",
                cfg.mode
            );
        }
    }
}

#[test]
fn parameter_gradients_match_finite_differences_in_every_mode() {
    for mode in RegMode::ALL {
        let mut cfg = with_mode(mode);
        // keep the clamp inactive so the objective is smooth at the test point
        cfg.tau = 1e6;
        fd_check(&cfg);
    }
}

#[test]
fn hutchinson_and_exact_traces_are_differentiable_in_parameters() {
    for method in [TraceMethod::Hutchinson, TraceMethod::Exact] {
        let mut cfg = with_mode(RegMode::ScoreMatching);
        cfg.trace.method = method;
        fd_check(&cfg);
    }
}

/// Row-wise quadratic logits `f_c(x) = ½ xᵀdiag(a_c)x + b_cᵀx`.
fn quadratic_logits(x: &Var) -> Result<Var> {
    let a = [[1.0, -2.0], [0.5, 3.0]];
    let b = [[0.3, 0.0], [-1.0, 2.0]];
    let n = x.shape()[0];
    let mut cols = Vec::new();
    for c in 0..2 {
        let rep =
            |v: [f64; 2]| Var::constant(Tensor::new(&[n, 2], v.iter().copied().cycle().take(2 * n).collect()).unwrap());
        let f = x
            .square()
            .mul(&rep(a[c]))?
            .scale(0.5)
            .add(&x.mul(&rep(b[c]))?)?
            .sum_cols()?
            .reshape(&[n, 1])?
            .pad_cols(c, 2)?;
        cols.push(f);
    }
    cols[0].add(&cols[1])
}

#[test]
fn taylor_h_is_consistent_with_exact_on_quadratics() {
    let x = Tensor::new(&[3, 2], vec![1.0, 2.0, -0.5, 0.0, 0.3, -1.2]).unwrap();
    let labels = [0, 1, 1];
    let seeds = [7, 8, 9];
    let mut cfg = RegularizerConfig::preset(RegMode::ScoreMatching);
    cfg.trace.samples = 500;
    let taylor = regularized_loss(&quadratic_logits, &x, &labels, &cfg, &seeds).unwrap();
    cfg.trace.method = TraceMethod::Exact;
    let exact = regularized_loss(&quadratic_logits, &x, &labels, &cfg, &seeds).unwrap();
    let traces = [-1.0, 3.5, 3.5];
    let a = [[1.0, -2.0], [0.5, 3.0]];
    let b = [[0.3, 0.0], [-1.0, 2.0]];
    for r in 0..3 {
        assert!((exact.h_per_example[r] - traces[r]).abs() < 1e-12);
        let c = labels[r];
        let g: Vec<f64> = (0..2).map(|k| a[c][k] * x.row(r)[k] + b[c][k]).collect();
        // per-sample variance (2/σ)²‖∇f‖² + 2‖A‖²_F for Gaussian probes
        let s = cfg.trace.sigma;
        let var = 4.0 / (s * s) * (g[0] * g[0] + g[1] * g[1]) + 2.0 * (a[c][0].powi(2) + a[c][1].powi(2));
        let se = (var / 500.0).sqrt();
        assert!((taylor.h_per_example[r] - traces[r]).abs() < 3.0 * se);
    }
    // the Taylor estimate uses the documented probes
    let s = cfg.trace.sigma;
    let u = probe(seeds[0], 0, 2);
    let xr = x.row(0);
    let f = |p: &[f64]| 0.5 * (p[0] * p[0] - 2.0 * p[1] * p[1]) + 0.3 * p[0];
    let shifted = [xr[0] + s * u[0], xr[1] + s * u[1]];
    let first = 2.0 / (s * s) * (f(&shifted) - f(xr));
    let mut one = RegularizerConfig::preset(RegMode::ScoreMatching);
    one.trace.samples = 1;
    let single = regularized_loss(&quadratic_logits, &x, &labels, &one, &seeds).unwrap();
    assert!((single.h_per_example[0] - first).abs() < 1e-9);
}

#[test]
fn stability_floor_value() {
    assert!((stability_floor(1e-3, 1e-4) + 2.5).abs() < 1e-12);
    let lowest = (-20_000..=0)
        .map(|h| {
            let h = h as f64;
            1e-3 * (h + 1e-4 * h * h)
        })
        .fold(f64::INFINITY, f64::min);
    assert!((lowest + 2.5).abs() < 1e-12);
}

fn neg_half_norm(x: &Var) -> Result<Var> {
    let n = x.shape()[0];
    let f = x.square().sum_cols()?.scale(-0.5).reshape(&[n, 1])?;
    f.pad_cols(0, 2)?.add(&f.pad_cols(1, 2)?)
}

#[test]
fn standard_normal_population_objective() {
    let n = 100_000;
    let x = Tensor::new(&[n, 2], Gaussian::from_seed(31).vec(2 * n, 1.0)).unwrap();
    let v = score_matching_objective_exact(&neg_half_norm, &x, &vec![0; n]).unwrap();
    // h = −2 exactly, ½‖x‖² has variance 1
    let se = 1.0 / (n as f64).sqrt();
    assert!((v + 1.0).abs() < 4.0 * se, "{v}");
}

#[test]
fn constant_model_objective_is_zero() {
    let zero = |x: &Var| Ok(x.slice_cols(0, 2)?.scale(0.0).add_scalar(3.0));
    let x = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    assert_eq!(score_matching_objective_exact(&zero, &x, &[0, 1, 0]).unwrap(), 0.0);
}

#[test]
fn non_finite_h_reports_the_example() {
    let logits = |x: &Var| Ok(x.scale(50.0).exp().exp());
    let x = Tensor::matrix(2, 2, vec![-100.0, -100.0, 1.0, 1.0]).unwrap();
    let mut cfg = RegularizerConfig::preset(RegMode::AntiScoreMatching);
    cfg.trace.sigma = 1.0;
    match regularized_loss(&logits, &x, &[0, 0], &cfg, &[0, 1]) {
        Err(Error::NonFinite { term, index }) => {
            assert_eq!(term, "h");
            assert_eq!(index, 1);
        }
        other => panic!("unexpected {:?}", other.map(|l| l.breakdown)),
    }
}

#[test]
fn mode_names_parse() {
    for m in RegMode::ALL {
        assert_eq!(m.name().parse::<RegMode>().unwrap(), m);
    }
    assert_eq!("score-matching".parse::<RegMode>().unwrap(), RegMode::ScoreMatching);
    assert!("sliced".parse::<RegMode>().is_err());
}
