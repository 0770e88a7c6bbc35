use super::*;
use crate::models::{ArchPreset, Architecture, ClassifierModel, InputShape};
use proptest::prelude::*;

fn mlp(d: usize, c: usize, seed: u64) -> ClassifierModel {
    let arch = Architecture::build(ArchPreset::Mlp(vec![16]), InputShape::flat(d), c, 10.0).unwrap();
    ClassifierModel::init(arch, seed)
}

fn batch(n: usize, d: usize, seed: u64) -> Tensor {
    Tensor::new(&[n, d], Gaussian::from_seed(seed).vec(n * d, 1.0)).unwrap()
}

fn labels(n: usize, c: usize) -> Vec<usize> {
    (0..n).map(|i| i % c).collect()
}

#[test]
fn constant_shift_changes_nothing_observable() {
    let m = mlp(6, 4, 1);
    let x = batch(32, 6, 2);
    let r = verify_shift_invariance(&m, &ShiftFn::Constant(5.0), &x, &labels(32, 4)).unwrap();
    assert!(r.passed());
    assert!(r.max_loss_diff < 1e-12 && r.max_prob_diff < 1e-14);
    assert!(r.predictions_agree);
    let shim = LogitShim::new(&m, ShiftFn::Constant(5.0)).unwrap();
    assert_eq!(
        logit_gradients(&m, &x, &labels(32, 4)).unwrap(),
        logit_gradients(&shim, &x, &labels(32, 4)).unwrap()
    );
}

#[test]
fn linear_shift_moves_logit_gradients_by_w() {
    let m = mlp(3, 3, 4);
    let w = Tensor::vector(vec![3.0, -4.0, 0.5]);
    let shim = LogitShim::new(&m, ShiftFn::Linear(w.clone())).unwrap();
    let x = batch(20, 3, 5);
    let y = labels(20, 3);
    let diff = logit_gradients(&shim, &x, &y)
        .unwrap()
        .sub(&logit_gradients(&m, &x, &y).unwrap())
        .unwrap();
    for r in 0..20 {
        for (a, b) in diff.row(r).iter().zip(w.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    let r = verify_shift_invariance(&m, &ShiftFn::Linear(w), &x, &y).unwrap();
    assert!(r.max_loss_diff < 1e-10 && r.max_loss_grad_diff_inf < 1e-10);
}

#[test]
fn mlp_shift_scrambles_logit_gradients_only() {
    let m = mlp(10, 3, 6);
    let x = batch(64, 10, 7);
    let shift = ShiftFn::random_mlp(10, 32, 50.0, 8);
    let r = verify_shift_invariance(&m, &shift, &x, &labels(64, 3)).unwrap();
    assert!(r.passed(), "{r:?}");
    assert!(r.max_loss_diff < 1e-9);
    assert!(r.mean_logit_grad_cosine < 0.5, "{}", r.mean_logit_grad_cosine);
    assert!(r.predictions_agree);
}

#[test]
fn shim_rejects_mismatched_width() {
    let m = mlp(3, 2, 0);
    assert!(LogitShim::new(&m, ShiftFn::Linear(Tensor::vector(vec![1.0; 4]))).is_err());
}

#[test]
fn sine_bounds_small_instance() {
    let m = mlp(2, 3, 9);
    let x = batch(50, 2, 10);
    let r = sine_perturb_report(&m, SinePerturbation::new(0.01, 1000.0).unwrap(), &x, &labels(50, 3)).unwrap();
    assert!(r.within_bounds());
    assert!(r.max_loss_diff <= 0.01);
    assert_eq!(r.grad_bound, 20.0);
    assert!(r.attained_fraction() <= 1.0);
}

#[test]
fn sine_gradient_matches_closed_form() {
    // Δ∇ℓ = ε·m·cos(m·Σx)·1
    let m = mlp(4, 2, 11);
    let x = batch(8, 4, 12);
    let (eps, freq) = (0.02, 37.0);
    let r = sine_perturb_report(&m, SinePerturbation::new(eps, freq).unwrap(), &x, &labels(8, 2)).unwrap();
    let expected: Vec<f64> = (0..8)
        .map(|i| 4.0 * eps * freq * (freq * x.row(i).iter().sum::<f64>()).cos().abs())
        .collect();
    let max = expected.iter().copied().fold(0.0, f64::max);
    assert!((r.max_grad_diff_l1 - max).abs() < 1e-10);
}

#[test]
fn vanishing_frequency_leaves_gradients() {
    let m = mlp(5, 3, 13);
    let x = batch(16, 5, 14);
    let r = sine_perturb_report(&m, SinePerturbation::new(0.01, 1e-6).unwrap(), &x, &labels(16, 3)).unwrap();
    assert!(r.max_grad_diff_l1 < 1e-7);
    assert!(SinePerturbation::new(0.0, 1.0).is_err());
    assert!(SinePerturbation::new(0.1, f64::INFINITY).is_err());
}

#[test]
fn gradient_change_grows_linearly_in_frequency() {
    let d = 784;
    let arch = Architecture::build(ArchPreset::Linear, InputShape::flat(d), 10, 10.0).unwrap();
    let m = ClassifierModel::init(arch, 15);
    let x = batch(64, d, 16);
    let y = labels(64, 10);
    let pts: Vec<(f64, f64)> = [10.0, 1e3, 1e5]
        .iter()
        .map(|&freq| {
            let r = sine_perturb_report(&m, SinePerturbation::new(0.01, freq).unwrap(), &x, &y).unwrap();
            assert!(r.within_bounds());
            (freq, r.mean_grad_diff_l1)
        })
        .collect();
    let slope = log_log_slope(&pts).unwrap();
    assert!((slope - 1.0).abs() < 0.1, "{slope}");
}

#[test]
fn slope_of_exact_power_law() {
    let pts: Vec<(f64, f64)> = [1.0, 10.0, 100.0].iter().map(|&x| (x, 3.0 * x * x)).collect();
    assert!((log_log_slope(&pts).unwrap() - 2.0).abs() < 1e-12);
    assert!(log_log_slope(&[(1.0, 1.0)]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn shimmed_probabilities_and_predictions_are_unchanged(seed in 0u64..1000, c in -50.0f64..50.0, scale in 0.1f64..20.0) {
        let m = mlp(4, 3, seed);
        let x = batch(8, 4, seed + 1);
        for shift in [ShiftFn::Constant(c), ShiftFn::random_mlp(4, 8, scale, seed + 2)] {
            let r = verify_shift_invariance(&m, &shift, &x, &labels(8, 3)).unwrap();
            prop_assert!(r.max_prob_diff < 1e-12);
            prop_assert!(r.predictions_agree);
            prop_assert!(r.passed());
        }
    }

    #[test]
    fn sine_bounds_hold_pointwise(seed in 0u64..1000, eps in 1e-4f64..1.0, freq in 1e-3f64..1e4) {
        let m = mlp(3, 2, seed);
        let x = batch(4, 3, seed + 3);
        let r = sine_perturb_report(&m, SinePerturbation::new(eps, freq).unwrap(), &x, &labels(4, 2)).unwrap();
        prop_assert!(r.max_loss_diff <= eps * (1.0 + 1e-12));
        prop_assert!(r.max_grad_diff_l1 <= r.grad_bound * (1.0 + 1e-9));
    }
}
