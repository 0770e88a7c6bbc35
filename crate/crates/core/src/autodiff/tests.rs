use super::gradcheck::*;
use super::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn assert_close(a: &Tensor, b: &Tensor, abs: f64, rel: f64, what: &str) {
    assert_eq!(a.shape(), b.shape(), "{what}");
    for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        let tol = abs.max(rel * x.abs().max(y.abs()));
        assert!((x - y).abs() <= tol, "{what}[{i}]: {x} vs {y}");
    }
}

#[test]
fn every_op_matches_finite_differences_at_20_points() {
    for (name, shape, lo, hi, f) in op_suite() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let x = random_tensor(&mut rng, &shape, lo, hi);
            let (_, g) = value_and_grad(&*f, &x).unwrap();
            let fd = fd_grad(&*f, &x, 1e-5);
            assert_close(&g, &fd, 1e-6, 1e-4, name);
        }
    }
}

#[test]
fn every_op_has_correct_second_derivative_action() {
    // hvp against a finite difference of the autodiff gradient
    for (name, shape, lo, hi, f) in op_suite() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..3 {
            let x = random_tensor(&mut rng, &shape, lo, hi);
            let v = random_tensor(&mut rng, &shape, -1.0, 1.0);
            let hv = hvp(&*f, &x, &v).unwrap();
            let eps = 1e-5;
            let xp = x.add(&v.scale(eps)).unwrap();
            let xm = x.sub(&v.scale(eps)).unwrap();
            let gp = value_and_grad(&*f, &xp).unwrap().1;
            let gm = value_and_grad(&*f, &xm).unwrap().1;
            let fd = gp.sub(&gm).unwrap().scale(1.0 / (2.0 * eps));
            assert_close(&hv, &fd, 1e-5, 1e-4, name);
        }
    }
}

#[test]
fn softplus_examples() {
    let y = Var::constant(Tensor::vector(vec![0.0, 100.0, -100.0])).softplus(10.0);
    let d = y.value().data();
    assert!((d[0] - 2f64.ln() / 10.0).abs() < 1e-15);
    assert!((d[1] - 100.0).abs() < 1e-12);
    assert!(d[2] >= 0.0 && d[2] < 1e-300);
}

#[test]
fn log_sum_exp_example() {
    let x = Var::constant(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
    let v = x.log_sum_exp_rows().unwrap().value().data()[0];
    // direct summation oracle: ln(e + e² + e³)
    let oracle = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln();
    assert!((v - oracle).abs() < 1e-14);
    assert!((v - 3.40760596444438).abs() < 1e-12);
    let big = Var::constant(Tensor::matrix(1, 2, vec![1000.0, 0.0]).unwrap());
    assert!((big.log_sum_exp_rows().unwrap().value().data()[0] - 1000.0).abs() < 1e-12);
}

#[test]
fn grad_of_half_norm_is_identity() {
    let x = Tensor::vector(vec![3.0, 4.0]);
    let (v, g) = value_and_grad(|x| Ok(x.square().sum().scale(0.5)), &x).unwrap();
    assert_eq!(v, 12.5);
    assert_eq!(g.data(), &[3.0, 4.0]);
}

#[test]
fn second_derivative_of_cube() {
    let x = Var::leaf(Tensor::scalar(2.0));
    let y = x.mul(&x).unwrap().mul(&x).unwrap();
    let g = grad(&y, &[&x], true).unwrap().remove(0);
    assert_eq!(g.item().unwrap(), 12.0);
    let gg = grad(&g, &[&x], false).unwrap().remove(0);
    assert_eq!(gg.item().unwrap(), 12.0);
}

#[test]
fn non_scalar_output_is_rejected() {
    let x = Var::leaf(Tensor::vector(vec![1.0, 2.0]));
    assert!(grad(&x.square(), &[&x], false).is_err());
}

#[test]
fn unreachable_leaf_gets_zeros() {
    let x = Var::leaf(Tensor::vector(vec![1.0, 2.0]));
    let z = Var::leaf(Tensor::matrix(2, 2, vec![1.0; 4]).unwrap());
    let g = grad(&x.square().sum(), &[&z, &x], false).unwrap();
    assert_eq!(g[0].value(), &Tensor::zeros(&[2, 2]));
    assert_eq!(g[1].value().data(), &[2.0, 4.0]);
}

#[test]
fn first_order_grads_record_no_graph() {
    let x = Var::leaf(Tensor::vector(vec![1.0, 2.0]));
    let g = grad(&x.exp().sum(), &[&x], false).unwrap().remove(0);
    assert!(!g.requires_grad());
    let g2 = grad(&x.exp().sum(), &[&x], true).unwrap().remove(0);
    assert!(g2.requires_grad());
}

#[test]
fn shape_errors_name_the_op() {
    let a = Var::constant(Tensor::vector(vec![1.0, 2.0]));
    let b = Var::constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
    match a.add(&b) {
        Err(Error::ShapeMismatch { op, lhs, rhs }) => {
            assert_eq!(op, "add");
            assert_eq!(lhs, vec![2]);
            assert_eq!(rhs, vec![3]);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(hvp(
        |x| Ok(x.sum()),
        &Tensor::vector(vec![1.0]),
        &Tensor::vector(vec![1.0, 2.0])
    )
    .is_err());
}

#[test]
fn hvp_examples() {
    let a = Tensor::vector(vec![1.0, 2.0]);
    let quad = move |x: &Var| Ok(x.square().mul(&Var::constant(a.clone()))?.sum().scale(0.5));
    let hv = hvp(quad, &Tensor::vector(vec![0.3, -0.7]), &Tensor::vector(vec![1.0, 1.0])).unwrap();
    assert_eq!(hv.data(), &[1.0, 2.0]);

    let w = Tensor::vector(vec![3.0, -1.0]);
    let lin = move |x: &Var| Ok(x.mul(&Var::constant(w.clone()))?.sum());
    let hv = hvp(lin, &Tensor::vector(vec![0.3, -0.7]), &Tensor::vector(vec![1.0, 2.0])).unwrap();
    assert_eq!(hv.data(), &[0.0, 0.0]);
}

fn random_mlp(seed: u64, d: usize, h: usize) -> impl Fn(&Var) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w1 = random_tensor(&mut rng, &[d, h], -0.8, 0.8);
    let b1 = random_tensor(&mut rng, &[h], -0.3, 0.3);
    let w2 = random_tensor(&mut rng, &[h, 1], -0.8, 0.8);
    move |x: &Var| {
        let x = x.reshape(&[1, d])?;
        let h = x
            .affine(&Var::constant(w1.clone()), &Var::constant(b1.clone()))?
            .softplus(10.0);
        Ok(h.matmul(&Var::constant(w2.clone()))?.sum())
    }
}

#[test]
fn hvp_of_softplus_mlp_matches_gradient_differences() {
    let f = random_mlp(5, 4, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_tensor(&mut rng, &[4], -1.0, 1.0);
    let v = random_tensor(&mut rng, &[4], -1.0, 1.0);
    let hv = hvp(&f, &x, &v).unwrap();
    let eps = 1e-4;
    let gp = value_and_grad(&f, &x.add(&v.scale(eps)).unwrap()).unwrap().1;
    let gm = value_and_grad(&f, &x.sub(&v.scale(eps)).unwrap()).unwrap().1;
    let fd = gp.sub(&gm).unwrap().scale(0.5 / eps);
    let rel = hv.sub(&fd).unwrap().norm_sq().sqrt() / hv.norm_sq().sqrt();
    assert!(rel < 1e-6, "relative error {rel}");
}

#[test]
fn grad_of_squared_grad_norm_is_twice_hessian_times_grad() {
    // f(x) = Σ sin(x_i)·x_j-coupled analytic test function
    let f = |x: &Var| x.sin().mul(&x.exp().scale(0.3))?.sum().add(&x.sum().square());
    let x0 = Tensor::vector(vec![0.3, -0.5, 1.1]);
    let xv = Var::leaf(x0.clone());
    let y = f(&xv).unwrap();
    let g = grad(&y, &[&xv], true).unwrap().remove(0);
    let gn = g.square().sum();
    let lhs = grad_tensors(&gn, &[&xv]).unwrap().remove(0);
    let g_t = g.value().clone();
    let rhs = hvp(f, &x0, &g_t).unwrap().scale(2.0);
    let rel = lhs.sub(&rhs).unwrap().norm_sq().sqrt() / rhs.norm_sq().sqrt();
    assert!(rel < 1e-12, "relative error {rel}");
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    fn smooth(x: &Var) -> Result<Var> {
        x.sin()
            .mul(&x.softplus(2.0))?
            .sum()
            .add(&x.square().sum().exp().scale(0.1))
    }

    fn other(x: &Var) -> Result<Var> {
        x.cos().square().sum().add(&x.sum().scale(0.7))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn grad_is_linear(
            xs in prop::collection::vec(-1.0f64..1.0, 3),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let x = Tensor::vector(xs);
            let ga = value_and_grad(smooth, &x).unwrap().1;
            let gb = value_and_grad(other, &x).unwrap().1;
            let combo = value_and_grad(
                |x| smooth(x)?.scale(a).add(&other(x)?.scale(b)),
                &x,
            ).unwrap().1;
            let expect = ga.scale(a).add(&gb.scale(b)).unwrap();
            for (p, q) in combo.data().iter().zip(expect.data()) {
                prop_assert!((p - q).abs() <= 1e-12 * (1.0 + q.abs()));
            }
        }

        #[test]
        fn hvp_is_linear_and_symmetric(
            xs in prop::collection::vec(-1.0f64..1.0, 3),
            us in prop::collection::vec(-1.0f64..1.0, 3),
            vs in prop::collection::vec(-1.0f64..1.0, 3),
        ) {
            let x = Tensor::vector(xs);
            let u = Tensor::vector(us);
            let v = Tensor::vector(vs);
            let hu = hvp(smooth, &x, &u).unwrap();
            let hv = hvp(smooth, &x, &v).unwrap();
            prop_assert!((u.dot(&hv).unwrap() - v.dot(&hu).unwrap()).abs() < 1e-8);
            let huv = hvp(smooth, &x, &u.add(&v.scale(2.0)).unwrap()).unwrap();
            let expect = hu.add(&hv.scale(2.0)).unwrap();
            for (p, q) in huv.data().iter().zip(expect.data()) {
                prop_assert!((p - q).abs() <= 1e-10 * (1.0 + q.abs()));
            }
        }
    }
}
