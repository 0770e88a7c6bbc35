//! Finite-difference checks of every differentiable op.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::rng::stream;

pub type Fun = Box<dyn Fn(&Var) -> Result<Var>>;

pub fn eval(f: &dyn Fn(&Var) -> Result<Var>, x: &Tensor) -> f64 {
    no_grad(|| f(&Var::constant(x.clone())).and_then(|v| v.item()).unwrap_or(f64::NAN))
}

/// Central-difference gradient oracle.
pub fn fd_grad(f: &dyn Fn(&Var) -> Result<Var>, x: &Tensor, h: f64) -> Tensor {
    let base = x.to_vec();
    let g = (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] += h;
            let mut m = base.clone();
            m[i] -= h;
            let fp = eval(f, &Tensor::from_parts(x.shape().to_vec(), p));
            let fm = eval(f, &Tensor::from_parts(x.shape().to_vec(), m));
            (fp - fm) / (2.0 * h)
        })
        .collect();
    Tensor::from_parts(x.shape().to_vec(), g)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Contracts an op's output against fixed weights so every output entry matters.
pub fn weighted(out: Var, seed: u64) -> Result<Var> {
    let mut rng = stream(seed);
    let w = random_tensor(&mut rng, out.shape(), -1.0, 1.0);
    Ok(out.mul(&Var::constant(w))?.sum())
}

pub fn op_suite() -> Vec<(&'static str, Vec<usize>, f64, f64, Fun)> {
    let geom = ConvGeom {
        batch: 2,
        in_h: 4,
        in_w: 4,
        in_c: 2,
        kernel: 3,
        stride: 2,
        pad: 1,
    };
    let mut rng = stream(99);
    let wmat = random_tensor(&mut rng, &[3, 2], -1.0, 1.0);
    let wconv = random_tensor(&mut rng, &[18, 3], -0.5, 0.5);
    let bconv = random_tensor(&mut rng, &[3], -0.5, 0.5);
    let other = random_tensor(&mut rng, &[4, 3], 0.5, 1.5);
    let v = |t: &Tensor| Var::constant(t.clone());
    vec![
        (
            "add",
            vec![4, 3],
            -2.0,
            2.0,
            Box::new({
                let o = other.clone();
                move |x: &Var| weighted(x.add(&v(&o))?.mul(x)?, 1)
            }) as Fun,
        ),
        (
            "sub",
            vec![4, 3],
            -2.0,
            2.0,
            Box::new({
                let o = other.clone();
                move |x: &Var| weighted(v(&o).sub(x)?.mul(x)?, 2)
            }),
        ),
        (
            "mul",
            vec![4, 3],
            -2.0,
            2.0,
            Box::new({
                let o = other.clone();
                move |x: &Var| weighted(x.mul(&v(&o))?.mul(x)?, 3)
            }),
        ),
        (
            "neg_scale_shift",
            vec![4, 3],
            -2.0,
            2.0,
            Box::new(|x: &Var| weighted(x.neg().scale(1.7).add_scalar(0.3).mul(x)?, 4)),
        ),
        (
            "recip",
            vec![4, 3],
            0.5,
            2.0,
            Box::new(|x: &Var| weighted(x.recip(), 5)),
        ),
        ("exp", vec![4, 3], -2.0, 2.0, Box::new(|x: &Var| weighted(x.exp(), 6))),
        ("log", vec![4, 3], 0.5, 3.0, Box::new(|x: &Var| weighted(x.log(), 7))),
        ("sin", vec![4, 3], -3.0, 3.0, Box::new(|x: &Var| weighted(x.sin(), 8))),
        ("cos", vec![4, 3], -3.0, 3.0, Box::new(|x: &Var| weighted(x.cos(), 9))),
        (
            "square",
            vec![4, 3],
            -2.0,
            2.0,
            Box::new(|x: &Var| weighted(x.square(), 10)),
        ),
        (
            "softplus",
            vec![4, 3],
            -1.0,
            1.0,
            Box::new(|x: &Var| weighted(x.softplus(10.0), 11)),
        ),
        (
            "sigmoid",
            vec![4, 3],
            -1.0,
            1.0,
            Box::new(|x: &Var| weighted(x.sigmoid(3.0), 12)),
        ),
        // kinks at 0 and τ are avoided by the sampling range
        (
            "relu",
            vec![4, 3],
            0.1,
            2.0,
            Box::new(|x: &Var| weighted(x.relu().square(), 13)),
        ),
        (
            "clamp_max",
            vec![4, 3],
            -2.0,
            0.9,
            Box::new(|x: &Var| weighted(x.clamp_max(1.0).square(), 14)),
        ),
        (
            "matmul",
            vec![4, 3],
            -1.0,
            1.0,
            Box::new({
                let w = wmat.clone();
                move |x: &Var| weighted(x.matmul(&v(&w))?.square(), 15)
            }),
        ),
        (
            "matmul_t",
            vec![4, 3],
            -1.0,
            1.0,
            Box::new(|x: &Var| weighted(x.matmul_t(x, true, false)?, 16)),
        ),
        (
            "sum_mean",
            vec![4, 3],
            -1.0,
            1.0,
            Box::new(|x: &Var| x.sum().square().add(&x.square().mean())),
        ),
        (
            "expand",
            vec![1],
            -1.0,
            1.0,
            Box::new(|x: &Var| weighted(x.expand(&[2, 2])?.square(), 17)),
        ),
        (
            "rows_cols",
            vec![4, 3],
            -1.0,
            1.0,
            Box::new(|x: &Var| {
                let a = x.sum_rows()?.square().broadcast_rows(2)?;
                let b = x.sum_cols()?.square().broadcast_cols(5)?;
                weighted(a, 18)?.add(&weighted(b, 19)?)
            }),
        ),
        (
            "max",
            vec![4, 3],
            -1.0,
            1.0,
            Box::new(|x: &Var| weighted(x.max_cols()?.square(), 20)),
        ),
        (
            "log_sum_exp",
            vec![4, 3],
            -3.0,
            3.0,
            Box::new(|x: &Var| weighted(x.log_sum_exp_rows()?, 21)),
        ),
        (
            "slice_pad",
            vec![4, 3],
            -1.0,
            1.0,
            Box::new(|x: &Var| weighted(x.slice_cols(1, 2)?.square().pad_cols(2, 5)?, 22)),
        ),
        (
            "reshape",
            vec![4, 3],
            -1.0,
            1.0,
            Box::new(|x: &Var| weighted(x.reshape(&[2, 6])?.square(), 23)),
        ),
        (
            "conv2d",
            vec![2, 4, 4, 2],
            -1.0,
            1.0,
            Box::new(move |x: &Var| weighted(x.conv2d(&v(&wconv), &v(&bconv), &geom)?.softplus(2.0), 24)),
        ),
        (
            "col2im",
            vec![8, 18],
            -1.0,
            1.0,
            Box::new(move |x: &Var| weighted(x.col2im(&geom)?.square(), 25)),
        ),
        (
            "affine",
            vec![4, 3],
            -1.0,
            1.0,
            Box::new({
                let w = wmat.clone();
                move |x: &Var| {
                    let b = Var::constant(Tensor::vector(vec![0.2, -0.1]));
                    weighted(x.affine(&v(&w), &b)?.softplus(10.0), 26)
                }
            }),
        ),
    ]
}

/// Largest violation ratio `|autodiff − fd| / max(abs, rel·scale)` per op over `points`
/// random inputs; values ≤ 1 pass.
pub fn check_ops(points: usize, abs: f64, rel: f64) -> Result<Vec<(&'static str, f64)>> {
    let mut out = Vec::new();
    for (name, shape, lo, hi, f) in op_suite() {
        let mut rng = stream(7);
        let mut worst = 0.0_f64;
        for _ in 0..points {
            let x = random_tensor(&mut rng, &shape, lo, hi);
            let (_, g) = value_and_grad(&*f, &x)?;
            let fd = fd_grad(&*f, &x, 1e-5);
            for (a, b) in g.data().iter().zip(fd.data()) {
                let tol = abs.max(rel * a.abs().max(b.abs()));
                worst = worst.max((a - b).abs() / tol);
            }
        }
        out.push((name, worst));
    }
    Ok(out)
}
