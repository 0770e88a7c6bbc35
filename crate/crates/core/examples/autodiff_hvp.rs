//! Gradients, double backward and Hessian-vector products on a small function.
//!
//! Run: `cargo run --release --example autodiff_hvp`

use scoregrad::autodiff::value_and_grad;
use scoregrad::{grad, hvp, Result, Tensor, Var};

/// f(x) = Σ sin(x_i)·x_i² + exp(x_0·x_1)
fn f(x: &Var) -> Result<Var> {
    let n = x.shape()[0];
    let x = x.reshape(&[1, n])?;
    let a = x.slice_cols(0, 1)?;
    let b = x.slice_cols(1, 1)?;
    x.sin().mul(&x.square())?.sum().add(&a.mul(&b)?.exp().sum())
}

fn main() -> Result<()> {
    let x = Tensor::vector(vec![0.3, -1.2, 0.8]);
    let (value, g) = value_and_grad(f, &x)?;
    println!("f(x)  = {value:.6}");
    println!("∇f(x) = {:?}", g.data());

    // Hessian column by column
    for i in 0..3 {
        let mut e = vec![0.0; 3];
        e[i] = 1.0;
        let col = hvp(f, &x, &Tensor::vector(e))?;
        println!("H e{i}  = {:?}", col.data());
    }

    // the same trace through an explicit double backward
    let xv = Var::leaf(x.clone());
    let gv = grad(&f(&xv)?, &[&xv], true)?.remove(0);
    let mut trace = 0.0;
    for i in 0..3 {
        let gi = gv.reshape(&[1, 3])?.slice_cols(i, 1)?.sum();
        trace += grad(&gi, &[&xv], false)?[0].value().data()[i];
    }
    println!("tr H  = {trace:.6}");
    Ok(())
}
