use super::Var;
use crate::error::Result;
use crate::tensor::{ConvGeom, Tensor};

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Recip(Var),
    Exp(Var),
    Log(Var),
    Sin(Var),
    Cos(Var),
    Softplus(Var, f64),
    Sigmoid(Var, f64),
    Relu(Var),
    ClampMax(Var, f64),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    SumAll(Var),
    Expand(Var),
    SumRows(Var),
    BroadcastRows(Var),
    SumCols(Var),
    BroadcastCols(Var),
    MaxCols(Var),
    SliceCols(Var, usize),
    PadCols(Var, usize),
    Reshape(Var),
    Im2Col(Var, ConvGeom),
    Col2Im(Var, ConvGeom),
}

impl Op {
    pub(crate) fn parents(&self) -> [Option<&Var>; 2] {
        use Op::*;
        match self {
            Leaf => [None, None],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul { a, b, .. } => [Some(a), Some(b)],
            Neg(a)
            | Scale(a, _)
            | AddScalar(a)
            | Recip(a)
            | Exp(a)
            | Log(a)
            | Sin(a)
            | Cos(a)
            | Softplus(a, _)
            | Sigmoid(a, _)
            | Relu(a)
            | ClampMax(a, _)
            | SumAll(a)
            | Expand(a)
            | SumRows(a)
            | BroadcastRows(a)
            | SumCols(a)
            | BroadcastCols(a)
            | MaxCols(a)
            | SliceCols(a, _)
            | PadCols(a, _)
            | Reshape(a)
            | Im2Col(a, _)
            | Col2Im(a, _) => [Some(a), None],
        }
    }
}

pub(crate) fn softplus(beta: f64, x: f64) -> f64 {
    let z = beta * x;
    // max(z, 0) + log1p(exp(-|z|)) never overflows
    (z.max(0.0) + (-z.abs()).exp().ln_1p()) / beta
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn mask(t: &Tensor, keep: impl Fn(f64) -> bool) -> Var {
    Var::constant(t.map(|v| if keep(v) { 1.0 } else { 0.0 }))
}

/// Adjoints of `node`'s parents given the adjoint `g` of its output. Expressed with
/// `Var` ops so the result is differentiable when grad mode is on.
pub(crate) fn vjp(node: &Var, g: &Var) -> Result<[Option<Var>; 2]> {
    use Op::*;
    let one = |v: Var| [Some(v), None];
    Ok(match &node.0.op {
        Leaf => [None, None],
        Add(_, _) => [Some(g.clone()), Some(g.clone())],
        Sub(_, _) => [Some(g.clone()), Some(g.neg())],
        Mul(a, b) => [
            a.requires_grad().then(|| g.mul(b)).transpose()?,
            b.requires_grad().then(|| g.mul(a)).transpose()?,
        ],
        Neg(_) => one(g.neg()),
        Scale(_, c) => one(g.scale(*c)),
        AddScalar(_) => one(g.clone()),
        Recip(_) => one(g.mul(node)?.mul(node)?.neg()),
        Exp(_) => one(g.mul(node)?),
        Log(a) => one(g.mul(&a.recip())?),
        Sin(a) => one(g.mul(&a.cos())?),
        Cos(a) => one(g.mul(&a.sin())?.neg()),
        Softplus(a, beta) => one(g.mul(&a.sigmoid(*beta))?),
        Sigmoid(_, beta) => {
            // β·s·(1 − s)
            let ds = node.mul(&node.neg().add_scalar(1.0))?.scale(*beta);
            one(g.mul(&ds)?)
        }
        Relu(a) => one(g.mul(&mask(a.value(), |v| v > 0.0))?),
        ClampMax(a, tau) => {
            let tau = *tau;
            one(g.mul(&mask(a.value(), |v| v < tau))?)
        }
        MatMul { a, b, ta, tb } => {
            let (ta, tb) = (*ta, *tb);
            let ga = if a.requires_grad() {
                Some(if ta {
                    b.matmul_t(g, tb, true)?
                } else {
                    g.matmul_t(b, false, !tb)?
                })
            } else {
                None
            };
            let gb = if b.requires_grad() {
                Some(if tb {
                    g.matmul_t(a, true, ta)?
                } else {
                    a.matmul_t(g, !ta, false)?
                })
            } else {
                None
            };
            [ga, gb]
        }
        SumAll(a) => one(g.expand(a.shape())?),
        Expand(a) => one(g.sum().reshape(a.shape())?),
        SumRows(a) => one(g.broadcast_rows(a.shape()[0])?),
        BroadcastRows(_) => one(g.sum_rows()?),
        SumCols(a) => one(g.broadcast_cols(a.shape()[1])?),
        BroadcastCols(_) => one(g.sum_cols()?),
        MaxCols(a) => {
            let (r, c) = (a.shape()[0], a.shape()[1]);
            let src = a.value().data();
            let mut m = vec![0.0; r * c];
            for i in 0..r {
                let row = &src[i * c..(i + 1) * c];
                let mut best = 0;
                for j in 1..c {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                m[i * c + best] = 1.0;
            }
            let m = Var::constant(Tensor::from_parts(vec![r, c], m));
            one(g.broadcast_cols(c)?.mul(&m)?)
        }
        SliceCols(a, start) => one(g.pad_cols(*start, a.shape()[1])?),
        PadCols(a, start) => one(g.slice_cols(*start, a.shape()[1])?),
        Reshape(a) => one(g.reshape(a.shape())?),
        Im2Col(_, geom) => one(g.col2im(geom)?),
        Col2Im(_, geom) => one(g.im2col(geom)?),
    })
}
