//! Reverse-mode automatic differentiation with differentiable backward passes.
//!
//! A [`Var`] is a node in a dynamically recorded graph. Every backward rule is written in
//! terms of `Var` operations, so when [`grad`] runs with `create_graph = true` the adjoints
//! it returns are themselves graph nodes and can be differentiated again. This is what
//! makes input-gradient penalties trainable and Hessian-vector products available.
//!
//! Graphs are single-owner (`Rc`), one per thread of control. The tensors inside are
//! `Arc`-backed and can be shared freely.

pub mod gradcheck;
mod ops;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{ConvGeom, Tensor};

pub(crate) use ops::Op;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Restores the previous grad mode when dropped.
pub struct GradModeGuard {
    prev: bool,
}

impl GradModeGuard {
    pub fn set(enabled: bool) -> Self {
        let prev = GRAD_ENABLED.with(|g| g.replace(enabled));
        GradModeGuard { prev }
    }
}

impl Drop for GradModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

/// Runs `f` without recording any graph.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let _guard = GradModeGuard::set(false);
    f()
}

pub(crate) struct Node {
    id: usize,
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Differentiable handle onto a graph node.
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("value", &self.0.value)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Var {
    fn make(value: Tensor, op: Op) -> Var {
        let requires_grad = grad_enabled() && op.parents().iter().flatten().any(|p| p.0.requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            op,
            requires_grad,
        }))
    }

    /// A leaf that gradients flow to.
    pub fn leaf(value: Tensor) -> Var {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            op: Op::Leaf,
            requires_grad: true,
        }))
    }

    pub fn constant(value: Tensor) -> Var {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            op: Op::Leaf,
            requires_grad: false,
        }))
    }

    pub fn scalar(v: f64) -> Var {
        Var::constant(Tensor::scalar(v))
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    pub fn item(&self) -> Result<f64> {
        self.0.value.item()
    }
}

fn topo_order(output: &Var) -> Vec<Var> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    if !output.requires_grad() {
        return order;
    }
    visited.insert(output.id());
    let mut stack: Vec<(Var, usize)> = vec![(output.clone(), 0)];
    while let Some((v, next)) = stack.last_mut() {
        let parents = v.0.op.parents();
        if *next < parents.len() {
            let p = parents[*next];
            *next += 1;
            if let Some(p) = p {
                if p.requires_grad() && visited.insert(p.id()) {
                    let p = p.clone();
                    stack.push((p, 0));
                }
            }
        } else {
            let (v, _) = stack.pop().expect("non-empty stack");
            order.push(v);
        }
    }
    order
}

/// Gradients of a scalar `output` with respect to each of `wrt`.
///
/// With `create_graph` the returned adjoints are graph nodes (second-order capable);
/// otherwise they are constants. Leaves the output does not depend on get zeros.
pub fn grad(output: &Var, wrt: &[&Var], create_graph: bool) -> Result<Vec<Var>> {
    if output.value().len() != 1 {
        return Err(Error::invalid(format!(
            "grad requires a scalar output, got shape {:?}",
            output.shape()
        )));
    }
    let wanted: HashSet<usize> = wrt.iter().map(|v| v.id()).collect();
    let mut found: HashMap<usize, Var> = HashMap::new();

    let order = topo_order(output);
    let _mode = GradModeGuard::set(create_graph);
    let mut adjoints: HashMap<usize, Var> = HashMap::new();
    adjoints.insert(output.id(), Var::constant(Tensor::ones(output.shape())));

    for node in order.iter().rev() {
        let Some(g) = adjoints.remove(&node.id()) else {
            continue;
        };
        if wanted.contains(&node.id()) {
            found.insert(node.id(), g.clone());
        }
        if matches!(node.0.op, Op::Leaf) {
            continue;
        }
        let parent_grads = ops::vjp(node, &g)?;
        for (parent, pg) in node.0.op.parents().into_iter().zip(parent_grads) {
            let (Some(parent), Some(pg)) = (parent, pg) else {
                continue;
            };
            if !parent.requires_grad() {
                continue;
            }
            let acc = match adjoints.remove(&parent.id()) {
                Some(prev) => prev.add(&pg)?,
                None => pg,
            };
            adjoints.insert(parent.id(), acc);
        }
    }

    Ok(wrt
        .iter()
        .map(|v| {
            found
                .remove(&v.id())
                .unwrap_or_else(|| Var::constant(Tensor::zeros(v.shape())))
        })
        .collect())
}

/// First-order gradients as plain tensors.
pub fn grad_tensors(output: &Var, wrt: &[&Var]) -> Result<Vec<Tensor>> {
    Ok(grad(output, wrt, false)?
        .into_iter()
        .map(|v| v.value().clone())
        .collect())
}

/// Value and gradient of a scalar function at `x`.
pub fn value_and_grad(f: impl Fn(&Var) -> Result<Var>, x: &Tensor) -> Result<(f64, Tensor)> {
    let _mode = GradModeGuard::set(true);
    let xv = Var::leaf(x.clone());
    let y = f(&xv)?;
    let value = y.item()?;
    let g = grad_tensors(&y, &[&xv])?.remove(0);
    Ok((value, g))
}

/// Hessian-vector product `∇²f(x)·v` by differentiating `∇f(x)ᵀv`: two backward passes.
pub fn hvp(f: impl Fn(&Var) -> Result<Var>, x: &Tensor, v: &Tensor) -> Result<Tensor> {
    x.check_same(v, "hvp")?;
    let _mode = GradModeGuard::set(true);
    let xv = Var::leaf(x.clone());
    let y = f(&xv)?;
    let g = grad(&y, &[&xv], true)?.remove(0);
    let gv = g.mul(&Var::constant(v.clone()))?.sum();
    Ok(grad_tensors(&gv, &[&xv])?.remove(0))
}

impl Var {
    pub fn add(&self, o: &Var) -> Result<Var> {
        let v = self.value().add(o.value())?;
        Ok(Var::make(v, Op::Add(self.clone(), o.clone())))
    }

    pub fn sub(&self, o: &Var) -> Result<Var> {
        let v = self.value().sub(o.value())?;
        Ok(Var::make(v, Op::Sub(self.clone(), o.clone())))
    }

    pub fn mul(&self, o: &Var) -> Result<Var> {
        let v = self.value().mul(o.value())?;
        Ok(Var::make(v, Op::Mul(self.clone(), o.clone())))
    }

    pub fn neg(&self) -> Var {
        Var::make(self.value().scale(-1.0), Op::Neg(self.clone()))
    }

    pub fn scale(&self, c: f64) -> Var {
        Var::make(self.value().scale(c), Op::Scale(self.clone(), c))
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        Var::make(self.value().map(|v| v + c), Op::AddScalar(self.clone()))
    }

    pub fn square(&self) -> Var {
        self.mul(self).expect("same shape")
    }

    pub fn recip(&self) -> Var {
        Var::make(self.value().map(|v| 1.0 / v), Op::Recip(self.clone()))
    }

    pub fn exp(&self) -> Var {
        Var::make(self.value().map(f64::exp), Op::Exp(self.clone()))
    }

    pub fn log(&self) -> Var {
        Var::make(self.value().map(f64::ln), Op::Log(self.clone()))
    }

    pub fn sin(&self) -> Var {
        Var::make(self.value().map(f64::sin), Op::Sin(self.clone()))
    }

    pub fn cos(&self) -> Var {
        Var::make(self.value().map(f64::cos), Op::Cos(self.clone()))
    }

    /// `(1/β)·log(1 + exp(βx))`.
    pub fn softplus(&self, beta: f64) -> Var {
        Var::make(
            self.value().map(|x| ops::softplus(beta, x)),
            Op::Softplus(self.clone(), beta),
        )
    }

    /// `1 / (1 + exp(-βx))`, the derivative of [`Var::softplus`].
    pub fn sigmoid(&self, beta: f64) -> Var {
        Var::make(
            self.value().map(|x| ops::sigmoid(beta * x)),
            Op::Sigmoid(self.clone(), beta),
        )
    }

    pub fn relu(&self) -> Var {
        Var::make(self.value().map(|x| x.max(0.0)), Op::Relu(self.clone()))
    }

    /// `min(x, τ)`; zero gradient where `x ≥ τ`.
    pub fn clamp_max(&self, tau: f64) -> Var {
        Var::make(self.value().map(|x| x.min(tau)), Op::ClampMax(self.clone(), tau))
    }

    pub fn matmul(&self, o: &Var) -> Result<Var> {
        self.matmul_t(o, false, false)
    }

    /// `op(self)·op(o)` with optional transposes.
    pub fn matmul_t(&self, o: &Var, ta: bool, tb: bool) -> Result<Var> {
        let v = crate::tensor::matmul_t(self.value(), o.value(), ta, tb)?;
        Ok(Var::make(
            v,
            Op::MatMul {
                a: self.clone(),
                b: o.clone(),
                ta,
                tb,
            },
        ))
    }

    /// Sum of all entries (scalar).
    pub fn sum(&self) -> Var {
        Var::make(Tensor::scalar(self.value().sum()), Op::SumAll(self.clone()))
    }

    pub fn mean(&self) -> Var {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Broadcasts a one-element tensor to `shape`.
    pub fn expand(&self, shape: &[usize]) -> Result<Var> {
        let v = self.value().item()?;
        Ok(Var::make(Tensor::full(shape, v), Op::Expand(self.clone())))
    }

    /// `[rows, n] → [n]`.
    pub fn sum_rows(&self) -> Result<Var> {
        let (r, c) = self.dims2("sum_rows")?;
        let src = self.value().data();
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, s) in out.iter_mut().zip(&src[i * c..(i + 1) * c]) {
                *o += s;
            }
        }
        Ok(Var::make(Tensor::vector(out), Op::SumRows(self.clone())))
    }

    /// `[n] → [rows, n]`.
    pub fn broadcast_rows(&self, rows: usize) -> Result<Var> {
        let n = self.dims1("broadcast_rows")?;
        let src = self.value().data();
        let mut out = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            out.extend_from_slice(src);
        }
        Ok(Var::make(
            Tensor::from_parts(vec![rows, n], out),
            Op::BroadcastRows(self.clone()),
        ))
    }

    /// `[rows, n] → [rows]`.
    pub fn sum_cols(&self) -> Result<Var> {
        let (r, c) = self.dims2("sum_cols")?;
        let src = self.value().data();
        let out = (0..r).map(|i| src[i * c..(i + 1) * c].iter().sum()).collect();
        Ok(Var::make(Tensor::vector(out), Op::SumCols(self.clone())))
    }

    /// `[rows] → [rows, n]`.
    pub fn broadcast_cols(&self, n: usize) -> Result<Var> {
        let r = self.dims1("broadcast_cols")?;
        let src = self.value().data();
        let mut out = Vec::with_capacity(r * n);
        for &v in src {
            out.extend(std::iter::repeat_n(v, n));
        }
        Ok(Var::make(
            Tensor::from_parts(vec![r, n], out),
            Op::BroadcastCols(self.clone()),
        ))
    }

    /// Row-wise maximum `[rows, n] → [rows]`; the gradient routes to the first maximiser.
    pub fn max_cols(&self) -> Result<Var> {
        let (r, c) = self.dims2("max_cols")?;
        let src = self.value().data();
        let out = (0..r)
            .map(|i| {
                src[i * c..(i + 1) * c]
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        Ok(Var::make(Tensor::vector(out), Op::MaxCols(self.clone())))
    }

    /// Columns `[start, start+len)` of a `[rows, n]` tensor.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2("slice_cols")?;
        if len == 0 || start + len > c {
            return Err(Error::invalid(format!(
                "slice_cols [{start}, {}) out of range for {c} columns",
                start + len
            )));
        }
        let src = self.value().data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        Ok(Var::make(
            Tensor::from_parts(vec![r, len], out),
            Op::SliceCols(self.clone(), start),
        ))
    }

    /// Embeds `[rows, len]` into zero-filled `[rows, total]` at column `start`.
    pub fn pad_cols(&self, start: usize, total: usize) -> Result<Var> {
        let (r, len) = self.dims2("pad_cols")?;
        if start + len > total {
            return Err(Error::invalid("pad_cols target narrower than input"));
        }
        let src = self.value().data();
        let mut out = vec![0.0; r * total];
        for i in 0..r {
            out[i * total + start..i * total + start + len].copy_from_slice(&src[i * len..(i + 1) * len]);
        }
        Ok(Var::make(
            Tensor::from_parts(vec![r, total], out),
            Op::PadCols(self.clone(), start),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let v = self.value().reshape(shape)?;
        Ok(Var::make(v, Op::Reshape(self.clone())))
    }

    pub fn im2col(&self, g: &ConvGeom) -> Result<Var> {
        let v = crate::tensor::im2col(self.value(), g)?;
        Ok(Var::make(v, Op::Im2Col(self.clone(), *g)))
    }

    pub fn col2im(&self, g: &ConvGeom) -> Result<Var> {
        let v = crate::tensor::col2im(self.value(), g)?;
        Ok(Var::make(v, Op::Col2Im(self.clone(), *g)))
    }

    /// Stabilised row-wise log-sum-exp `[rows, n] → [rows]`.
    pub fn log_sum_exp_rows(&self) -> Result<Var> {
        let (_, c) = self.dims2("log_sum_exp")?;
        let m = self.max_cols()?.detach();
        let shifted = self.sub(&m.broadcast_cols(c)?)?;
        shifted.exp().sum_cols()?.log().add(&m)
    }

    /// `x·W + b` for `x: [rows, in]`, `W: [in, out]`, `b: [out]`.
    pub fn affine(&self, w: &Var, b: &Var) -> Result<Var> {
        let y = self.matmul(w)?;
        y.add(&b.broadcast_rows(y.shape()[0])?)
    }

    /// 2-D convolution on NHWC input; `w: [k·k·in_c, out_c]`, `b: [out_c]`.
    /// Output is NHWC `[batch, out_h, out_w, out_c]`.
    pub fn conv2d(&self, w: &Var, b: &Var, g: &ConvGeom) -> Result<Var> {
        let out_c = w.shape().get(1).copied().unwrap_or(0);
        if w.shape() != [g.patch_len(), out_c] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: w.shape().to_vec(),
                rhs: vec![g.patch_len(), out_c],
            });
        }
        let cols = self.im2col(g)?;
        let y = cols.affine(w, b)?;
        y.reshape(&[g.batch, g.out_h(), g.out_w(), out_c])
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::ShapeMismatch {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            }),
        }
    }

    fn dims1(&self, op: &'static str) -> Result<usize> {
        match self.shape() {
            [n] => Ok(*n),
            s => Err(Error::ShapeMismatch {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            }),
        }
    }
}

#[cfg(test)]
mod tests;
