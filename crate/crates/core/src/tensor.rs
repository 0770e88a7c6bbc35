//! Dense row-major `f64` tensors and the raw kernels the autodiff layer is built on.
//!
//! Tensors are immutable once built; the storage sits behind an `Arc` so clones are
//! cheap and snapshots can be shared read-only across threads.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?}[{} values]", self.shape, self.data.len())
        }
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::invalid(format!("zero extent in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(Self::from_parts(shape.to_vec(), data))
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_parts(Vec::new(), vec![v])
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::from_parts(vec![n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(&[rows, cols], data)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![v; n])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    /// One-hot rows: `[labels.len(), classes]`.
    pub fn one_hot(labels: &[usize], classes: usize) -> Result<Self> {
        let mut data = vec![0.0; labels.len() * classes];
        for (r, &l) in labels.iter().enumerate() {
            if l >= classes {
                return Err(Error::invalid(format!("label {l} out of range for {classes} classes")));
            }
            data[r * classes + l] = 1.0;
        }
        Tensor::new(&[labels.len(), classes], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::invalid(format!("item() on tensor of shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Elements per leading-axis row.
    pub fn row_len(&self) -> usize {
        if self.shape.is_empty() {
            1
        } else {
            self.shape[1..].iter().product()
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[r * w..(r + 1) * w]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    /// Selects leading-axis rows by index.
    pub fn gather_rows(&self, idx: &[usize]) -> Self {
        let w = self.row_len();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            shape.push(idx.len());
        } else {
            shape[0] = idx.len();
        }
        Self::from_parts(shape, data)
    }

    /// Stacks equally shaped rows into `[n, rest..]`.
    pub fn stack_rows(rows: &[&[f64]], row_shape: &[usize]) -> Result<Self> {
        let w: usize = row_shape.iter().product();
        let mut data = Vec::with_capacity(rows.len() * w);
        for r in rows {
            if r.len() != w {
                return Err(Error::ShapeMismatch {
                    op: "stack_rows",
                    lhs: row_shape.to_vec(),
                    rhs: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        let mut shape = vec![rows.len()];
        shape.extend_from_slice(row_shape);
        Tensor::new(&shape, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same(other, op)?;
        Ok(Self::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub(crate) fn check_same(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.check_same(other, "dot")?;
        Ok(self.data.iter().zip(other.data.iter()).map(|(a, b)| a * b).sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Per-row argmax over a `[rows, cols]` tensor; ties resolve to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        let w = self.row_len();
        (0..self.rows())
            .map(|r| {
                let row = self.row(r);
                let mut best = 0;
                for j in 1..w {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

fn as_matrix(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::ShapeMismatch {
            op,
            lhs: s.to_vec(),
            rhs: vec![],
        }),
    }
}

/// `op(a) · op(b)` where `op` optionally transposes. Both operands must be 2-D.
pub(crate) fn matmul_t(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Result<Tensor> {
    let (ar, ac) = as_matrix(a, "matmul")?;
    let (br, bc) = as_matrix(b, "matmul")?;
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (rsa, csa) = if ta { (1, ac as isize) } else { (ac as isize, 1) };
    let (rsb, csb) = if tb { (1, bc as isize) } else { (bc as isize, 1) };
    let mut out = vec![0.0; m * n];
    // SAFETY: strides describe in-bounds views of the two operand buffers and the
    // freshly allocated m×n output.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data().as_ptr(),
            rsa,
            csa,
            b.data().as_ptr(),
            rsb,
            csb,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Geometry of a 2-D convolution over NHWC input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_c
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [self.batch, self.in_h, self.in_w, self.in_c]
    }

    pub fn cols_shape(&self) -> [usize; 2] {
        [self.batch * self.out_h() * self.out_w(), self.patch_len()]
    }

    /// Calls `f(col_index, input_index)` for every in-bounds patch element.
    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let (oh, ow) = (self.out_h(), self.out_w());
        let plen = self.patch_len();
        for b in 0..self.batch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = (b * oh + oy) * ow + ox;
                    for ky in 0..self.kernel {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.in_w as isize {
                                continue;
                            }
                            let col = row * plen + (ky * self.kernel + kx) * self.in_c;
                            let inp = ((b * self.in_h + iy as usize) * self.in_w + ix as usize) * self.in_c;
                            for c in 0..self.in_c {
                                f(col + c, inp + c);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn im2col(x: &Tensor, g: &ConvGeom) -> Result<Tensor> {
    if x.shape() != g.input_shape() {
        return Err(Error::ShapeMismatch {
            op: "im2col",
            lhs: x.shape().to_vec(),
            rhs: g.input_shape().to_vec(),
        });
    }
    let [r, c] = g.cols_shape();
    let mut out = vec![0.0; r * c];
    let src = x.data();
    g.for_each(|col, inp| out[col] = src[inp]);
    Ok(Tensor::from_parts(vec![r, c], out))
}

pub(crate) fn col2im(cols: &Tensor, g: &ConvGeom) -> Result<Tensor> {
    if cols.shape() != g.cols_shape() {
        return Err(Error::ShapeMismatch {
            op: "col2im",
            lhs: cols.shape().to_vec(),
            rhs: g.cols_shape().to_vec(),
        });
    }
    let shape = g.input_shape();
    let mut out = vec![0.0; shape.iter().product()];
    let src = cols.data();
    g.for_each(|col, inp| out[inp] += src[col]);
    Ok(Tensor::from_parts(shape.to_vec(), out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_extent_product() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(&[2, 3], vec![0.0; 5]),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(Tensor::new(&[0, 3], vec![]).is_err());
    }

    #[test]
    fn matmul_with_transposes() {
        let a = Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::matrix(3, 2, vec![7., 8., 9., 10., 11., 12.]).unwrap();
        let c = matmul_t(&a, &b, false, false).unwrap();
        assert_eq!(c.data(), &[58., 64., 139., 154.]);
        // aᵀᵀ bᵀᵀ through the transpose flags
        let at = Tensor::matrix(3, 2, vec![1., 4., 2., 5., 3., 6.]).unwrap();
        let bt = Tensor::matrix(2, 3, vec![7., 9., 11., 8., 10., 12.]).unwrap();
        let c2 = matmul_t(&at, &bt, true, true).unwrap();
        assert_eq!(c2.data(), c.data());
        assert!(matmul_t(&a, &a, false, false).is_err());
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        let g = ConvGeom {
            batch: 2,
            in_h: 5,
            in_w: 4,
            in_c: 2,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        let n: usize = g.input_shape().iter().product();
        let x = Tensor::new(&g.input_shape(), (0..n).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let [r, c] = g.cols_shape();
        let y = Tensor::new(&[r, c], (0..r * c).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap();
        let lhs = im2col(&x, &g).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&col2im(&y, &g).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn argmax_ties_pick_first() {
        let t = Tensor::matrix(2, 3, vec![0., 0., 0., 1., 3., 3.]).unwrap();
        assert_eq!(t.argmax_rows(), vec![0, 1]);
    }
}
