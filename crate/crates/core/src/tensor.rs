//! Dense row-major `f64` tensors and the handful of batched linear-algebra
//! kernels the rest of the crate is built on.
//!
//! Matrix routines operate on the last two axes; any leading axes are batch
//! axes. Two operands may either share the same batch shape, or one of them
//! may be a plain matrix that is broadcast over the other's batch.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                op: "new",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a matrix from row slices. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            shape: vec![r, c],
            data,
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let n: usize = shape.iter().product();
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Self {
            shape: shape.to_vec(),
            data,
        }
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(
            self.data.len(),
            1,
            "item() on tensor of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| {
            debug_assert!(i < n);
            acc * n + i
        })
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let o = self.offset(idx);
        self.data[o] = value;
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Returns matrix slice `b` of a batched tensor as a standalone matrix.
    pub fn batch_matrix(&self, b: usize) -> Tensor {
        let (_, r, c) = mat_dims(self).expect("rank >= 2");
        let sz = r * c;
        Tensor {
            shape: vec![r, c],
            data: self.data[b * sz..(b + 1) * sz].to_vec(),
        }
    }
}

/// `(batch, rows, cols)` of a rank ≥ 2 tensor.
pub(crate) fn mat_dims(t: &Tensor) -> Result<(usize, usize, usize)> {
    let s = t.shape();
    if s.len() < 2 {
        return Err(Error::ShapeMismatch {
            op: "matrix",
            lhs: s.to_vec(),
            rhs: vec![],
        });
    }
    let r = s[s.len() - 2];
    let c = s[s.len() - 1];
    Ok((s[..s.len() - 2].iter().product(), r, c))
}

fn batch_shape(t: &Tensor) -> &[usize] {
    &t.shape()[..t.rank() - 2]
}

/// Resolves the output batch shape for two batched operands.
fn joint_batch(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    let (ba, bb) = (batch_shape(a), batch_shape(b));
    if ba == bb || bb.is_empty() {
        Ok(ba.to_vec())
    } else if ba.is_empty() {
        Ok(bb.to_vec())
    } else {
        Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

// ---------------------------------------------------------------------------
// Broadcasting helpers for elementwise ops.

pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() {
            1
        } else {
            a[i - (rank - a.len())]
        };
        let db = if i < rank - b.len() {
            1
        } else {
            b[i - (rank - b.len())]
        };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(Error::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        };
    }
    Ok(out)
}

/// Strides of `shape` as seen from a broadcast `out` shape (0 along broadcast axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let pad = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + pad] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visits every output offset together with the matching input offsets.
fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n: usize = out.iter().product();
    if n == 0 {
        return;
    }
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for o in 0..n {
        f(o, oa, ob);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            oa -= sa[ax] * out[ax];
            ob -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

pub(crate) fn broadcast_binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor {
            shape: a.shape.clone(),
            data,
        });
    }
    if b.data.len() == 1 && b.rank() <= a.rank() {
        let y = b.data[0];
        return Ok(Tensor {
            shape: a.shape.clone(),
            data: a.data.iter().map(|&x| f(x, y)).collect(),
        });
    }
    let out = broadcast_shape(op, &a.shape, &b.shape)?;
    let sa = broadcast_strides(&a.shape, &out);
    let sb = broadcast_strides(&b.shape, &out);
    let mut data = vec![0.0; out.iter().product()];
    for_each_broadcast(&out, &sa, &sb, |o, ia, ib| {
        data[o] = f(a.data[ia], b.data[ib])
    });
    Ok(Tensor { shape: out, data })
}

/// Sums `grad` (shaped like a broadcast result) back down to `target` shape.
pub(crate) fn reduce_to_shape(grad: &Tensor, target: &[usize]) -> Tensor {
    if grad.shape == target {
        return grad.clone();
    }
    let mut out = Tensor::zeros(target);
    let st = broadcast_strides(target, &grad.shape);
    let zero = vec![0; grad.rank()];
    for_each_broadcast(&grad.shape, &st, &zero, |o, it, _| {
        out.data[it] += grad.data[o]
    });
    out
}

// ---------------------------------------------------------------------------
// Matrix kernels.

/// Row-major matrix operand, optionally read transposed.
#[derive(Clone, Copy)]
struct Operand<'a> {
    data: &'a [f64],
    rs: usize,
    cs: usize,
}

impl<'a> Operand<'a> {
    fn plain(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            rs: cols,
            cs: 1,
        }
    }

    fn new(data: &'a [f64], cols: usize, transposed: bool) -> Self {
        if transposed {
            Self {
                data,
                rs: 1,
                cs: cols,
            }
        } else {
            Self::plain(data, cols)
        }
    }
}

/// `c += op(a) · op(b)` with `op(a)` of size `m×k` and `op(b)` of size `k×n`;
/// `c` is row-major `m×n`.
fn gemm_acc_op(a: Operand, b: Operand, c: &mut [f64], m: usize, k: usize, n: usize) {
    if m * k * n >= BLOCKED_GEMM_MIN {
        // SAFETY: the strides address m×k, k×n and m×n matrices inside the slices.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data.as_ptr(),
                a.rs as isize,
                a.cs as isize,
                b.data.as_ptr(),
                b.rs as isize,
                b.cs as isize,
                1.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        return;
    }
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cv) in crow.iter_mut().enumerate() {
            let (mut ia, mut ib) = (i * a.rs, j * b.cs);
            let mut acc = 0.0;
            for _ in 0..k {
                acc += a.data[ia] * b.data[ib];
                ia += a.cs;
                ib += b.rs;
            }
            *cv += acc;
        }
    }
}

/// `c += a · b` for row-major `m×k` and `k×n` slices.
#[inline]
fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_acc_op(Operand::plain(a, k), Operand::plain(b, n), c, m, k, n);
}

/// Products at least this large (in multiply-adds) use the blocked kernel.
const BLOCKED_GEMM_MIN: usize = 32 * 32 * 32;

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    matmul_op(a, false, b, false, false)
}

/// Batched `op(a) · op(b)` where `op` optionally swaps the last two axes.
///
/// With `reduce` set the batch products are summed into a single matrix,
/// which is the gradient of an unbatched operand broadcast over a batch.
pub(crate) fn matmul_op(
    a: &Tensor,
    ta: bool,
    b: &Tensor,
    tb: bool,
    reduce: bool,
) -> Result<Tensor> {
    let (_, ar, ac) = mat_dims(a)?;
    let (_, br, bc) = mat_dims(b)?;
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let batch = joint_batch("matmul", a, b)?;
    let nb: usize = batch.iter().product();
    let (a_bcast, b_bcast) = (batch_shape(a).is_empty(), batch_shape(b).is_empty());
    let mut shape = if reduce { Vec::new() } else { batch };
    shape.extend([m, n]);
    let mut data = vec![0.0; if reduce { m * n } else { nb * m * n }];
    for bi in 0..nb {
        let ia = if a_bcast { 0 } else { bi };
        let ib = if b_bcast { 0 } else { bi };
        let oc = if reduce { 0 } else { bi };
        gemm_acc_op(
            Operand::new(&a.data[ia * ar * ac..(ia + 1) * ar * ac], ac, ta),
            Operand::new(&b.data[ib * br * bc..(ib + 1) * br * bc], bc, tb),
            &mut data[oc * m * n..(oc + 1) * m * n],
            m,
            k,
            n,
        );
    }
    Tensor::new(shape, data)
}

pub fn transpose_last2(a: &Tensor) -> Result<Tensor> {
    let (nb, r, c) = mat_dims(a)?;
    let mut shape = a.shape().to_vec();
    let rank = shape.len();
    shape.swap(rank - 2, rank - 1);
    let mut data = vec![0.0; a.len()];
    for b in 0..nb {
        let src = &a.data[b * r * c..(b + 1) * r * c];
        let dst = &mut data[b * r * c..(b + 1) * r * c];
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    Tensor::new(shape, data)
}

/// Cholesky factor of one row-major `n×n` block; reads the symmetrized input.
fn cholesky_block(a: &[f64], n: usize, jitter: f64, out: &mut [f64]) -> Result<()> {
    out.iter_mut().for_each(|x| *x = 0.0);
    for j in 0..n {
        let mut d = a[j * n + j] + jitter;
        for p in 0..j {
            d -= out[j * n + p] * out[j * n + p];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let ljj = d.sqrt();
        out[j * n + j] = ljj;
        for i in j + 1..n {
            let mut s = 0.5 * (a[i * n + j] + a[j * n + i]);
            for p in 0..j {
                s -= out[i * n + p] * out[j * n + p];
            }
            out[i * n + j] = s / ljj;
        }
    }
    Ok(())
}

/// Lower Cholesky factor `L` with `L·Lᵀ = sym(A) + jitter·I` for each batch slice,
/// where `sym(A) = (A + Aᵀ)/2`.
pub fn cholesky(a: &Tensor, jitter: f64) -> Result<Tensor> {
    let (nb, n, c) = mat_dims(a)?;
    if n != c {
        return Err(Error::ShapeMismatch {
            op: "cholesky",
            lhs: a.shape().to_vec(),
            rhs: vec![n, n],
        });
    }
    let mut out = Tensor::zeros(a.shape());
    for b in 0..nb {
        cholesky_block(
            &a.data[b * n * n..(b + 1) * n * n],
            n,
            jitter,
            &mut out.data[b * n * n..(b + 1) * n * n],
        )?;
    }
    Ok(out)
}

/// Default jitter schedule for kernel matrices: start at `jitter`, double up to
/// `retries` times before giving up.
pub fn cholesky_with_retries(a: &Tensor, jitter: f64, retries: usize) -> Result<(Tensor, f64)> {
    let mut j = jitter;
    let mut last = None;
    for _ in 0..=retries {
        match cholesky(a, j) {
            Ok(l) => return Ok((l, j)),
            Err(e) => last = Some(e),
        }
        j *= 2.0;
    }
    Err(last.expect("at least one attempt"))
}

pub const DEFAULT_JITTER: f64 = 1e-6;
pub const JITTER_RETRIES: usize = 3;

/// Solves `L X = B` (or `Lᵀ X = B` when `transpose`) with `L` lower triangular.
/// Only the lower triangle of `L` is read.
pub fn tri_solve(l: &Tensor, b: &Tensor, transpose: bool) -> Result<Tensor> {
    let (_, n, n2) = mat_dims(l)?;
    let (_, rb, m) = mat_dims(b)?;
    if n != n2 || rb != n {
        return Err(Error::ShapeMismatch {
            op: "triangular_solve",
            lhs: l.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let batch = joint_batch("triangular_solve", l, b)?;
    let nb = batch.iter().product::<usize>();
    let mut shape = batch;
    shape.extend([n, m]);
    let mut x = vec![0.0; nb * n * m];
    let l_bcast = batch_shape(l).is_empty();
    let b_bcast = batch_shape(b).is_empty();
    for bi in 0..nb {
        let lb = if l_bcast { 0 } else { bi };
        let bb = if b_bcast { 0 } else { bi };
        let lm = &l.data[lb * n * n..(lb + 1) * n * n];
        let xs = &mut x[bi * n * m..(bi + 1) * n * m];
        xs.copy_from_slice(&b.data[bb * n * m..(bb + 1) * n * m]);
        if !transpose {
            for i in 0..n {
                for p in 0..i {
                    let lip = lm[i * n + p];
                    if lip != 0.0 {
                        let (head, tail) = xs.split_at_mut(i * m);
                        let src = &head[p * m..(p + 1) * m];
                        for (xv, &sv) in tail[..m].iter_mut().zip(src) {
                            *xv -= lip * sv;
                        }
                    }
                }
                let d = lm[i * n + i];
                xs[i * m..(i + 1) * m].iter_mut().for_each(|v| *v /= d);
            }
        } else {
            for i in (0..n).rev() {
                for p in i + 1..n {
                    let lpi = lm[p * n + i];
                    if lpi != 0.0 {
                        let (head, tail) = xs.split_at_mut(p * m);
                        let dst = &mut head[i * m..(i + 1) * m];
                        for (xv, &sv) in dst.iter_mut().zip(&tail[..m]) {
                            *xv -= lpi * sv;
                        }
                    }
                }
                let d = lm[i * n + i];
                xs[i * m..(i + 1) * m].iter_mut().for_each(|v| *v /= d);
            }
        }
    }
    Tensor::new(shape, x)
}

/// Zeroes the strictly upper triangle of every batch slice.
pub fn tril(a: &Tensor) -> Result<Tensor> {
    let (nb, r, c) = mat_dims(a)?;
    let mut out = a.clone();
    for b in 0..nb {
        for i in 0..r {
            for j in i + 1..c {
                out.data[b * r * c + i * c + j] = 0.0;
            }
        }
    }
    Ok(out)
}

/// Small dense helpers used by the sampling and spectral code on `N×N` slices.
pub mod small {
    /// `c = a · b` for row-major square matrices of order `n`.
    pub fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
        let mut c = vec![0.0; n * n];
        super::gemm_acc(a, b, &mut c, n, n, n);
        c
    }

    /// `a · aᵀ` for a row-major square matrix of order `n`.
    pub fn gram(a: &[f64], n: usize) -> Vec<f64> {
        let mut c = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let s: f64 = (0..n).map(|k| a[i * n + k] * a[j * n + k]).sum();
                c[i * n + j] = s;
                c[j * n + i] = s;
            }
        }
        c
    }

    pub fn identity(n: usize) -> Vec<f64> {
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = 1.0;
        }
        m
    }

    pub fn max_abs(a: &[f64]) -> f64 {
        a.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}
