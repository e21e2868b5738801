//! Define-by-run reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation in insertion order; [`Tape::grad`]
//! walks it backwards once, accumulating adjoints. Tapes are cheap to build
//! and meant to be thrown away after each optimisation step.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{self, broadcast_binary, mat_dims, reduce_to_shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine(Var, f64),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sqrt(Var),
    Softplus(Var),
    ClampMin(Var, f64),
    Sum(Var),
    SumLast(Var),
    Mean(Var),
    LogSumExp(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Cholesky(Var),
    TriSolve {
        l: Var,
        b: Var,
        transpose: bool,
    },
    Gather {
        src: Var,
        index: Rc<[Option<usize>]>,
    },
    Reshape(Var),
    DiagPart(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints returned by [`Tape::grad`], one per requested input.
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<Tensor>,
    connected: Vec<bool>,
}

impl Gradients {
    pub fn get(&self, i: usize) -> &Tensor {
        &self.adjoints[i]
    }

    pub fn is_connected(&self, i: usize) -> bool {
        self.connected[i]
    }

    pub fn into_vec(self) -> Vec<Tensor> {
        self.adjoints
    }

    /// Fails with [`Error::DisconnectedInput`] for the first input the
    /// output does not depend on.
    pub fn require_connected(self) -> Result<Vec<Tensor>> {
        match self.connected.iter().position(|c| !c) {
            Some(i) => Err(Error::DisconnectedInput(i)),
            None => Ok(self.adjoints),
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn last_dim(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape().last() {
        Some(&n) if n > 0 => Ok((t.len() / n, n)),
        _ => Err(Error::ShapeMismatch {
            op: "last-axis reduction",
            lhs: t.shape().to_vec(),
            rhs: vec![],
        }),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Registers an input. Leaves and constants are the same thing; a leaf is
    /// only differentiated if it is passed to [`Tape::grad`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let out = broadcast_binary(name, self.value(a), self.value(b), f)?;
        Ok(self.push(op, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// `scale · a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(a).map(|x| scale * x + shift);
        self.push(Op::Affine(a, scale), v)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 0.0)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(Op::Log(a), v)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(Op::Square(a), v)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sqrt);
        self.push(Op::Sqrt(a), v)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(Op::Softplus(a), v)
    }

    /// `max(a, floor)`; the gradient is blocked where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let v = self.value(a).map(|x| x.max(floor));
        self.push(Op::ClampMin(a, floor), v)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), v)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(Op::Mean(a), v)
    }

    /// Sum over the last axis.
    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (rows, n) = last_dim(t)?;
        let data = t
            .data()
            .chunks(n)
            .map(|c| c.iter().sum())
            .collect::<Vec<f64>>();
        debug_assert_eq!(data.len(), rows);
        let shape = t.shape()[..t.rank() - 1].to_vec();
        let v = Tensor::new(shape, data)?;
        Ok(self.push(Op::SumLast(a), v))
    }

    /// Numerically stable `log Σ exp` over the last axis.
    pub fn logsumexp(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (_, n) = last_dim(t)?;
        let data = t
            .data()
            .chunks(n)
            .map(|c| {
                let m = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if m == f64::NEG_INFINITY {
                    m
                } else {
                    m + c.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
                }
            })
            .collect();
        let shape = t.shape()[..t.rank() - 1].to_vec();
        let v = Tensor::new(shape, data)?;
        Ok(self.push(Op::LogSumExp(a), v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = tensor::transpose_last2(self.value(a))?;
        Ok(self.push(Op::Transpose(a), v))
    }

    pub fn cholesky(&mut self, a: Var, jitter: f64) -> Result<Var> {
        let v = tensor::cholesky(self.value(a), jitter)?;
        Ok(self.push(Op::Cholesky(a), v))
    }

    /// Cholesky with the default jitter schedule (see
    /// [`tensor::cholesky_with_retries`]).
    pub fn cholesky_jittered(&mut self, a: Var) -> Result<Var> {
        let (v, _) = tensor::cholesky_with_retries(
            self.value(a),
            tensor::DEFAULT_JITTER,
            tensor::JITTER_RETRIES,
        )?;
        Ok(self.push(Op::Cholesky(a), v))
    }

    /// `L⁻¹ B`, or `L⁻ᵀ B` when `transpose` is set.
    pub fn triangular_solve(&mut self, l: Var, b: Var, transpose: bool) -> Result<Var> {
        let v = tensor::tri_solve(self.value(l), self.value(b), transpose)?;
        Ok(self.push(Op::TriSolve { l, b, transpose }, v))
    }

    /// `out[i] = src[index[i]]` (flat offsets), or zero where the index is `None`.
    pub fn gather(&mut self, src: Var, index: Rc<[Option<usize>]>, shape: &[usize]) -> Result<Var> {
        let s = self.value(src);
        if shape.iter().product::<usize>() != index.len()
            || index.iter().flatten().any(|&i| i >= s.len())
        {
            return Err(Error::ShapeMismatch {
                op: "gather",
                lhs: s.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let data = index
            .iter()
            .map(|i| i.map_or(0.0, |i| s.data()[i]))
            .collect();
        let v = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push(Op::Gather { src, index }, v))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        Ok(self.push(Op::Reshape(a), v))
    }

    /// Diagonal of every batch slice: `[.., n, n] -> [.., n]`.
    pub fn diag_part(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (nb, n, c) = mat_dims(t)?;
        if n != c {
            return Err(Error::ShapeMismatch {
                op: "diag_part",
                lhs: t.shape().to_vec(),
                rhs: vec![n, n],
            });
        }
        let mut data = Vec::with_capacity(nb * n);
        for b in 0..nb {
            for i in 0..n {
                data.push(t.data()[b * n * n + i * n + i]);
            }
        }
        let shape = t.shape()[..t.rank() - 1].to_vec();
        let v = Tensor::new(shape, data)?;
        Ok(self.push(Op::DiagPart(a), v))
    }

    /// Reverse pass from the scalar `output`. Visits nodes in strict reverse
    /// insertion order.
    pub fn grad(&self, output: Var, inputs: &[Var]) -> Result<Gradients> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "grad",
                lhs: out.shape().to_vec(),
                rhs: vec![],
            });
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        adj[output.0] = Some(Tensor::full(out.shape(), 1.0));
        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.backward_node(i, &g, &mut adj)?;
            adj[i] = Some(g);
        }
        let mut adjoints = Vec::with_capacity(inputs.len());
        let mut connected = Vec::with_capacity(inputs.len());
        for v in inputs {
            match adj.get(v.0).and_then(|a| a.as_ref()) {
                Some(a) => {
                    adjoints.push(a.clone());
                    connected.push(true);
                }
                None => {
                    adjoints.push(Tensor::zeros(self.value(*v).shape()));
                    connected.push(false);
                }
            }
        }
        Ok(Gradients {
            adjoints,
            connected,
        })
    }

    fn backward_node(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let acc = |adj: &mut [Option<Tensor>], v: Var, d: Tensor| {
            let d = if d.shape() != self.value(v).shape() {
                reduce_to_shape(&d, self.value(v).shape())
            } else {
                d
            };
            match &mut adj[v.0] {
                Some(a) => a
                    .data_mut()
                    .iter_mut()
                    .zip(d.data())
                    .for_each(|(x, y)| *x += y),
                slot @ None => *slot = Some(d),
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(adj, *a, g.clone());
                acc(adj, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(adj, *a, g.clone());
                acc(adj, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(adj, *a, broadcast_binary("mul", g, vb, |x, y| x * y)?);
                acc(adj, *b, broadcast_binary("mul", g, va, |x, y| x * y)?);
            }
            Op::Div(a, b) => {
                let vb = self.value(*b);
                acc(adj, *a, broadcast_binary("div", g, vb, |x, y| x / y)?);
                // d(a/b)/db = -y/b
                let gy = broadcast_binary("mul", g, y, |x, y| x * y)?;
                acc(adj, *b, broadcast_binary("div", &gy, vb, |x, y| -x / y)?);
            }
            Op::Affine(a, s) => acc(adj, *a, g.map(|x| x * s)),
            Op::Exp(a) => acc(adj, *a, broadcast_binary("exp", g, y, |x, y| x * y)?),
            Op::Log(a) => acc(
                adj,
                *a,
                broadcast_binary("log", g, self.value(*a), |x, v| x / v)?,
            ),
            Op::Square(a) => acc(
                adj,
                *a,
                broadcast_binary("square", g, self.value(*a), |x, v| 2.0 * x * v)?,
            ),
            Op::Sqrt(a) => acc(adj, *a, broadcast_binary("sqrt", g, y, |x, y| 0.5 * x / y)?),
            Op::Softplus(a) => acc(
                adj,
                *a,
                broadcast_binary("softplus", g, self.value(*a), |x, v| x * sigmoid(v))?,
            ),
            Op::ClampMin(a, floor) => {
                let f = *floor;
                acc(
                    adj,
                    *a,
                    broadcast_binary(
                        "clamp",
                        g,
                        self.value(*a),
                        |x, v| if v > f { x } else { 0.0 },
                    )?,
                )
            }
            Op::Sum(a) => acc(adj, *a, Tensor::full(self.value(*a).shape(), g.item())),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                acc(adj, *a, Tensor::full(self.value(*a).shape(), g.item() / n))
            }
            Op::SumLast(a) => {
                let src = self.value(*a);
                let (_, n) = last_dim(src)?;
                let data = g
                    .data()
                    .iter()
                    .flat_map(|&x| std::iter::repeat(x).take(n))
                    .collect();
                acc(adj, *a, Tensor::new(src.shape().to_vec(), data)?);
            }
            Op::LogSumExp(a) => {
                let src = self.value(*a);
                let (_, n) = last_dim(src)?;
                let mut d = Vec::with_capacity(src.len());
                for ((row, &lse), &gr) in src.data().chunks(n).zip(y.data()).zip(g.data()) {
                    d.extend(row.iter().map(|x| gr * (x - lse).exp()));
                }
                acc(adj, *a, Tensor::new(src.shape().to_vec(), d)?);
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (ra, rb) = (
                    va.rank() == 2 && vb.rank() > 2,
                    vb.rank() == 2 && va.rank() > 2,
                );
                let ga = tensor::matmul_op(g, false, vb, true, ra)?;
                let gb = tensor::matmul_op(va, true, g, false, rb)?;
                acc(adj, *a, ga);
                acc(adj, *b, gb);
            }
            Op::Transpose(a) => acc(adj, *a, tensor::transpose_last2(g)?),
            Op::Cholesky(a) => acc(adj, *a, cholesky_backward(y, g)?),
            Op::TriSolve { l, b, transpose } => {
                let lv = self.value(*l);
                // X = L⁻¹B  =>  B̄ = L⁻ᵀX̄,  L̄ = -tril(B̄ Xᵀ)
                // X = L⁻ᵀB  =>  B̄ = L⁻¹X̄,  L̄ = -tril(X B̄ᵀ)
                let gb = tensor::tri_solve(lv, g, !transpose)?;
                let reduce = lv.rank() == 2 && y.rank() > 2;
                let outer = if *transpose {
                    tensor::matmul_op(y, false, &gb, true, reduce)?
                } else {
                    tensor::matmul_op(&gb, false, y, true, reduce)?
                };
                let gl = tensor::tril(&outer)?.map(|x| -x);
                acc(adj, *b, gb);
                acc(adj, *l, sum_to_batch(gl, lv.shape())?);
            }
            Op::Gather { src, index } => {
                let mut d = Tensor::zeros(self.value(*src).shape());
                let dd = d.data_mut();
                for (o, ix) in index.iter().enumerate() {
                    if let Some(ix) = ix {
                        dd[*ix] += g.data()[o];
                    }
                }
                acc(adj, *src, d);
            }
            Op::Reshape(a) => acc(adj, *a, g.clone().reshape(self.value(*a).shape())?),
            Op::DiagPart(a) => {
                let src = self.value(*a);
                let (nb, n, _) = mat_dims(src)?;
                let mut d = Tensor::zeros(src.shape());
                let dd = d.data_mut();
                for b in 0..nb {
                    for k in 0..n {
                        dd[b * n * n + k * n + k] = g.data()[b * n + k];
                    }
                }
                acc(adj, *a, d);
            }
        }
        Ok(())
    }
}

/// Sums a batched matrix gradient down to an unbatched operand when the
/// operand was broadcast over the batch.
fn sum_to_batch(g: Tensor, target: &[usize]) -> Result<Tensor> {
    if g.shape() == target {
        return Ok(g);
    }
    let (nb, r, c) = mat_dims(&g)?;
    let mut out = Tensor::zeros(target);
    for b in 0..nb {
        for (o, x) in out
            .data_mut()
            .iter_mut()
            .zip(&g.data()[b * r * c..(b + 1) * r * c])
        {
            *o += x;
        }
    }
    Ok(out)
}

/// Adjoint of `L = chol(sym(A))`:
/// `Ā = sym(L⁻ᵀ Φ(Lᵀ L̄) L⁻¹)` with `Φ` taking the lower triangle and halving
/// the diagonal.
fn cholesky_backward(l: &Tensor, gl: &Tensor) -> Result<Tensor> {
    let (nb, n, _) = mat_dims(l)?;
    let lt = tensor::transpose_last2(l)?;
    let mut phi = tensor::tril(&tensor::matmul(&lt, &tensor::tril(gl)?)?)?;
    for b in 0..nb {
        for k in 0..n {
            phi.data_mut()[b * n * n + k * n + k] *= 0.5;
        }
    }
    // S = L⁻ᵀ Φ L⁻¹ = L⁻ᵀ (L⁻ᵀ Φᵀ)ᵀ
    let inner = tensor::tri_solve(l, &tensor::transpose_last2(&phi)?, true)?;
    let s = tensor::tri_solve(l, &tensor::transpose_last2(&inner)?, true)?;
    let st = tensor::transpose_last2(&s)?;
    let data = s
        .data()
        .iter()
        .zip(st.data())
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    Tensor::new(s.shape().to_vec(), data)
}
