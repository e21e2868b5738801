//! Central finite-difference checks of tape gradients, plus a catalogue of
//! single-op graphs and a small frozen step-2 instance to run them on.

use std::rc::Rc;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::castle::step2::{self, Step2Params, Step2Problem};
use crate::error::Result;
use crate::stochastic::{CausalOrdering, Rng};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Denominator floor of [`relative_error`]; below it the comparison is
/// effectively absolute.
pub const REL_FLOOR: f64 = 1e-2;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Worst entry of one check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// `(input, flat offset)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares the gradients returned by `f` against central differences of
/// its value, entry by entry over every input.
pub fn check(
    f: impl Fn(&[Tensor]) -> Result<(f64, Vec<Tensor>)>,
    inputs: &[Tensor],
    step: f64,
) -> Result<GradCheck> {
    let (_, grads) = f(inputs)?;
    let mut out = GradCheck {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe = inputs.to_vec();
    for (i, g) in grads.iter().enumerate() {
        for k in 0..probe[i].len() {
            let x0 = probe[i].data()[k];
            probe[i].data_mut()[k] = x0 + step;
            let up = f(&probe)?.0;
            probe[i].data_mut()[k] = x0 - step;
            let down = f(&probe)?.0;
            probe[i].data_mut()[k] = x0;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(g.data()[k], numeric);
            if err > out.max_rel_err || !err.is_finite() {
                out = GradCheck {
                    max_rel_err: err,
                    worst: (i, k),
                    analytic: g.data()[k],
                    numeric,
                };
            }
        }
    }
    Ok(out)
}

/// Builds a graph on fresh leaves and contracts its (possibly non-scalar)
/// output with fixed weights so that every output entry is exercised.
pub fn tape_fn(
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> impl Fn(&[Tensor]) -> Result<(f64, Vec<Tensor>)> {
    move |inputs: &[Tensor]| {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        let y = build(&mut tape, &leaves)?;
        let shape = tape.value(y).shape().to_vec();
        let w = tape.constant(Tensor::from_fn(&shape, |i| {
            let k: usize = i.iter().fold(0, |acc, &v| acc * 7 + v);
            1.0 + 0.5 * (k as f64 + 1.0).sin()
        }));
        let yw = tape.mul(y, w)?;
        let s = tape.sum(yw);
        let grads = tape.grad(s, &leaves)?;
        Ok((tape.value(s).item(), grads.into_vec()))
    }
}

type Builder = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// One differentiable op with an input sampler for its valid domain.
pub struct OpCase {
    pub name: &'static str,
    pub sample: Box<dyn Fn(&mut Rng) -> Vec<Tensor>>,
    pub build: Builder,
}

fn normal(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

fn positive(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(0.3..2.0))
}

fn case(
    name: &'static str,
    sample: impl Fn(&mut Rng) -> Vec<Tensor> + 'static,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static,
) -> OpCase {
    OpCase {
        name,
        sample: Box::new(sample),
        build: Box::new(build),
    }
}

/// `X Xᵀ + 3I` per batch slice: SPD for any `X`.
fn spd(tape: &mut Tape, x: Var, n: usize) -> Result<Var> {
    let xt = tape.transpose(x)?;
    let g = tape.matmul(x, xt)?;
    let eye = tape.constant(Tensor::eye(n).map(|v| 3.0 * v));
    tape.add(g, eye)
}

/// Lower-triangular factor with a well-conditioned positive diagonal.
fn lower(tape: &mut Tape, x: Var, n: usize) -> Result<Var> {
    let a = spd(tape, x, n)?;
    tape.cholesky(a, 0.0)
}

/// Every op the tape differentiates.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        case(
            "add",
            |r| vec![normal(&[3, 4], r), normal(&[4], r)],
            |t, v| t.add(v[0], v[1]),
        ),
        case(
            "sub",
            |r| vec![normal(&[2, 3], r), normal(&[2, 3], r)],
            |t, v| t.sub(v[0], v[1]),
        ),
        case(
            "mul",
            |r| vec![normal(&[2, 3, 4], r), normal(&[3, 1], r)],
            |t, v| t.mul(v[0], v[1]),
        ),
        case(
            "div",
            |r| vec![normal(&[3, 3], r), positive(&[3], r)],
            |t, v| t.div(v[0], v[1]),
        ),
        case(
            "affine",
            |r| vec![normal(&[5], r)],
            |t, v| Ok(t.affine(v[0], -1.7, 0.3)),
        ),
        case("exp", |r| vec![normal(&[4], r)], |t, v| Ok(t.exp(v[0]))),
        case("log", |r| vec![positive(&[4], r)], |t, v| Ok(t.log(v[0]))),
        case(
            "square",
            |r| vec![normal(&[4], r)],
            |t, v| Ok(t.square(v[0])),
        ),
        case("sqrt", |r| vec![positive(&[4], r)], |t, v| Ok(t.sqrt(v[0]))),
        case(
            "softplus",
            |r| vec![normal(&[6], r)],
            |t, v| Ok(t.softplus(v[0])),
        ),
        case(
            "clamp_min",
            |r| vec![normal(&[6], r)],
            |t, v| Ok(t.clamp_min(v[0], 0.1)),
        ),
        case("sum", |r| vec![normal(&[2, 3], r)], |t, v| Ok(t.sum(v[0]))),
        case(
            "mean",
            |r| vec![normal(&[2, 3], r)],
            |t, v| Ok(t.mean(v[0])),
        ),
        case(
            "sum_last",
            |r| vec![normal(&[2, 3, 4], r)],
            |t, v| t.sum_last(v[0]),
        ),
        case(
            "logsumexp",
            |r| vec![normal(&[3, 5], r)],
            |t, v| t.logsumexp(v[0]),
        ),
        case(
            "matmul",
            |r| vec![normal(&[3, 4], r), normal(&[4, 2], r)],
            |t, v| t.matmul(v[0], v[1]),
        ),
        case(
            "matmul_batched",
            |r| vec![normal(&[2, 3, 4], r), normal(&[2, 4, 2], r)],
            |t, v| t.matmul(v[0], v[1]),
        ),
        case(
            "matmul_broadcast",
            |r| vec![normal(&[3, 4], r), normal(&[2, 4, 5], r)],
            |t, v| t.matmul(v[0], v[1]),
        ),
        case(
            "transpose",
            |r| vec![normal(&[2, 3, 4], r)],
            |t, v| t.transpose(v[0]),
        ),
        case(
            "cholesky",
            |r| vec![normal(&[2, 4, 4], r)],
            |t, v| lower(t, v[0], 4),
        ),
        case(
            "triangular_solve",
            |r| vec![normal(&[3, 3], r), normal(&[3, 2], r)],
            |t, v| {
                let l = lower(t, v[0], 3)?;
                t.triangular_solve(l, v[1], false)
            },
        ),
        case(
            "triangular_solve_transposed",
            |r| vec![normal(&[2, 3, 3], r), normal(&[2, 3, 4], r)],
            |t, v| {
                let l = lower(t, v[0], 3)?;
                t.triangular_solve(l, v[1], true)
            },
        ),
        case(
            "triangular_solve_broadcast",
            |r| vec![normal(&[3, 3], r), normal(&[2, 3, 4], r)],
            |t, v| {
                let l = lower(t, v[0], 3)?;
                t.triangular_solve(l, v[1], false)
            },
        ),
        case(
            "gather",
            |r| vec![normal(&[5], r)],
            |t, v| {
                let idx: Rc<[Option<usize>]> =
                    vec![Some(4), None, Some(0), Some(4), Some(2), None].into();
                t.gather(v[0], idx, &[2, 3])
            },
        ),
        case(
            "reshape",
            |r| vec![normal(&[2, 6], r)],
            |t, v| t.reshape(v[0], &[3, 4]),
        ),
        case(
            "diag_part",
            |r| vec![normal(&[2, 3, 3], r)],
            |t, v| t.diag_part(v[0]),
        ),
    ]
}

/// A frozen step-2 instance: `N = 2`, two scales, `T = 16`, eight inducing
/// points, perturbed parameters and fixed noise.
pub struct MicroInstance {
    pub problem: Step2Problem,
    pub params: Step2Params,
    pub ordering: CausalOrdering,
    pub eps: Tensor,
}

impl MicroInstance {
    pub const N: usize = 2;
    pub const SCALES: usize = 2;
    pub const T: usize = 16;
    pub const INDUCING: usize = 8;

    pub fn new(rng: &mut Rng) -> Result<Self> {
        let (n, j, t, ti) = (Self::N, Self::SCALES, Self::T, Self::INDUCING);
        // Ŝ = A Aᵀ + I per slice
        let mut shat = Tensor::zeros(&[j, t, n, n]);
        for s in 0..j * t {
            let a: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
            for r in 0..n {
                for c in 0..n {
                    let v: f64 = (0..n).map(|k| a[r * n + k] * a[c * n + k]).sum::<f64>()
                        + f64::from(r == c);
                    shat.data_mut()[s * n * n + r * n + c] = v;
                }
            }
        }
        let times: Vec<f64> = (0..t).map(|i| i as f64 / t as f64 * 10.0).collect();
        let problem = Step2Problem::new(shat, times, 0.5, None)?;
        let zeta: Vec<f64> = (0..ti).map(|i| i as f64 * 10.0 / ti as f64).collect();
        let mut params = Step2Params::init(problem.coef_count(), zeta, 0.3, 1.5, 0.5);
        for g in params.groups_mut() {
            for v in g.data_mut() {
                let d: f64 = StandardNormal.sample(rng);
                *v += 0.1 * d;
            }
        }
        let eps = Tensor::from_fn(&[3, problem.coef_count(), t], |_| {
            StandardNormal.sample(rng)
        });
        Ok(Self {
            problem,
            params,
            ordering: CausalOrdering::identity(n),
            eps,
        })
    }

    /// Parameter groups as check inputs.
    pub fn inputs(&self) -> Vec<Tensor> {
        self.params.groups().iter().map(|g| (*g).clone()).collect()
    }

    /// ELBO and gradient at the given parameter groups.
    pub fn elbo(&self, groups: &[Tensor]) -> Result<(f64, Vec<Tensor>)> {
        let mut params = self.params.clone();
        for (dst, src) in params.groups_mut().into_iter().zip(groups) {
            *dst = src.clone();
        }
        step2::elbo_and_grad(&self.problem, &params, &self.ordering, &self.eps)
    }
}
