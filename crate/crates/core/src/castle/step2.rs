//! Sparse variational GP model of the causal coefficients, observed through
//! the spectrum estimate.
//!
//! Each coefficient `c_b(t) = C̄_b + f_b(t)` with `f_b ~ GP(0, K)` and one
//! RBF kernel shared by all coefficients. The posterior is whitened:
//! `u_b = L_zz v_b`, `q(v_b) = N(m_b, L_b L_bᵀ)`, so `KL = ½(‖L_b‖² + ‖m_b‖²
//! − T̃ − 2 Σ ln diag L_b)`.
//!
//! Coefficients the current ordering forbids are left out of both the
//! likelihood and the KL, so their guides receive no gradient while masked.

use std::rc::Rc;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::stochastic::CausalOrdering;
use crate::tensor::{self, Tensor};

use super::CoefIndex;

/// Lower floor on the predictive variance before taking its square root.
pub const VARIANCE_FLOOR: f64 = 1e-9;

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Learnable step-2 parameters. Positive quantities are stored unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct Step2Params {
    /// `[B]` GP means.
    pub cbar: Tensor,
    /// `[B, T̃]` whitened variational means.
    pub mean: Tensor,
    /// `[B, T̃, T̃]`; strict lower triangle plus softplus of the diagonal
    /// gives `L_b`. The upper triangle is ignored.
    pub chol_raw: Tensor,
    pub sigma_raw: Tensor,
    pub lambda_raw: Tensor,
    /// `[T̃]` inducing locations.
    pub zeta: Tensor,
}

pub const GROUPS: usize = 6;

impl Step2Params {
    pub fn init(
        b: usize,
        zeta: Vec<f64>,
        variance: f64,
        lengthscale: f64,
        chol_scale: f64,
    ) -> Self {
        let ti = zeta.len();
        let diag = softplus_inv(chol_scale);
        Self {
            cbar: Tensor::zeros(&[b]),
            mean: Tensor::zeros(&[b, ti]),
            chol_raw: Tensor::from_fn(&[b, ti, ti], |i| if i[1] == i[2] { diag } else { 0.0 }),
            sigma_raw: Tensor::scalar(softplus_inv(variance)),
            lambda_raw: Tensor::scalar(softplus_inv(lengthscale)),
            zeta: Tensor::vector(zeta),
        }
    }

    pub fn groups(&self) -> [&Tensor; GROUPS] {
        [
            &self.cbar,
            &self.mean,
            &self.chol_raw,
            &self.sigma_raw,
            &self.lambda_raw,
            &self.zeta,
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut Tensor; GROUPS] {
        [
            &mut self.cbar,
            &mut self.mean,
            &mut self.chol_raw,
            &mut self.sigma_raw,
            &mut self.lambda_raw,
            &mut self.zeta,
        ]
    }

    pub fn variance(&self) -> f64 {
        softplus(self.sigma_raw.item())
    }

    pub fn lengthscale(&self) -> f64 {
        softplus(self.lambda_raw.item())
    }

    pub fn inducing(&self) -> usize {
        self.zeta.len()
    }

    /// Parameters in use: per coefficient `1 + T̃ + T̃(T̃+1)/2`, plus two
    /// kernel scalars and `T̃` inducing locations.
    pub fn parameter_count(&self) -> usize {
        let b = self.cbar.len();
        let ti = self.inducing();
        b * (1 + ti + ti * (ti + 1) / 2) + 2 + ti
    }

    /// Materialised `L_b` factors `[B, T̃, T̃]`.
    pub fn chol(&self) -> Tensor {
        let ti = self.inducing();
        let mut l = self.chol_raw.clone();
        for (k, v) in l.data_mut().iter_mut().enumerate() {
            let (i, j) = ((k / ti) % ti, k % ti);
            if j > i {
                *v = 0.0;
            } else if i == j {
                *v = softplus(*v);
            }
        }
        l
    }

    /// `KL(q(u) ‖ p(u))` summed over every coefficient, masked or not.
    pub fn kl(&self) -> f64 {
        let l = self.chol();
        let ti = self.inducing();
        let b = self.cbar.len();
        let sq: f64 = l.data().iter().map(|x| x * x).sum();
        let m2: f64 = self.mean.data().iter().map(|x| x * x).sum();
        let logdiag: f64 = (0..b * ti).map(|k| l.data()[k * ti + k % ti].ln()).sum();
        0.5 * (sq + m2 - (b * ti) as f64 - 2.0 * logdiag)
    }
}

/// Observed data and fixed settings of the step-2 model.
#[derive(Debug, Clone)]
pub struct Step2Problem {
    pub n: usize,
    pub scales: usize,
    pub t: usize,
    /// `[J, T, N, N]` spectrum estimate.
    pub shat: Tensor,
    /// Inference time grid `[T]`.
    pub times: Vec<f64>,
    pub obs_scale: f64,
    /// Pins `λ_K` when set.
    pub fixed_lengthscale: Option<f64>,
    pub coefs: Vec<CoefIndex>,
    lower: Rc<Tensor>,
}

impl Step2Problem {
    pub fn new(
        shat: Tensor,
        times: Vec<f64>,
        obs_scale: f64,
        fixed_lengthscale: Option<f64>,
    ) -> Result<Self> {
        let (scales, t, n) = crate::mndag::field_dims(&shat)?;
        if times.len() != t {
            return Err(Error::LengthMismatch(times.len(), t));
        }
        let coefs = CoefIndex::all(scales, n);
        let lower = Tensor::from_fn(&[scales * t * n * n], |i| {
            let k = i[0] % (n * n);
            if k % n <= k / n {
                1.0
            } else {
                0.0
            }
        });
        Ok(Self {
            n,
            scales,
            t,
            shat,
            times,
            obs_scale,
            fixed_lengthscale,
            coefs,
            lower: Rc::new(lower),
        })
    }

    pub fn coef_count(&self) -> usize {
        self.coefs.len()
    }

    /// Number of observed spectrum entries (lower triangle with diagonal).
    pub fn observed(&self) -> usize {
        self.scales * self.t * self.n * (self.n + 1) / 2
    }

    /// Coefficients `m → n` allowed by the ordering (`m` ranked before `n`).
    pub fn active(&self, ordering: &CausalOrdering) -> Vec<usize> {
        (0..self.coefs.len())
            .filter(|&bi| ordering.precedes(self.coefs[bi].from, self.coefs[bi].to))
            .collect()
    }

    /// Gather map from the active samples `f` `[P, A, T]` into `C`
    /// `[P·J·T, N, N]`; masked entries stay zero.
    pub fn mask_index(&self, active: &[usize], particles: usize) -> Rc<[Option<usize>]> {
        let (n, t, a) = (self.n, self.t, active.len());
        let mut idx = vec![None; particles * self.scales * t * n * n];
        for p in 0..particles {
            for (r, &bi) in active.iter().enumerate() {
                let c = self.coefs[bi];
                for tt in 0..t {
                    let dst = (((p * self.scales + c.scale) * t + tt) * n + c.to) * n + c.from;
                    idx[dst] = Some((p * a + r) * t + tt);
                }
            }
        }
        idx.into()
    }
}

/// Rows `active` of the leading axis of a `[B, ...]` tensor, as a gather map.
fn row_index(active: &[usize], row: usize) -> Rc<[Option<usize>]> {
    active
        .iter()
        .flat_map(|&b| (b * row..(b + 1) * row).map(Some))
        .collect()
}

/// RBF Gram block `σ exp(−(a_i − b_k)²/(2λ²))` on the tape.
fn rbf_cross(tape: &mut Tape, a: Var, b: Var, sigma: Var, lambda: Var) -> Result<Var> {
    let (na, nb) = (tape.value(a).len(), tape.value(b).len());
    let a2 = tape.reshape(a, &[na, 1])?;
    let b2 = tape.reshape(b, &[1, nb])?;
    let d = tape.sub(a2, b2)?;
    let d2 = tape.square(d);
    let l2 = tape.square(lambda);
    let neg_half = tape.scalar(-0.5);
    let coef = tape.div(neg_half, l2)?;
    let arg = tape.mul(d2, coef)?;
    let e = tape.exp(arg);
    tape.mul(e, sigma)
}

/// Leaves of the step-2 graph, in [`Step2Params::groups`] order.
pub struct Step2Graph {
    pub tape: Tape,
    pub leaves: [Var; GROUPS],
    pub elbo: Var,
    pub loglik: f64,
    pub kl: f64,
    /// `[P, J·T, N, N]` sampled causal slices.
    pub causal: Var,
}

/// Builds the Monte-Carlo ELBO `mean_p log N(Ŝ; M Mᵀ, σ²) − Σ KL`, both
/// restricted to coefficients the ordering allows, for fixed
/// standard-normal noise `eps` `[P, B, T]`.
pub fn build(
    problem: &Step2Problem,
    params: &Step2Params,
    ordering: &CausalOrdering,
    eps: &Tensor,
) -> Result<Step2Graph> {
    let (n, t, j) = (problem.n, problem.t, problem.scales);
    let b = problem.coef_count();
    let ti = params.inducing();
    let p = eps.shape()[0];
    if eps.shape() != [p, b, t] {
        return Err(Error::ShapeMismatch {
            op: "step2 noise",
            lhs: eps.shape().to_vec(),
            rhs: vec![p, b, t],
        });
    }
    let mut tape = Tape::new();
    let leaves = [
        tape.leaf(params.cbar.clone()),
        tape.leaf(params.mean.clone()),
        tape.leaf(params.chol_raw.clone()),
        tape.leaf(params.sigma_raw.clone()),
        tape.leaf(params.lambda_raw.clone()),
        tape.leaf(params.zeta.clone()),
    ];
    let [cbar, mean, raw, sraw, lraw, zeta] = leaves;

    let sigma = tape.softplus(sraw);
    let lambda = match problem.fixed_lengthscale {
        Some(l) => tape.constant(Tensor::scalar(l)),
        None => tape.softplus(lraw),
    };

    // masked coefficients are excluded from the ELBO altogether: they reach
    // neither the likelihood nor the KL, so their guide stays put
    let active = problem.active(ordering);
    let na = active.len();
    let raw_a = tape.gather(raw, row_index(&active, ti * ti), &[na, ti, ti])?;
    let mean_a = tape.gather(mean, row_index(&active, ti), &[na, ti])?;
    let cbar_a = tape.gather(cbar, row_index(&active, 1), &[na, 1])?;

    // whitened factor L_b = strict(R) + diag(softplus(diag R))
    let strict = tape.constant(Tensor::from_fn(&[ti, ti], |i| {
        if i[1] < i[0] {
            1.0
        } else {
            0.0
        }
    }));
    let lower_part = tape.mul(raw_a, strict)?;
    let diag_raw = tape.diag_part(raw_a)?;
    let diag = tape.softplus(diag_raw);
    let diag_index: Rc<[Option<usize>]> = (0..na * ti * ti)
        .map(|k| {
            let (bi, i, jj) = (k / (ti * ti), (k / ti) % ti, k % ti);
            (i == jj).then_some(bi * ti + i)
        })
        .collect();
    let diag_mat = tape.gather(diag, diag_index, &[na, ti, ti])?;
    let lv_a = tape.add(lower_part, diag_mat)?;

    // inducing-point algebra
    let times = tape.constant(Tensor::vector(problem.times.clone()));
    let kzz = rbf_cross(&mut tape, zeta, zeta, sigma, lambda)?;
    let lzz = tape.cholesky_jittered(kzz)?;
    let kzx = rbf_cross(&mut tape, zeta, times, sigma, lambda)?;
    let a = tape.triangular_solve(lzz, kzx, false)?;
    let at = tape.transpose(a)?;

    // predictive mean [A, T]
    let proj = tape.matmul(mean_a, a)?;
    let mu = tape.add(proj, cbar_a)?;

    // predictive variance σ − ‖a_t‖² + ‖L_bᵀ a_t‖²
    let atl = tape.matmul(at, lv_a)?;
    let atl2 = tape.square(atl);
    let q = tape.sum_last(atl2)?;
    let at2 = tape.square(at);
    let a2 = tape.sum_last(at2)?;
    let base = tape.sub(sigma, a2)?;
    let var = tape.add(q, base)?;
    let var = tape.clamp_min(var, VARIANCE_FLOOR);
    let sd = tape.sqrt(var);

    // reparameterised marginal samples f [P, A, T]
    let mut noise = Vec::with_capacity(p * na * t);
    for pi in 0..p {
        for &bi in &active {
            let o = (pi * b + bi) * t;
            noise.extend_from_slice(&eps.data()[o..o + t]);
        }
    }
    let noise = tape.constant(Tensor::new(vec![p, na, t], noise)?);
    let scaled = tape.mul(noise, sd)?;
    let f = tape.add(scaled, mu)?;

    let index = problem.mask_index(&active, p);
    let slices = p * j * t;
    let c = tape.gather(f, index, &[slices, n, n])?;

    // M = Σ_{k<N} Cᵏ
    let eye = tape.constant(Tensor::eye(n));
    let mut m = tape.add(c, eye)?;
    let mut power = c;
    for _ in 2..n {
        power = tape.matmul(power, c)?;
        m = tape.add(m, power)?;
    }
    let last = tensor::matmul(tape.value(power), tape.value(c))?;
    let residual = tensor::small::max_abs(last.data());
    if residual > crate::mndag::NILPOTENT_TOL {
        return Err(Error::NotNilpotent(residual));
    }
    let mt = tape.transpose(m)?;
    let s = tape.matmul(m, mt)?;
    let s = tape.reshape(s, &[p, j * t * n * n])?;
    let shat = tape.constant(problem.shat.clone().reshape(&[j * t * n * n])?);
    let diff = tape.sub(s, shat)?;
    let sq = tape.square(diff);
    let lower = tape.constant((*problem.lower).clone());
    let masked = tape.mul(sq, lower)?;
    let sse = tape.sum(masked);
    let so = problem.obs_scale;
    let norm = problem.observed() as f64 * (so.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln());
    let loglik = tape.affine(sse, -1.0 / (2.0 * so * so * p as f64), -norm);

    // KL
    let lv2 = tape.square(lv_a);
    let lv2 = tape.sum(lv2);
    let m2 = tape.square(mean_a);
    let m2 = tape.sum(m2);
    let logd = tape.log(diag);
    let logd = tape.sum(logd);
    let logd2 = tape.scale(logd, -2.0);
    let kl = tape.add(lv2, m2)?;
    let kl = tape.add(kl, logd2)?;
    let kl = tape.affine(kl, 0.5, -0.5 * (na * ti) as f64);

    let elbo = tape.sub(loglik, kl)?;
    let causal = tape.reshape(c, &[p, j * t, n, n])?;
    Ok(Step2Graph {
        loglik: tape.value(loglik).item(),
        kl: tape.value(kl).item(),
        tape,
        leaves,
        elbo,
        causal,
    })
}

/// ELBO value and its gradient with respect to every parameter group.
/// Unused groups (a pinned lengthscale) get zero gradients.
pub fn elbo_and_grad(
    problem: &Step2Problem,
    params: &Step2Params,
    ordering: &CausalOrdering,
    eps: &Tensor,
) -> Result<(f64, Vec<Tensor>)> {
    let g = build(problem, params, ordering, eps)?;
    let grads = g.tape.grad(g.elbo, &g.leaves)?;
    Ok((g.tape.value(g.elbo).item(), grads.into_vec()))
}

/// Predictive mean and joint covariance of `f_b` on the time grid:
/// `μ = C̄ + Aᵀm`, `Σ = K_xx − AᵀA + AᵀL Lᵀ A` with `A = L_zz⁻¹ K_zx`.
pub struct Predictive {
    /// `[B, T]`
    pub mean: Tensor,
    /// `[B, T, T]`
    pub cov: Tensor,
}

pub fn predictive(problem: &Step2Problem, params: &Step2Params) -> Result<Predictive> {
    let sigma = params.variance();
    let lambda = problem
        .fixed_lengthscale
        .unwrap_or_else(|| params.lengthscale());
    let kernel = crate::stochastic::Kernel::rbf(sigma, lambda);
    let zeta = params.zeta.data();
    let (lzz, _) = tensor::cholesky_with_retries(
        &kernel.gram(zeta),
        tensor::DEFAULT_JITTER,
        tensor::JITTER_RETRIES,
    )?;
    let a = tensor::tri_solve(&lzz, &kernel.cross(zeta, &problem.times), false)?;
    let at = tensor::transpose_last2(&a)?;
    let b = params.cbar.len();
    let t = problem.t;
    let mut mean = tensor::matmul(&params.mean, &a)?;
    for (k, v) in mean.data_mut().iter_mut().enumerate() {
        *v += params.cbar.data()[k / t];
    }
    let atl = tensor::matmul(&at, &params.chol())?;
    let extra = tensor::matmul(&atl, &tensor::transpose_last2(&atl)?)?;
    let base = kernel.gram(&problem.times);
    let ata = tensor::matmul(&at, &a)?;
    let mut cov = extra;
    for (k, v) in cov.data_mut().iter_mut().enumerate() {
        let e = k % (t * t);
        *v += base.data()[e] - ata.data()[e];
    }
    debug_assert_eq!(cov.shape(), [b, t, t]);
    Ok(Predictive { mean, cov })
}
