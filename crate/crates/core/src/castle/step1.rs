//! Ordering model: `≺ ~ PL(θ)`, node-space coefficients `C⁰ ~ N(0, 1)` masked
//! by `≺`, and `x_t ~ N(0, M Mᵀ)` with `M = (I − C)⁻¹`.
//!
//! Since `det M = 1`, `log N(x; 0, M Mᵀ) = −½‖(I − C) x‖² − (N/2) ln 2π`.

use std::rc::Rc;

use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::stochastic::{pl_log_prob, pl_log_prob_grad, pl_sample, CausalOrdering, Rng};
use crate::tensor::Tensor;

use super::step2::{softplus, softplus_inv};

#[derive(Debug, Clone, PartialEq)]
pub struct Step1Params {
    pub theta: Tensor,
    /// `[N, N]` guide means of `C⁰`.
    pub c0_mean: Tensor,
    /// `[N, N]` unconstrained guide scales (softplus).
    pub c0_raw: Tensor,
}

impl Step1Params {
    pub fn init(n: usize, scale: f64) -> Self {
        Self {
            theta: Tensor::zeros(&[n]),
            c0_mean: Tensor::zeros(&[n, n]),
            c0_raw: Tensor::full(&[n, n], softplus_inv(scale)),
        }
    }

    pub fn groups_mut(&mut self) -> [&mut Tensor; 3] {
        [&mut self.theta, &mut self.c0_mean, &mut self.c0_raw]
    }

    /// Off-diagonal `KL(N(μ, s²) ‖ N(0, 1))`.
    pub fn kl(&self) -> f64 {
        let n = self.theta.len();
        let mut kl = 0.0;
        for i in 0..n * n {
            if i / n != i % n {
                let (mu, s) = (self.c0_mean.data()[i], softplus(self.c0_raw.data()[i]));
                kl += 0.5 * (s * s + mu * mu - 1.0 - 2.0 * s.ln());
            }
        }
        kl
    }
}

/// Log of the uniform ordering prior, `−ln N!`.
pub fn log_uniform_prior(n: usize) -> f64 {
    -(1..=n).map(|k| (k as f64).ln()).sum::<f64>()
}

/// Per-particle REINFORCE terms `(f_p − f̄) ∇_θ ln q(≺_p)`.
pub fn reinforce_terms(
    theta: &[f64],
    orderings: &[CausalOrdering],
    f: &[f64],
    baseline: f64,
) -> Vec<Vec<f64>> {
    orderings
        .iter()
        .zip(f)
        .map(|(o, &fp)| {
            pl_log_prob_grad(theta, o)
                .into_iter()
                .map(|g| (fp - baseline) * g)
                .collect()
        })
        .collect()
}

pub struct Step1Outcome {
    pub elbo: f64,
    /// ELBO gradients in [`Step1Params::groups_mut`] order.
    pub grads: [Tensor; 3],
    /// Mean learning signal of this step.
    pub signal: f64,
}

/// One Monte-Carlo ELBO estimate and its gradient. `baseline` is the running
/// average `f̄`; `None` on the first step, which then uses the step's own mean.
pub fn estimate(
    x: &Tensor,
    params: &Step1Params,
    particles: usize,
    baseline: Option<f64>,
    rng: &mut Rng,
) -> Result<Step1Outcome> {
    let (n, t) = crate::wavelet::series_dims(x)?;
    let theta = params.theta.data();
    let orderings: Vec<CausalOrdering> = (0..particles).map(|_| pl_sample(theta, rng)).collect();
    let eps = Tensor::from_fn(&[particles, n, n], |_| StandardNormal.sample(rng));

    let mut tape = Tape::new();
    let mu = tape.leaf(params.c0_mean.clone());
    let raw = tape.leaf(params.c0_raw.clone());
    let sd = tape.softplus(raw);
    let noise = tape.constant(eps);
    let scaled = tape.mul(noise, sd)?;
    let c0 = tape.add(scaled, mu)?;
    let index: Rc<[Option<usize>]> = (0..particles * n * n)
        .map(|k| {
            let (p, to, from) = (k / (n * n), (k / n) % n, k % n);
            orderings[p].precedes(from, to).then_some(k)
        })
        .collect();
    let c = tape.gather(c0, index, &[particles, n, n])?;
    let xv = tape.constant(x.clone());
    let cx = tape.matmul(c, xv)?;
    let resid = tape.sub(xv, cx)?;
    let r2 = tape.square(resid);
    let sse = tape.sum(r2);
    let norm = 0.5 * (t * n) as f64 * (2.0 * std::f64::consts::PI).ln();
    let loglik = tape.affine(sse, -0.5 / particles as f64, -norm);

    let offdiag = tape.constant(Tensor::from_fn(&[n, n], |i| {
        if i[0] != i[1] {
            1.0
        } else {
            0.0
        }
    }));
    let s2 = tape.square(sd);
    let m2 = tape.square(mu);
    let logs = tape.log(sd);
    let logs2 = tape.scale(logs, -2.0);
    let k = tape.add(s2, m2)?;
    let k = tape.add(k, logs2)?;
    let k = tape.affine(k, 0.5, -0.5);
    let k = tape.mul(k, offdiag)?;
    let kl = tape.sum(k);
    let elbo_c = tape.sub(loglik, kl)?;
    let grads = tape.grad(elbo_c, &[mu, raw])?.into_vec();

    // per-particle learning signal f_p = log p(x|≺,C) + log p(≺) − log q(≺)
    let rv = tape.value(resid).data();
    let prior = log_uniform_prior(n);
    let log_q: Vec<f64> = orderings.iter().map(|o| pl_log_prob(theta, o)).collect();
    let f: Vec<f64> = (0..particles)
        .map(|p| {
            let s: f64 = rv[p * n * t..(p + 1) * n * t].iter().map(|v| v * v).sum();
            -0.5 * s - norm + prior - log_q[p]
        })
        .collect();
    let signal = f.iter().sum::<f64>() / particles as f64;
    let kl_value = tape.value(kl).item();
    let elbo = signal - kl_value;
    if !elbo.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: "svi1",
            iteration: 0,
        });
    }

    let fbar = baseline.unwrap_or(signal);
    let terms = reinforce_terms(theta, &orderings, &f, fbar);
    let mut g_theta = vec![0.0; n];
    for (p, term) in terms.iter().enumerate() {
        // score-function term plus the direct derivative of −ln q(≺_p)
        let direct = pl_log_prob_grad(theta, &orderings[p]);
        for i in 0..n {
            g_theta[i] += (term[i] - direct[i]) / particles as f64;
        }
    }
    let mut it = grads.into_iter();
    let (g_mu, g_raw) = (
        it.next().expect("two inputs"),
        it.next().expect("two inputs"),
    );
    Ok(Step1Outcome {
        elbo,
        grads: [Tensor::vector(g_theta), g_mu, g_raw],
        signal,
    })
}
