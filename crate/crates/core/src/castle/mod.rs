//! Two-step stochastic variational inference of MN-DAGs.
//!
//! Step 1 learns Plackett-Luce scores from the raw series with a
//! score-function gradient and a running-average baseline. Step 2 fixes the
//! ordering to the current PL mode and fits sparse variational GPs for the
//! causal coefficients against the spectrum estimate.

mod adam;
mod posterior;
pub mod step1;
pub mod step2;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use posterior::{decide_edges, lower_quantile, CoefficientSummary, Posterior};
use step1::Step1Params;
use step2::{Step2Params, Step2Problem};

use crate::error::{Error, Result};
use crate::stochastic::{pl_mode, stream, CausalOrdering, Rng, TimeAxis};
use crate::tensor::Tensor;

/// Coefficient `from → to` at scale `scale` (all `to ≠ from`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoefIndex {
    pub scale: usize,
    pub to: usize,
    pub from: usize,
}

impl CoefIndex {
    /// All off-diagonal coefficients, scale-major then row-major.
    pub fn all(scales: usize, n: usize) -> Vec<CoefIndex> {
        let mut v = Vec::with_capacity(scales * n * (n - 1));
        for scale in 0..scales {
            for to in 0..n {
                for from in 0..n {
                    if to != from {
                        v.push(CoefIndex { scale, to, from });
                    }
                }
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferConfig {
    pub iterations: usize,
    pub particles: usize,
    pub inducing_fraction: f64,
    /// Standard deviation of the spectrum likelihood.
    pub obs_scale: f64,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub clip_norm: f64,
    pub threshold: f64,
    pub level: f64,
    pub posterior_samples: usize,
    pub baseline_decay: f64,
    /// Time axis of the inference GP; must match the generating axis for
    /// `τ̂ = 1/λ̂` to be comparable.
    pub axis_scale: f64,
    pub init_lengthscale: f64,
    pub init_variance: f64,
    /// Initial scale of the whitened Cholesky factor and of the `C⁰` guide.
    pub init_scale: f64,
    /// Lengthscale pinned when the spectrum is constant in time.
    pub stationary_lengthscale: Option<f64>,
    pub stationary_tol: f64,
    pub seed: u64,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            iterations: 600,
            particles: 10,
            inducing_fraction: 0.64,
            obs_scale: 0.05,
            learning_rate: 0.01,
            lr_decay: 0.999,
            clip_norm: 10.0,
            threshold: 0.1,
            level: 0.99,
            posterior_samples: 1000,
            baseline_decay: 0.9,
            axis_scale: TimeAxis::default().scale,
            init_lengthscale: 1.0,
            init_variance: 0.1,
            init_scale: 0.1,
            stationary_lengthscale: Some(1e3),
            stationary_tol: 1e-8,
            seed: 0,
        }
    }
}

impl InferConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.inducing_fraction > 0.0 && self.inducing_fraction <= 1.0) {
            return bad("inducing fraction must lie in (0, 1]");
        }
        if !(self.obs_scale > 0.0) {
            return bad("observation scale must be positive");
        }
        if self.particles == 0 {
            return bad("need at least one particle");
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad("credibility level must lie in (0, 1)");
        }
        if self.posterior_samples < posterior::MIN_SAMPLES {
            return bad("need at least 200 posterior samples");
        }
        if !(self.learning_rate > 0.0
            && self.init_lengthscale > 0.0
            && self.init_variance > 0.0
            && self.init_scale > 0.0)
        {
            return bad("learning rate and initial scales must be positive");
        }
        Ok(())
    }

    /// `T̃ = ⌈fraction · T⌉`.
    pub fn inducing(&self, t: usize) -> usize {
        ((self.inducing_fraction * t as f64).ceil() as usize).clamp(1, t)
    }
}

/// Maximum over slices of the deviation from the first time point.
fn time_variation(shat: &Tensor) -> f64 {
    let s = shat.shape();
    let (j, t, nn) = (s[0], s[1], s[2] * s[3]);
    let d = shat.data();
    let mut worst: f64 = 0.0;
    for jj in 0..j {
        let first = &d[jj * t * nn..jj * t * nn + nn];
        for tt in 1..t {
            let cur = &d[(jj * t + tt) * nn..(jj * t + tt + 1) * nn];
            for (a, b) in first.iter().zip(cur) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

/// Complete variational state of a training run.
#[derive(Debug, Clone)]
pub struct Castle {
    pub config: InferConfig,
    x: Tensor,
    pub problem: Step2Problem,
    pub step1: Step1Params,
    pub step2: Step2Params,
    adam1: Adam,
    adam2: Adam,
    /// Running average `f̄` of the step-1 learning signal.
    pub baseline: Option<f64>,
    pub iteration: usize,
    pub elbo1: Vec<f64>,
    pub elbo2: Vec<f64>,
    pub stationary: bool,
    rng: Rng,
}

impl Castle {
    /// `x` is `N×T`; `shat` is `J×T×N×N`.
    pub fn new(x: &Tensor, shat: &Tensor, config: &InferConfig) -> Result<Self> {
        config.validate()?;
        let (n, t) = crate::wavelet::series_dims(x)?;
        let (_, ts, ns) = crate::mndag::field_dims(shat)?;
        if n != ns {
            return Err(Error::LengthMismatch(n, ns));
        }
        if t != ts {
            return Err(Error::LengthMismatch(t, ts));
        }
        if n < 2 {
            return Err(Error::InvalidConfig(
                "inference needs at least two series".into(),
            ));
        }
        if !x.all_finite() || !shat.all_finite() {
            return Err(Error::InvalidConfig(
                "inputs contain non-finite values".into(),
            ));
        }
        let stationary =
            config.stationary_lengthscale.is_some() && time_variation(shat) < config.stationary_tol;
        let fixed = if stationary {
            config.stationary_lengthscale
        } else {
            None
        };
        let axis = TimeAxis::new(config.axis_scale);
        let problem = Step2Problem::new(shat.clone(), axis.points(t), config.obs_scale, fixed)?;
        let ti = config.inducing(t);
        let zeta: Vec<f64> = (0..ti)
            .map(|i| {
                i as f64 * (t - 1) as f64 / (ti.max(2) - 1) as f64 / t as f64 * config.axis_scale
            })
            .collect();
        let step2 = Step2Params::init(
            problem.coef_count(),
            zeta,
            config.init_variance,
            config.init_lengthscale,
            config.init_scale,
        );
        let step1 = Step1Params::init(n, config.init_scale);
        let sizes1 = [n, n * n, n * n];
        let sizes2: Vec<usize> = step2.groups().iter().map(|g| g.len()).collect();
        let state = Self {
            config: config.clone(),
            x: x.clone(),
            adam1: Adam::new(
                config.learning_rate,
                config.lr_decay,
                config.clip_norm,
                &sizes1,
            ),
            adam2: Adam::new(
                config.learning_rate,
                config.lr_decay,
                config.clip_norm,
                &sizes2,
            ),
            problem,
            step1,
            step2,
            baseline: None,
            iteration: 0,
            elbo1: Vec::new(),
            elbo2: Vec::new(),
            stationary,
            rng: stream(config.seed, "infer"),
        };
        let expected = n + state.problem.coef_count() * (1 + ti + ti * (ti + 1) / 2) + 2 + ti;
        assert_eq!(state.parameter_count(), expected, "parameter tally");
        Ok(state)
    }

    pub fn n(&self) -> usize {
        self.problem.n
    }

    /// PL scores plus the step-2 tally.
    pub fn parameter_count(&self) -> usize {
        self.step1.theta.len() + self.step2.parameter_count()
    }

    pub fn mode(&self) -> CausalOrdering {
        pl_mode(self.step1.theta.data())
    }

    pub fn svi1_step(&mut self) -> Result<f64> {
        let out = step1::estimate(
            &self.x,
            &self.step1,
            self.config.particles,
            self.baseline,
            &mut self.rng,
        )
        .map_err(|e| self.tag(e, "svi1"))?;
        if out.grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::NonFiniteLoss {
                step: "svi1",
                iteration: self.iteration,
            });
        }
        // the optimiser descends, the ELBO is ascended
        let neg: Vec<Tensor> = out.grads.iter().map(|g| g.map(|v| -v)).collect();
        let refs: Vec<&Tensor> = neg.iter().collect();
        self.adam1.step(&mut self.step1.groups_mut(), &refs);
        let d = self.config.baseline_decay;
        self.baseline = Some(match self.baseline {
            None => out.signal,
            Some(b) => d * b + (1.0 - d) * out.signal,
        });
        self.elbo1.push(out.elbo);
        Ok(out.elbo)
    }

    pub fn svi2_step(&mut self) -> Result<f64> {
        let ordering = self.mode();
        let (p, b, t) = (
            self.config.particles,
            self.problem.coef_count(),
            self.problem.t,
        );
        let eps = Tensor::from_fn(&[p, b, t], |_| StandardNormal.sample(&mut self.rng));
        let (elbo, grads) = step2::elbo_and_grad(&self.problem, &self.step2, &ordering, &eps)
            .map_err(|e| self.tag(e, "svi2"))?;
        if !elbo.is_finite() || grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::NonFiniteLoss {
                step: "svi2",
                iteration: self.iteration,
            });
        }
        let neg: Vec<Tensor> = grads.iter().map(|g| g.map(|v| -v)).collect();
        let refs: Vec<&Tensor> = neg.iter().collect();
        self.adam2.step(&mut self.step2.groups_mut(), &refs);
        self.elbo2.push(elbo);
        Ok(elbo)
    }

    fn tag(&self, e: Error, step: &'static str) -> Error {
        match e {
            Error::NonFiniteLoss { .. } => Error::NonFiniteLoss {
                step,
                iteration: self.iteration,
            },
            other => other,
        }
    }

    /// One round: a step-1 update followed by a step-2 update.
    pub fn iterate(&mut self) -> Result<()> {
        self.svi1_step()?;
        self.svi2_step()?;
        self.iteration += 1;
        Ok(())
    }

    pub fn posterior(&self) -> Result<Posterior> {
        posterior::summarise(self, &mut stream(self.config.seed, "posterior"))
    }
}

/// Runs `config.iterations` alternating rounds and summarises the result.
pub fn train(x: &Tensor, shat: &Tensor, config: &InferConfig) -> Result<Posterior> {
    let mut state = Castle::new(x, shat, config)?;
    for _ in 0..config.iterations {
        state.iterate()?;
    }
    state.posterior()
}
