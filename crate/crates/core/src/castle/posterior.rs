use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{step2, Castle, CoefIndex};
use crate::error::{Error, Result};
use crate::metrics::ScaleGraph;
use crate::stochastic::{CausalOrdering, Rng};
use crate::tensor::{self, Tensor};

pub const MIN_SAMPLES: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub scale: usize,
    pub to: usize,
    pub from: usize,
    /// Whether the final mode ordering forbids this coefficient.
    pub masked: bool,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Lower credible bound of the time-mean `|c|`.
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub n: usize,
    pub scales: usize,
    pub t: usize,
    pub theta: Vec<f64>,
    pub ordering: CausalOrdering,
    pub tau_hat: f64,
    pub lengthscale: f64,
    pub kernel_variance: f64,
    pub stationary: bool,
    pub threshold: f64,
    pub level: f64,
    pub coefficients: Vec<CoefficientSummary>,
    pub edges: Vec<ScaleGraph>,
    pub elbo1: Vec<f64>,
    pub elbo2: Vec<f64>,
}

impl Posterior {
    pub fn directed_edges(&self) -> usize {
        self.edges.iter().map(|g| g.directed.len()).sum()
    }

    pub fn undirected_edges(&self) -> usize {
        self.edges.iter().map(|g| g.undirected.len()).sum()
    }

    /// Means of the first and last `window` entries of the step-2 ELBO trace.
    pub fn elbo2_ends(&self, window: usize) -> Option<(f64, f64)> {
        let w = window.min(self.elbo2.len());
        if w == 0 {
            return None;
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / w as f64;
        Some((
            mean(&self.elbo2[..w]),
            mean(&self.elbo2[self.elbo2.len() - w..]),
        ))
    }
}

/// Lower `1 − level` empirical quantile (linear interpolation).
pub fn lower_quantile(samples: &[f64], level: f64) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (1.0 - level) * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Edge `from → to` at a scale is present when the lower credible bound of
/// the time-mean `|c|` exceeds `threshold`; if both directions qualify the
/// pair becomes one undirected edge. `samples[i]` holds posterior draws of
/// the time-mean `|c|` of `coefs[i]`.
pub fn decide_edges(
    coefs: &[CoefIndex],
    samples: &[Vec<f64>],
    scales: usize,
    threshold: f64,
    level: f64,
) -> Result<Vec<ScaleGraph>> {
    if coefs.len() != samples.len() {
        return Err(Error::LengthMismatch(coefs.len(), samples.len()));
    }
    let mut graphs = vec![ScaleGraph::new(); scales];
    for (c, s) in coefs.iter().zip(samples) {
        if s.len() < MIN_SAMPLES {
            return Err(Error::InvalidConfig(format!(
                "edge decisions need at least {MIN_SAMPLES} samples, got {}",
                s.len()
            )));
        }
        if lower_quantile(s, level) > threshold {
            graphs[c.scale].add_directed(c.from, c.to);
        }
    }
    Ok(graphs)
}

pub(super) fn summarise(state: &Castle, rng: &mut Rng) -> Result<Posterior> {
    let problem = &state.problem;
    let cfg = &state.config;
    let ordering = state.mode();
    let pred = step2::predictive(problem, &state.step2)?;
    let (t, draws) = (problem.t, cfg.posterior_samples);
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(0.5 + cfg.level / 2.0);
    let mut coefficients = Vec::with_capacity(problem.coef_count());
    let mut strengths = Vec::with_capacity(problem.coef_count());
    for (bi, c) in problem.coefs.iter().enumerate() {
        let mean = &pred.mean.data()[bi * t..(bi + 1) * t];
        let cov = Tensor::new(
            vec![t, t],
            pred.cov.data()[bi * t * t..(bi + 1) * t * t].to_vec(),
        )?;
        let (l, _) =
            tensor::cholesky_with_retries(&cov, tensor::DEFAULT_JITTER, tensor::JITTER_RETRIES)?;
        // one draw per row: F = E Lᵀ
        let eps: Vec<f64> = (0..draws * t).map(|_| StandardNormal.sample(rng)).collect();
        let f = tensor::matmul_op(&Tensor::new(vec![draws, t], eps)?, false, &l, true, false)?;
        let abs_means: Vec<f64> = f
            .data()
            .chunks(t)
            .map(|row| {
                row.iter()
                    .zip(mean)
                    .map(|(x, m)| (x + m).abs())
                    .sum::<f64>()
                    / t as f64
            })
            .collect();
        let sd: Vec<f64> = (0..t)
            .map(|i| cov.data()[i * t + i].max(0.0).sqrt())
            .collect();
        let strength = lower_quantile(&abs_means, cfg.level);
        coefficients.push(CoefficientSummary {
            scale: c.scale,
            to: c.to,
            from: c.from,
            masked: !ordering.precedes(c.from, c.to),
            mean: mean.to_vec(),
            lower: mean.iter().zip(&sd).map(|(m, s)| m - z * s).collect(),
            upper: mean.iter().zip(&sd).map(|(m, s)| m + z * s).collect(),
            strength,
        });
        strengths.push(abs_means);
    }
    let edges = decide_edges(
        &problem.coefs,
        &strengths,
        problem.scales,
        cfg.threshold,
        cfg.level,
    )?;
    let lengthscale = problem
        .fixed_lengthscale
        .unwrap_or_else(|| state.step2.lengthscale());
    Ok(Posterior {
        n: problem.n,
        scales: problem.scales,
        t,
        theta: state.step1.theta.data().to_vec(),
        ordering,
        tau_hat: 1.0 / lengthscale,
        lengthscale,
        kernel_variance: state.step2.variance(),
        stationary: state.stationary,
        threshold: cfg.threshold,
        level: cfg.level,
        coefficients,
        edges,
        elbo1: state.elbo1.clone(),
        elbo2: state.elbo2.clone(),
    })
}
