//! Sampling of multiscale non-stationary DAGs and the causal, permutation
//! and mixing tensor algebra shared with inference.
//!
//! All `J×T×N×N` tensors are row-major with index `[j, t, n, m]`; a nonzero
//! `C[j, t, n, m]` is an edge `m → n` (`X_n` depends on `X_m`).

use rand::Rng as _;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastic::{
    gp_sample_batched, pl_sample, stream, uniform_scores, CausalOrdering, Kernel, Rng, TimeAxis,
};
use crate::tensor::{small, Tensor};

/// Tolerance for the nilpotency residual `‖Cᴺ‖_max`.
pub const NILPOTENT_TOL: f64 = 1e-10;

/// Variance of the default benchmark kernel.
pub const DEFAULT_KERNEL_VARIANCE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n: usize,
    pub t: usize,
    pub mu: f64,
    pub tau: f64,
    pub delta: f64,
    pub kernel: Kernel,
    pub seed: u64,
    pub axis_scale: f64,
}

impl GenConfig {
    /// Config with the default kernel `rbf(0.1, 1/τ)`.
    pub fn new(n: usize, t: usize, mu: f64, tau: f64, delta: f64, seed: u64) -> Self {
        Self {
            n,
            t,
            mu,
            tau,
            delta,
            kernel: Self::default_kernel(tau),
            seed,
            axis_scale: TimeAxis::default().scale,
        }
    }

    pub fn default_kernel(tau: f64) -> Kernel {
        Kernel::rbf(DEFAULT_KERNEL_VARIANCE, 1.0 / tau)
    }

    /// Any `T ≥ 2` is accepted for generation; spectral estimation
    /// separately requires a power of two.
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!(
                    "{name} must lie in [0, 1], got {v}"
                )))
            }
        };
        unit("mu", self.mu)?;
        unit("tau", self.tau)?;
        unit("delta", self.delta)?;
        if self.n < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 nodes, got {}",
                self.n
            )));
        }
        if self.t < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 samples, got {}",
                self.t
            )));
        }
        if !(self.axis_scale > 0.0) {
            return Err(Error::InvalidConfig("axis scale must be positive".into()));
        }
        self.kernel.validate()
    }
}

/// `J = 1 + Bin(⌊log₂ T⌋ − 1, μ)`.
pub fn sample_scales(t: usize, mu: f64, rng: &mut Rng) -> usize {
    let trials = (usize::BITS - 1 - t.leading_zeros()) as u64 - 1;
    if trials == 0 || mu == 0.0 {
        return 1;
    }
    let b = Binomial::new(trials, mu).expect("valid binomial");
    1 + b.sample(rng) as usize
}

/// The three weight components in position space, each `J×T×N×N`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    pub base: Tensor,
    pub scale: Tensor,
    pub temporal: Tensor,
    pub tau: f64,
}

impl WeightTensor {
    /// `W = W⁰ + Wᵘ + τ·Wᵗ`.
    pub fn total(&self) -> Tensor {
        let mut w = self.base.clone();
        for ((o, s), g) in w
            .data_mut()
            .iter_mut()
            .zip(self.scale.data())
            .zip(self.temporal.data())
        {
            *o += s + self.tau * g;
        }
        w
    }
}

#[allow(clippy::too_many_arguments)]
pub fn sample_weights(
    j: usize,
    t: usize,
    n: usize,
    mu: f64,
    tau: f64,
    kernel: &Kernel,
    axis: TimeAxis,
    rng: &mut Rng,
) -> Result<WeightTensor> {
    let nn = n * n;
    let w0: Vec<f64> = (0..nn).map(|_| StandardNormal.sample(rng)).collect();
    let wmu: Vec<f64> = if mu == 0.0 {
        vec![0.0; j * nn]
    } else {
        let sd = mu.sqrt();
        (0..j * nn)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            })
            .collect()
    };
    let shape = [j, t, n, n];
    let base = Tensor::from_fn(&shape, |i| w0[i[2] * n + i[3]]);
    let scale = Tensor::from_fn(&shape, |i| wmu[i[0] * nn + i[2] * n + i[3]]);
    let temporal = if tau == 0.0 {
        Tensor::zeros(&shape)
    } else {
        let paths = gp_sample_batched(kernel, &axis.points(t), j * nn, rng)?;
        // tube (j, n, m) is row j·N² + n·N + m
        Tensor::from_fn(&shape, |i| paths.at(&[i[0] * nn + i[2] * n + i[3], i[1]]))
    };
    Ok(WeightTensor {
        base,
        scale,
        temporal,
        tau,
    })
}

/// Per-scale Bernoulli(δ) mask `[J, N, N]`, strictly lower triangular in
/// position space.
pub fn sample_mask(j: usize, n: usize, delta: f64, rng: &mut Rng) -> Tensor {
    let mut mask = Tensor::zeros(&[j, n, n]);
    for s in 0..j {
        for a in 0..n {
            for b in 0..a {
                if rng.random::<f64>() < delta {
                    mask.set(&[s, a, b], 1.0);
                }
            }
        }
    }
    mask
}

/// `P[n, k] = 1` iff node `n` sits at position `k`.
pub fn permutation_matrix(ordering: &CausalOrdering) -> Tensor {
    let n = ordering.len();
    Tensor::from_fn(&[n, n], |i| {
        if ordering.position(i[0]) == i[1] {
            1.0
        } else {
            0.0
        }
    })
}

/// Permutation matrix tiled to `J×T×N×N`.
pub fn permutation_tensor(ordering: &CausalOrdering, j: usize, t: usize) -> Tensor {
    let p = permutation_matrix(ordering);
    let n = ordering.len();
    Tensor::from_fn(&[j, t, n, n], |i| p.at(&[i[2], i[3]]))
}

/// `C = P (Π ∘ W) Pᵀ`, i.e. `C[j,t,n,m] = Π[j, pos n, pos m] · W[j, t, pos n, pos m]`.
/// `weights` is `J×T×N×N` and `mask` is `J×N×N`, both in position space.
pub fn assemble_causal(
    weights: &Tensor,
    mask: &Tensor,
    ordering: &CausalOrdering,
) -> Result<Tensor> {
    let (j, t, n) = field_dims(weights)?;
    if mask.shape() != [j, n, n] || ordering.len() != n {
        return Err(Error::ShapeMismatch {
            op: "assemble_causal",
            lhs: weights.shape().to_vec(),
            rhs: mask.shape().to_vec(),
        });
    }
    for s in 0..j {
        for a in 0..n {
            for b in a..n {
                if mask.at(&[s, a, b]) != 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "mask entry ({s}, {a}, {b}) is not strictly lower triangular"
                    )));
                }
            }
        }
    }
    let pos = ordering.positions();
    Ok(Tensor::from_fn(&[j, t, n, n], |i| {
        let (a, b) = (pos[i[2]], pos[i[3]]);
        mask.at(&[i[0], a, b]) * weights.at(&[i[0], i[1], a, b])
    }))
}

pub(crate) fn field_dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [j, t, n, m] if n == m => Ok((*j, *t, *n)),
        s => Err(Error::ShapeMismatch {
            op: "field",
            lhs: s.to_vec(),
            rhs: vec![],
        }),
    }
}

/// `(I − C)⁻¹ = Σ_{k<N} Cᵏ` for a nilpotent `N×N` matrix.
pub fn mixing(c: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut m = small::identity(n);
    let mut power = small::identity(n);
    for _ in 1..n {
        power = small::matmul(&power, c, n);
        for (a, p) in m.iter_mut().zip(&power) {
            *a += p;
        }
    }
    let residual = small::max_abs(&small::matmul(&power, c, n));
    if residual > NILPOTENT_TOL {
        return Err(Error::NotNilpotent(residual));
    }
    Ok(m)
}

/// Slice-wise [`mixing`] over a `J×T×N×N` causal tensor.
pub fn mixing_tensor(c: &Tensor) -> Result<Tensor> {
    let (j, t, n) = field_dims(c)?;
    let nn = n * n;
    let mut out = Vec::with_capacity(c.len());
    for slice in c.data().chunks(nn) {
        out.extend(mixing(slice, n)?);
    }
    Tensor::new(vec![j, t, n, n], out)
}

/// `S = M Mᵀ` per slice.
pub fn spectrum_from_mixing(m: &Tensor) -> Result<Tensor> {
    let (j, t, n) = field_dims(m)?;
    let mut out = Vec::with_capacity(m.len());
    for slice in m.data().chunks(n * n) {
        out.extend(small::gram(slice, n));
    }
    Tensor::new(vec![j, t, n, n], out)
}

/// A sampled MN-DAG with all intermediate tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct MnDag {
    pub config: GenConfig,
    pub scales: usize,
    pub theta: Vec<f64>,
    pub ordering: CausalOrdering,
    pub mask: Tensor,
    pub weights: WeightTensor,
    pub causal: Tensor,
    pub mixing: Tensor,
}

impl MnDag {
    /// Draws every component from the `"mndag"` stream of `config.seed`.
    pub fn sample(config: &GenConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(config.seed, "mndag");
        let (n, t) = (config.n, config.t);
        let scales = sample_scales(t, config.mu, &mut rng);
        let theta = uniform_scores(n, &mut rng);
        let ordering = pl_sample(&theta, &mut rng);
        let mask = sample_mask(scales, n, config.delta, &mut rng);
        let weights = sample_weights(
            scales,
            t,
            n,
            config.mu,
            config.tau,
            &config.kernel,
            TimeAxis::new(config.axis_scale),
            &mut rng,
        )?;
        let causal = assemble_causal(&weights.total(), &mask, &ordering)?;
        let mixing = mixing_tensor(&causal)?;
        Ok(Self {
            config: config.clone(),
            scales,
            theta,
            ordering,
            mask,
            weights,
            causal,
            mixing,
        })
    }

    pub fn spectrum(&self) -> Tensor {
        spectrum_from_mixing(&self.mixing).expect("mixing tensor has field shape")
    }

    /// Per-scale adjacency `[j][n·N + m]`: edge `m → n` allowed by the mask.
    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        let n = self.config.n;
        let pos = self.ordering.positions();
        (0..self.scales)
            .map(|j| {
                (0..n * n)
                    .map(|i| self.mask.at(&[j, pos[i / n], pos[i % n]]) != 0.0)
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scale_counts() {
        let mut rng = stream(0, "j");
        assert!((0..200).all(|_| sample_scales(512, 0.0, &mut rng) == 1));
        assert!((0..200).all(|_| sample_scales(512, 1.0, &mut rng) == 9));
        assert!((0..200).all(|_| (1..=6).contains(&sample_scales(100, 0.5, &mut rng))));
        assert_eq!(sample_scales(2, 1.0, &mut rng), 1);
    }

    #[test]
    fn two_node_mixing_and_spectrum() {
        let m = mixing(&[0.0, 0.0, 0.5, 0.0], 2).unwrap();
        assert_eq!(m, vec![1.0, 0.0, 0.5, 1.0]);
        let s = small::gram(&m, 2);
        assert_eq!(s, vec![1.0, 0.5, 0.5, 1.25]);
        assert_eq!(mixing(&[0.0; 9], 3).unwrap(), small::identity(3));
    }

    #[test]
    fn cyclic_matrix_is_rejected() {
        assert!(matches!(
            mixing(&[0.0, 1.0, 1.0, 0.0], 2),
            Err(Error::NotNilpotent(_))
        ));
    }

    #[test]
    fn empty_mask_gives_empty_graph() {
        let cfg = GenConfig::new(4, 64, 0.5, 0.5, 0.0, 11);
        let g = MnDag::sample(&cfg).unwrap();
        assert!(g.causal.data().iter().all(|&c| c == 0.0));
        assert!(g.adjacency().iter().flatten().all(|e| !e));
    }

    #[test]
    fn full_mask_two_nodes_identity_order() {
        let w = Tensor::from_fn(&[1, 3, 2, 2], |i| 1.0 + i[1] as f64);
        let mut mask = Tensor::zeros(&[1, 2, 2]);
        mask.set(&[0, 1, 0], 1.0);
        let c = assemble_causal(&w, &mask, &CausalOrdering::identity(2)).unwrap();
        for t in 0..3 {
            assert_eq!(c.at(&[0, t, 1, 0]), 1.0 + t as f64);
            assert_eq!(c.at(&[0, t, 0, 1]), 0.0);
            assert_eq!(c.at(&[0, t, 0, 0]), 0.0);
        }
        let c = assemble_causal(&w, &mask, &CausalOrdering::new(vec![1, 0]).unwrap()).unwrap();
        assert_eq!(c.at(&[0, 0, 0, 1]), 1.0);
        assert_eq!(c.at(&[0, 0, 1, 0]), 0.0);
    }

    #[test]
    fn stationary_weights_when_tau_and_mu_vanish() {
        let cfg = GenConfig::new(3, 32, 0.0, 0.0, 1.0, 5);
        let g = MnDag::sample(&cfg).unwrap();
        let w = g.weights.total();
        assert!(g.weights.temporal.data().iter().all(|&x| x == 0.0));
        for t in 0..32 {
            for i in 0..9 {
                assert_eq!(w.data()[t * 9 + i], w.data()[i]);
            }
        }
    }

    #[test]
    fn permutation_slices() {
        let o = CausalOrdering::new(vec![2, 0, 1]).unwrap();
        let p = permutation_tensor(&o, 2, 3);
        for s in p.data().chunks(9) {
            let pt = small::matmul(s, &small::identity(3), 3);
            let g = small::gram(&pt, 3);
            assert_eq!(g, small::identity(3));
        }
        let pm = permutation_matrix(&o);
        assert_eq!(pm.at(&[2, 0]), 1.0);
    }

    #[test]
    fn sampled_spectrum_is_gram_of_mixing() {
        let cfg = GenConfig::new(3, 16, 1.0, 0.9, 1.0, 2);
        let g = MnDag::sample(&cfg).unwrap();
        let s = g.spectrum();
        for (slice, m) in s.data().chunks(9).zip(g.mixing.data().chunks(9)) {
            for a in 0..3 {
                for b in 0..3 {
                    let e: f64 = (0..3).map(|k| m[a * 3 + k] * m[b * 3 + k]).sum();
                    assert_relative_eq!(slice[a * 3 + b], e, epsilon = 1e-12);
                }
            }
        }
    }
}
