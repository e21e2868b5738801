use std::fmt;

use rand::distr::{Open01, Uniform};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Rng;
use crate::error::{Error, Result};

/// A permutation of node indices: `order()[i]` is the node at causal rank `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct CausalOrdering {
    order: Vec<usize>,
    position: Vec<usize>,
}

impl CausalOrdering {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        let mut position = vec![usize::MAX; n];
        for (rank, &node) in order.iter().enumerate() {
            if node >= n || position[node] != usize::MAX {
                return Err(Error::InvalidConfig(format!(
                    "{order:?} is not a permutation"
                )));
            }
            position[node] = rank;
        }
        if n == 0 {
            return Err(Error::InvalidConfig("empty ordering".into()));
        }
        Ok(Self { order, position })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            position: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Rank of `node` in the ordering.
    pub fn position(&self, node: usize) -> usize {
        self.position[node]
    }

    pub fn positions(&self) -> &[usize] {
        &self.position
    }

    /// `true` when `a` is ranked strictly before `b`.
    pub fn precedes(&self, a: usize, b: usize) -> bool {
        self.position[a] < self.position[b]
    }

    pub fn reversed(&self) -> Self {
        let mut order = self.order.clone();
        order.reverse();
        Self::new(order).expect("reversal of a permutation")
    }
}

impl TryFrom<Vec<usize>> for CausalOrdering {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CausalOrdering> for Vec<usize> {
    fn from(o: CausalOrdering) -> Self {
        o.order
    }
}

impl fmt::Display for CausalOrdering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.order.iter().map(|n| n.to_string()).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

fn argsort_desc(z: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..z.len()).collect();
    // stable: ties keep the lower index first
    idx.sort_by(|&a, &b| z[b].total_cmp(&z[a]));
    idx
}

/// Gumbel-perturbed argsort: `z_i = θ_i − ln(−ln v_i)`.
pub fn pl_sample(theta: &[f64], rng: &mut Rng) -> CausalOrdering {
    let z: Vec<f64> = theta
        .iter()
        .map(|&t| {
            let v: f64 = rng.sample(Open01);
            t - (-v.ln()).ln()
        })
        .collect();
    CausalOrdering::new(argsort_desc(&z)).expect("argsort is a permutation")
}

/// Mode of PL(θ): scores sorted descending, ties by lower index.
pub fn pl_mode(theta: &[f64]) -> CausalOrdering {
    CausalOrdering::new(argsort_desc(theta)).expect("argsort is a permutation")
}

fn suffix_terms(theta: &[f64], ordering: &CausalOrdering) -> (Vec<f64>, Vec<f64>, f64) {
    let shift = theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = ordering
        .order()
        .iter()
        .map(|&b| (theta[b] - shift).exp())
        .collect();
    let mut suffix = vec![0.0; e.len()];
    let mut acc = 0.0;
    for i in (0..e.len()).rev() {
        acc += e[i];
        suffix[i] = acc;
    }
    (e, suffix, shift)
}

/// `ln p(b | θ) = Σ_i θ_{b_i} − ln Σ_{u≥i} e^{θ_{b_u}}`.
pub fn pl_log_prob(theta: &[f64], ordering: &CausalOrdering) -> f64 {
    assert_eq!(
        theta.len(),
        ordering.len(),
        "score and ordering lengths differ"
    );
    let (_, suffix, shift) = suffix_terms(theta, ordering);
    ordering
        .order()
        .iter()
        .zip(&suffix)
        .map(|(&b, s)| theta[b] - shift - s.ln())
        .sum()
}

/// Gradient of [`pl_log_prob`] with respect to θ.
pub fn pl_log_prob_grad(theta: &[f64], ordering: &CausalOrdering) -> Vec<f64> {
    let (e, suffix, _) = suffix_terms(theta, ordering);
    let order = ordering.order();
    let mut g = vec![0.0; theta.len()];
    // node at rank r appears in the denominators of ranks 0..=r
    let mut inv_cum = 0.0;
    for r in 0..order.len() {
        inv_cum += 1.0 / suffix[r];
        g[order[r]] = 1.0 - e[r] * inv_cum;
    }
    g
}

/// Baseline scores `θ̄_i ~ U(0, N)`.
pub fn uniform_scores(n: usize, rng: &mut Rng) -> Vec<f64> {
    let u = Uniform::new(0.0, n as f64).expect("valid range");
    (0..n).map(|_| rng.sample(u)).collect()
}
