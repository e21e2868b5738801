//! Adjacency and ordering scores plus the random baselines.

use std::collections::BTreeSet;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastic::{pl_sample, uniform_scores, CausalOrdering, Rng};

/// Relation between an unordered node pair `{a, b}` with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairState {
    None,
    Forward,
    Backward,
    Undirected,
}

/// Edges of one scale. Directed edges are `(from, to)`; undirected pairs are
/// stored with the smaller index first.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleGraph {
    pub directed: BTreeSet<(usize, usize)>,
    pub undirected: BTreeSet<(usize, usize)>,
}

impl ScaleGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// From a row-major `N×N` adjacency where entry `[n·N + m]` means `m → n`.
    pub fn from_adjacency(adj: &[bool], n: usize) -> Self {
        let mut g = Self::new();
        for to in 0..n {
            for from in 0..n {
                if from != to && adj[to * n + from] {
                    g.add_directed(from, to);
                }
            }
        }
        g
    }

    /// Adds `from → to`; a reverse edge already present turns the pair undirected.
    pub fn add_directed(&mut self, from: usize, to: usize) {
        if from == to {
            return;
        }
        let key = (from.min(to), from.max(to));
        if self.undirected.contains(&key) {
            return;
        }
        if self.directed.remove(&(to, from)) {
            self.undirected.insert(key);
        } else {
            self.directed.insert((from, to));
        }
    }

    pub fn add_undirected(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        self.directed.remove(&(a, b));
        self.directed.remove(&(b, a));
        self.undirected.insert((a.min(b), a.max(b)));
    }

    pub fn state(&self, a: usize, b: usize) -> PairState {
        let (lo, hi) = (a.min(b), a.max(b));
        if self.undirected.contains(&(lo, hi)) {
            PairState::Undirected
        } else if self.directed.contains(&(lo, hi)) {
            PairState::Forward
        } else if self.directed.contains(&(hi, lo)) {
            PairState::Backward
        } else {
            PairState::None
        }
    }

    pub fn edge_count(&self) -> usize {
        self.directed.len() + self.undirected.len()
    }

    fn max_node(&self) -> usize {
        self.directed
            .iter()
            .chain(&self.undirected)
            .map(|&(a, b)| a.max(b) + 1)
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjacencyCounts {
    pub tp: usize,
    pub fp: usize,
    /// Ground-truth edge count.
    pub p: usize,
    pub directed: usize,
    pub undirected: usize,
    pub shd: usize,
}

impl AdjacencyCounts {
    fn add(&mut self, o: &AdjacencyCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.p += o.p;
        self.directed += o.directed;
        self.undirected += o.undirected;
        self.shd += o.shd;
    }

    pub fn nnz(&self) -> usize {
        self.directed + self.undirected
    }
}

/// Rates derived from [`AdjacencyCounts`]. Ratios by `P` are `None` when the
/// truth has no edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyReport {
    pub counts: AdjacencyCounts,
    pub tpr: Option<f64>,
    pub fdr: f64,
    pub f1: Option<f64>,
    pub shd: Option<f64>,
    pub nnz_over_p: Option<f64>,
    pub fu: f64,
}

impl AdjacencyReport {
    fn from_counts(c: AdjacencyCounts) -> Self {
        let p = c.p as f64;
        let tpr = (c.p > 0).then(|| c.tp as f64 / p);
        let fdr = if c.tp + c.fp > 0 {
            c.fp as f64 / (c.fp + c.tp) as f64
        } else {
            0.0
        };
        let f1 = tpr.map(|r| {
            let precision = 1.0 - fdr;
            if r + precision > 0.0 {
                2.0 * r * precision / (r + precision)
            } else {
                0.0
            }
        });
        Self {
            counts: c,
            tpr,
            fdr,
            f1,
            shd: (c.p > 0).then(|| c.shd as f64 / p),
            nnz_over_p: (c.p > 0).then(|| c.nnz() as f64 / p),
            fu: if c.nnz() > 0 {
                c.undirected as f64 / c.nnz() as f64
            } else {
                0.0
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyScores {
    pub per_scale: Vec<AdjacencyReport>,
    pub aggregate: AdjacencyReport,
}

/// Counts for one scale over nodes `0..n`.
pub fn scale_counts(pred: &ScaleGraph, truth: &ScaleGraph, n: usize) -> AdjacencyCounts {
    let mut c = AdjacencyCounts {
        p: truth.edge_count(),
        directed: pred.directed.len(),
        undirected: pred.undirected.len(),
        ..Default::default()
    };
    for a in 0..n {
        for b in a + 1..n {
            let (ps, ts) = (pred.state(a, b), truth.state(a, b));
            if ps != ts {
                c.shd += 1;
            }
            match (ps, ts) {
                (PairState::None, _) => {}
                (_, PairState::None) => c.fp += 1,
                (PairState::Forward, PairState::Forward)
                | (PairState::Backward, PairState::Backward) => c.tp += 1,
                _ => {}
            }
        }
    }
    c
}

/// Scores per scale and summed over scales. Graph lists of different length
/// are aligned on the larger one, missing scales counting as empty.
pub fn adjacency_scores(
    pred: &[ScaleGraph],
    truth: &[ScaleGraph],
    n: usize,
) -> Result<AdjacencyScores> {
    let nodes = pred
        .iter()
        .chain(truth)
        .map(ScaleGraph::max_node)
        .max()
        .unwrap_or(0);
    if nodes > n {
        return Err(Error::InvalidConfig(format!(
            "edge references node {} of {n}",
            nodes - 1
        )));
    }
    let empty = ScaleGraph::new();
    let scales = pred.len().max(truth.len());
    let mut total = AdjacencyCounts::default();
    let mut per_scale = Vec::with_capacity(scales);
    for j in 0..scales {
        let c = scale_counts(
            pred.get(j).unwrap_or(&empty),
            truth.get(j).unwrap_or(&empty),
            n,
        );
        total.add(&c);
        per_scale.push(AdjacencyReport::from_counts(c));
    }
    if total.p == 0 {
        return Err(Error::DegenerateTruth);
    }
    Ok(AdjacencyScores {
        per_scale,
        aggregate: AdjacencyReport::from_counts(total),
    })
}

fn check_lengths(a: &CausalOrdering, b: &CausalOrdering) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(())
}

/// Kendall rank correlation of two permutations (no ties).
pub fn kendall_tau(a: &CausalOrdering, b: &CausalOrdering) -> Result<f64> {
    check_lengths(a, b)?;
    let n = a.len();
    if n < 2 {
        return Ok(1.0);
    }
    let (mut conc, mut disc) = (0i64, 0i64);
    for u in 0..n {
        for v in u + 1..n {
            if a.precedes(u, v) == b.precedes(u, v) {
                conc += 1;
            } else {
                disc += 1;
            }
        }
    }
    Ok((conc - disc) as f64 / (conc + disc) as f64)
}

/// Spearman correlation `1 − 6 Σ d² / (N(N² − 1))` over node ranks.
pub fn spearman(a: &CausalOrdering, b: &CausalOrdering) -> Result<f64> {
    check_lengths(a, b)?;
    let n = a.len();
    if n < 2 {
        return Ok(1.0);
    }
    let d2: usize = (0..n)
        .map(|v| a.position(v).abs_diff(b.position(v)).pow(2))
        .sum();
    let nf = n as f64;
    Ok(1.0 - 6.0 * d2 as f64 / (nf * (nf * nf - 1.0)))
}

/// Min-max scaled nDCG over the first `k` items of `predicted`, with the
/// truth assigning scores `N, N−1, …, 1` by rank.
pub fn ndcg_at_k(predicted: &CausalOrdering, truth: &CausalOrdering, k: usize) -> Result<f64> {
    check_lengths(predicted, truth)?;
    let n = truth.len();
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!(
            "k must lie in 1..={n}, got {k}"
        )));
    }
    let disc = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let score = |node: usize| (n - truth.position(node)) as f64;
    let dcg: f64 = (0..k).map(|i| score(predicted.order()[i]) * disc(i)).sum();
    let ideal: f64 = (0..k).map(|i| (n - i) as f64 * disc(i)).sum();
    let worst: f64 = (0..k).map(|i| (i + 1) as f64 * disc(i)).sum();
    if ideal - worst <= 0.0 {
        return Ok(1.0);
    }
    Ok((dcg - worst) / (ideal - worst))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    pub kendall_tau: f64,
    pub spearman: f64,
    /// `(k, scaled nDCG@k)` pairs.
    pub ndcg: Vec<(usize, f64)>,
}

impl OrderingReport {
    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ndcg.iter().find(|(kk, _)| *kk == k).map(|(_, v)| *v)
    }
}

pub fn ordering_report(
    predicted: &CausalOrdering,
    truth: &CausalOrdering,
    ks: &[usize],
) -> Result<OrderingReport> {
    let ndcg = ks
        .iter()
        .filter(|&&k| k >= 1 && k <= truth.len())
        .map(|&k| ndcg_at_k(predicted, truth, k).map(|v| (k, v)))
        .collect::<Result<_>>()?;
    Ok(OrderingReport {
        kendall_tau: kendall_tau(predicted, truth)?,
        spearman: spearman(predicted, truth)?,
        ndcg,
    })
}

/// Reports for `draws` orderings from PL(θ̂) and for `draws` baseline
/// orderings, each from PL(θ̄) with fresh scores `θ̄ ~ U(0, N)`.
pub fn ordering_eval(
    theta_hat: &[f64],
    truth: &CausalOrdering,
    draws: usize,
    ks: &[usize],
    rng: &mut Rng,
) -> Result<(Vec<OrderingReport>, Vec<OrderingReport>)> {
    if theta_hat.len() != truth.len() {
        return Err(Error::LengthMismatch(theta_hat.len(), truth.len()));
    }
    let n = truth.len();
    let model = (0..draws)
        .map(|_| ordering_report(&pl_sample(theta_hat, rng), truth, ks))
        .collect::<Result<Vec<_>>>()?;
    let baseline = (0..draws)
        .map(|_| {
            let theta = uniform_scores(n, rng);
            ordering_report(&pl_sample(&theta, rng), truth, ks)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((model, baseline))
}

/// Random-edge baseline: a PL(θ̄) ordering with `θ̄ ~ U(0, N)` and every
/// ordering-compatible edge kept with probability 1/2, per scale.
pub fn random_graph(n: usize, scales: usize, rng: &mut Rng) -> (CausalOrdering, Vec<ScaleGraph>) {
    let theta = uniform_scores(n, rng);
    let ordering = pl_sample(&theta, rng);
    let graphs = (0..scales)
        .map(|_| {
            let mut g = ScaleGraph::new();
            for a in 0..n {
                for b in a + 1..n {
                    if rng.random::<f64>() < 0.5 {
                        g.add_directed(ordering.order()[a], ordering.order()[b]);
                    }
                }
            }
            g
        })
        .collect();
    (ordering, graphs)
}

/// Median of finite values, `None` if there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}
