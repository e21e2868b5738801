use mndag_core::metrics::{
    adjacency_scores, kendall_tau, ndcg_at_k, scale_counts, spearman, ScaleGraph,
};
use mndag_core::CausalOrdering;
use proptest::prelude::*;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn ordering(n: usize) -> impl Strategy<Value = CausalOrdering> {
    Just((0..n).collect::<Vec<_>>())
        .prop_shuffle()
        .prop_map(|v| CausalOrdering::new(v).unwrap())
}

fn two_orderings() -> impl Strategy<Value = (CausalOrdering, CausalOrdering)> {
    (1usize..=5).prop_flat_map(|n| (ordering(n), ordering(n)))
}

/// Kendall's τ from rank vectors: sign agreement over all unordered index pairs.
fn kendall_oracle(a: &CausalOrdering, b: &CausalOrdering) -> f64 {
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let (ra, rb) = (a.positions(), b.positions());
    let mut s = 0i64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let sa = (ra[i] as i64 - ra[j] as i64).signum();
                let sb = (rb[i] as i64 - rb[j] as i64).signum();
                s += sa * sb;
            }
        }
    }
    s as f64 / (n * (n - 1)) as f64
}

/// Pearson correlation of the rank vectors.
fn spearman_oracle(a: &CausalOrdering, b: &CausalOrdering) -> f64 {
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let ra: Vec<f64> = a.positions().iter().map(|&v| v as f64).collect();
    let rb: Vec<f64> = b.positions().iter().map(|&v| v as f64).collect();
    let (ma, mb) = (
        ra.iter().sum::<f64>() / n as f64,
        rb.iter().sum::<f64>() / n as f64,
    );
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn dcg(pred: &[usize], truth: &CausalOrdering, k: usize) -> f64 {
    let n = truth.len();
    (0..k)
        .map(|i| (n - truth.position(pred[i])) as f64 / ((i + 2) as f64).log2())
        .sum()
}

/// Min-max scaled DCG with the extremes found by enumerating every ordering.
fn ndcg_oracle(pred: &CausalOrdering, truth: &CausalOrdering, k: usize) -> f64 {
    let all: Vec<f64> = permutations(truth.len())
        .iter()
        .map(|p| dcg(p, truth, k))
        .collect();
    let max = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = all.iter().cloned().fold(f64::INFINITY, f64::min);
    if max - min <= 0.0 {
        return 1.0;
    }
    (dcg(pred.order(), truth, k) - min) / (max - min)
}

/// Dense `[to][from]` adjacency with undirected pairs set both ways.
fn dense(g: &ScaleGraph, n: usize) -> Vec<Vec<bool>> {
    let mut a = vec![vec![false; n]; n];
    for &(f, t) in &g.directed {
        a[t][f] = true;
    }
    for &(x, y) in &g.undirected {
        a[x][y] = true;
        a[y][x] = true;
    }
    a
}

/// Pairwise edits, TP and FP straight from dense matrices.
fn adjacency_oracle(pred: &ScaleGraph, truth: &ScaleGraph, n: usize) -> (usize, usize, usize) {
    let (p, t) = (dense(pred, n), dense(truth, n));
    let (mut shd, mut tp, mut fp) = (0, 0, 0);
    for a in 0..n {
        for b in a + 1..n {
            let ps = (p[b][a], p[a][b]);
            let ts = (t[b][a], t[a][b]);
            if ps != ts {
                shd += 1;
            }
            let p_any = ps.0 || ps.1;
            let t_any = ts.0 || ts.1;
            let p_dir = ps.0 != ps.1;
            if p_any && !t_any {
                fp += 1;
            }
            if p_dir && ps == ts {
                tp += 1;
            }
        }
    }
    (shd, tp, fp)
}

fn graph(n: usize) -> impl Strategy<Value = ScaleGraph> {
    prop::collection::vec(0u8..4, n * (n - 1) / 2).prop_map(move |states| {
        let mut g = ScaleGraph::new();
        let mut k = 0;
        for a in 0..n {
            for b in a + 1..n {
                match states[k] {
                    1 => g.add_directed(a, b),
                    2 => g.add_directed(b, a),
                    3 => g.add_undirected(a, b),
                    _ => {}
                }
                k += 1;
            }
        }
        g
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn kendall_matches_enumeration((a, b) in two_orderings()) {
        prop_assert!((kendall_tau(&a, &b).unwrap() - kendall_oracle(&a, &b)).abs() < 1e-12);
        prop_assert!((kendall_tau(&a, &b).unwrap() - kendall_tau(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn spearman_matches_pearson_on_ranks((a, b) in two_orderings()) {
        prop_assert!((spearman(&a, &b).unwrap() - spearman_oracle(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn ndcg_matches_enumeration((a, b) in two_orderings(), k in 1usize..=5) {
        let k = k.min(a.len());
        let got = ndcg_at_k(&a, &b, k).unwrap();
        prop_assert!((got - ndcg_oracle(&a, &b, k)).abs() < 1e-12);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&got));
    }

    #[test]
    fn adjacency_counts_match_dense_oracle(
        (n, p, t) in (2usize..=5).prop_flat_map(|n| (Just(n), graph(n), graph(n)))
    ) {
        let c = scale_counts(&p, &t, n);
        let (shd, tp, fp) = adjacency_oracle(&p, &t, n);
        prop_assert_eq!((c.shd, c.tp, c.fp), (shd, tp, fp));
        prop_assert_eq!(c.p, t.edge_count());
        if c.p > 0 {
            let s = adjacency_scores(&[p.clone()], &[t.clone()], n).unwrap().aggregate;
            prop_assert!((s.shd.unwrap() - shd as f64 / c.p as f64).abs() < 1e-12);
            prop_assert!((s.tpr.unwrap() - tp as f64 / c.p as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn known_values() {
    let id = CausalOrdering::identity(5);
    let rev = id.reversed();
    assert_eq!(kendall_tau(&id, &rev).unwrap(), -1.0);
    assert_eq!(spearman(&id, &rev).unwrap(), -1.0);
    assert_eq!(ndcg_at_k(&id, &id, 5).unwrap(), 1.0);
    assert_eq!(ndcg_at_k(&rev, &id, 5).unwrap(), 0.0);
    // one adjacent swap: 9 concordant, 1 discordant
    let swap = CausalOrdering::new(vec![1, 0, 2, 3, 4]).unwrap();
    assert!((kendall_tau(&swap, &id).unwrap() - 0.8).abs() < 1e-15);
    assert!((spearman(&swap, &id).unwrap() - 0.9).abs() < 1e-15);
}

#[test]
fn degenerate_truth_is_reported() {
    let g = ScaleGraph::new();
    assert!(adjacency_scores(&[g.clone()], &[g], 3).is_err());
}
