use mndag_core::mndag::{mixing, permutation_matrix, sample_scales, GenConfig, MnDag};
use mndag_core::stochastic::stream;
use mndag_core::synth::{autocovariance, generate};
use mndag_core::{Family, Tensor, WaveletSystem};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng as _;

/// Solves `(I − C) M = I` by LU with partial pivoting.
fn gaussian_inverse(c: &[f64], n: usize) -> Vec<f64> {
    let a = DMatrix::identity(n, n) - DMatrix::from_row_slice(n, n, c);
    let inv = a
        .lu()
        .try_inverse()
        .expect("I − C is unit triangular up to permutation");
    (0..n * n).map(|k| inv[(k / n, k % n)]).collect()
}

#[test]
fn power_sum_inverse_matches_elimination() {
    let mut rng = stream(7, "nilpotent");
    let mut slices = 0;
    let mut cfg_seed = 0;
    while slices < 1000 {
        let n = rng.random_range(2..=8);
        let mu = rng.random::<f64>();
        let tau = rng.random::<f64>();
        let delta = rng.random_range(0.2..=1.0);
        let dag = MnDag::sample(&GenConfig::new(n, 8, mu, tau, delta, cfg_seed)).unwrap();
        cfg_seed += 1;
        for (c, m) in dag
            .causal
            .data()
            .chunks(n * n)
            .zip(dag.mixing.data().chunks(n * n))
        {
            let g = gaussian_inverse(c, n);
            let m2 = mixing(c, n).unwrap();
            for k in 0..n * n {
                assert!(
                    (m[k] - g[k]).abs() <= 1e-10,
                    "slice {slices}: {} vs {}",
                    m[k],
                    g[k]
                );
                assert_eq!(m[k], m2[k]);
            }
            slices += 1;
        }
    }
}

#[test]
fn non_nilpotent_input_is_rejected() {
    assert!(mixing(&[0.0, 1.0, 1.0, 0.0], 2).is_err());
}

#[test]
fn ma1_autocovariance() {
    let t = 1 << 14;
    let system = WaveletSystem::new(Family::Haar, 1).unwrap();
    let m = Tensor::full(&[1, t, 1, 1], 1.0);
    let x = generate(&m, &system, &mut stream(5, "ma1")).unwrap();
    let expect = [1.0, -0.5, 0.0, 0.0];
    for (lag, e) in expect.iter().enumerate() {
        let c = autocovariance(x.data(), lag);
        assert!((c - e).abs() <= 0.05, "lag {lag}: {c}");
    }
}

#[test]
fn scale_count_law() {
    // J − 1 ~ Bin(⌊log₂ T⌋ − 1, μ): T = 128 gives six trials
    let mut rng = stream(3, "scales");
    let draws = 20_000;
    let mean: f64 = (0..draws)
        .map(|_| sample_scales(128, 0.5, &mut rng) as f64)
        .sum::<f64>()
        / draws as f64;
    assert!((mean - 4.0).abs() < 0.05, "{mean}");
    assert!((0..100).all(|_| sample_scales(128, 0.0, &mut rng) == 1));
    assert!((0..100).all(|_| sample_scales(128, 1.0, &mut rng) == 7));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn causal_tensor_is_certified_acyclic(
        n in 2usize..7, t in 2usize..20, mu in 0.0f64..=1.0, tau in 0.0f64..=1.0, delta in 0.0f64..=1.0, seed in any::<u64>()
    ) {
        let dag = MnDag::sample(&GenConfig::new(n, t, mu, tau, delta, seed)).unwrap();
        prop_assert_eq!(dag.causal.shape(), &[dag.scales, t, n, n]);
        // Pᵀ C P is strictly lower triangular on every slice
        let p = permutation_matrix(&dag.ordering);
        for c in dag.causal.data().chunks(n * n) {
            for a in 0..n {
                for b in a..n {
                    let v: f64 = (0..n)
                        .flat_map(|r| (0..n).map(move |s| (r, s)))
                        .map(|(r, s)| p.at(&[r, a]) * c[r * n + s] * p.at(&[s, b]))
                        .sum();
                    prop_assert_eq!(v, 0.0);
                }
            }
        }
        // edges exist only where the mask allows them, at every time point
        let adj = dag.adjacency();
        for (j, a) in adj.iter().enumerate() {
            for tt in 0..t {
                for k in 0..n * n {
                    if !a[k] {
                        prop_assert_eq!(dag.causal.at(&[j, tt, k / n, k % n]), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn sampling_is_deterministic(seed in any::<u64>()) {
        let cfg = GenConfig::new(4, 16, 0.5, 0.5, 0.5, seed);
        prop_assert_eq!(MnDag::sample(&cfg).unwrap(), MnDag::sample(&cfg).unwrap());
    }

    #[test]
    fn stationary_configs_are_constant_in_time(seed in any::<u64>()) {
        let dag = MnDag::sample(&GenConfig::new(4, 16, 0.0, 0.0, 0.7, seed)).unwrap();
        prop_assert_eq!(dag.scales, 1);
        let first = &dag.causal.data()[..16];
        for c in dag.causal.data().chunks(16) {
            prop_assert_eq!(c, first);
        }
    }
}
