use mndag_core::castle::step1::{self, reinforce_terms, Step1Params};
use mndag_core::castle::step2::{self, Step2Params, Step2Problem};
use mndag_core::castle::{decide_edges, CoefIndex};
use mndag_core::gradcheck::MicroInstance;
use mndag_core::mndag::{spectrum_from_mixing, GenConfig, MnDag};
use mndag_core::stochastic::{pl_log_prob, pl_log_prob_grad, pl_sample, stream};
use mndag_core::synth::simulate;
use mndag_core::{train, Castle, CausalOrdering, InferConfig, Tensor};
use rand_distr::{Distribution, StandardNormal};

fn quick(iterations: usize, seed: u64) -> InferConfig {
    InferConfig {
        iterations,
        particles: 4,
        posterior_samples: 200,
        seed,
        ..InferConfig::default()
    }
}

fn noise(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = stream(seed, "test-noise");
    Tensor::from_fn(shape, |_| StandardNormal.sample(&mut rng))
}

/// Two series with a constant edge `0 → 1` of strength `c`, and its exact spectrum.
fn chain(c: f64, t: usize, seed: u64) -> (Tensor, Tensor) {
    let z = noise(&[2, t], seed);
    let x = Tensor::from_fn(&[2, t], |i| {
        if i[0] == 0 {
            z.at(&[0, i[1]])
        } else {
            z.at(&[1, i[1]]) + c * z.at(&[0, i[1]])
        }
    });
    let m = Tensor::from_fn(&[1, t, 2, 2], |i| match (i[2], i[3]) {
        (0, 0) | (1, 1) => 1.0,
        (1, 0) => c,
        _ => 0.0,
    });
    (x, spectrum_from_mixing(&m).unwrap())
}

#[test]
fn kl_vanishes_at_the_prior() {
    let p = Step2Params::init(6, vec![0.0, 1.0, 2.0], 0.3, 1.0, 1.0);
    assert!(p.kl().abs() < 1e-12);
    let mut q = p.clone();
    q.mean.data_mut()[0] = 0.5;
    assert!((q.kl() - 0.125).abs() < 1e-12);
    assert!(Step1Params::init(3, 1.0).kl().abs() < 1e-12);
}

#[test]
fn parameter_tally() {
    let (x, s) = chain(0.8, 16, 0);
    let cfg = InferConfig {
        inducing_fraction: 0.5,
        ..quick(1, 0)
    };
    let state = Castle::new(&x, &s, &cfg).unwrap();
    // N + B(1 + T̃ + T̃(T̃+1)/2) + 2 + T̃ with B = 2, T̃ = 8
    assert_eq!(state.parameter_count(), 2 + 2 * (1 + 8 + 36) + 2 + 8);
}

#[test]
fn masked_coefficients_get_no_gradient() {
    let inst = MicroInstance::new(&mut stream(1, "mask")).unwrap();
    let active = inst.problem.active(&inst.ordering);
    let (_, grads) = inst.elbo(&inst.inputs()).unwrap();
    let ti = MicroInstance::INDUCING;
    for bi in 0..inst.problem.coef_count() {
        let on = active.contains(&bi);
        let g_mean = &grads[1].data()[bi * ti..(bi + 1) * ti];
        assert_eq!(g_mean.iter().any(|v| *v != 0.0), on, "coefficient {bi}");
        assert_eq!(grads[0].data()[bi] != 0.0, on, "coefficient {bi}");
    }
    // and the sampled causal slices are zero where the ordering forbids an edge
    let g = step2::build(&inst.problem, &inst.params, &inst.ordering, &inst.eps).unwrap();
    let c = g.tape.value(g.causal);
    for slice in c.data().chunks(4) {
        assert_eq!(slice[1], 0.0);
        assert_eq!(slice[0], 0.0);
        assert_eq!(slice[3], 0.0);
    }
}

#[test]
fn first_baseline_is_the_step_mean() {
    let (x, _) = chain(0.8, 32, 2);
    let params = Step1Params::init(2, 0.3);
    let a = step1::estimate(&x, &params, 8, None, &mut stream(3, "s1")).unwrap();
    let b = step1::estimate(&x, &params, 8, Some(a.signal), &mut stream(3, "s1")).unwrap();
    assert_eq!(a.grads, b.grads);
}

#[test]
fn reinforce_is_unbiased() {
    let theta = [0.4, -0.3, 0.9];
    let f = |o: &CausalOrdering| {
        o.order()
            .iter()
            .enumerate()
            .map(|(i, &v)| (i * v) as f64)
            .sum::<f64>()
    };
    // exact ∇ E[f] by enumeration
    let perms = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut exact = [0.0; 3];
    for p in perms {
        let o = CausalOrdering::new(p.to_vec()).unwrap();
        let w = pl_log_prob(&theta, &o).exp() * f(&o);
        for (e, g) in exact.iter_mut().zip(pl_log_prob_grad(&theta, &o)) {
            *e += w * g;
        }
    }
    let mut rng = stream(9, "reinforce");
    let draws = 200_000;
    let orderings: Vec<CausalOrdering> = (0..draws).map(|_| pl_sample(&theta, &mut rng)).collect();
    let values: Vec<f64> = orderings.iter().map(f).collect();
    for baseline in [0.0, 2.5] {
        let terms = reinforce_terms(&theta, &orderings, &values, baseline);
        for i in 0..3 {
            let mean = terms.iter().map(|t| t[i]).sum::<f64>() / draws as f64;
            assert!(
                (mean - exact[i]).abs() < 0.02,
                "baseline {baseline}, θ{i}: {mean} vs {}",
                exact[i]
            );
        }
    }
}

#[test]
fn training_replays_exactly() {
    let (x, s) = chain(0.8, 16, 4);
    let a = train(&x, &s, &quick(5, 7)).unwrap();
    let b = train(&x, &s, &quick(5, 7)).unwrap();
    assert_eq!(a, b);
    let c = train(&x, &s, &quick(5, 8)).unwrap();
    assert_ne!(a.elbo1, c.elbo1);
}

#[test]
fn step1_orders_a_strong_pair() {
    let (x, s) = chain(2.0, 64, 5);
    let post = train(&x, &s, &quick(150, 0)).unwrap();
    assert_eq!(post.ordering.order(), &[0, 1]);
    assert!(post.theta[0] > post.theta[1]);
}

#[test]
fn strong_pair_ordering_over_twenty_seeds() {
    let right = (0..20)
        .filter(|&seed| {
            let (x, s) = chain(2.0, 200, 100 + seed);
            let cfg = InferConfig {
                seed,
                ..InferConfig::default()
            };
            train(&x, &s, &cfg).unwrap().ordering.order() == [0, 1]
        })
        .count();
    assert!(right >= 18, "ordered {right}/20");
}

#[test]
fn true_spectrum_is_tracked_within_the_band() {
    let dag = (0..)
        .map(|seed| MnDag::sample(&GenConfig::new(3, 64, 0.5, 0.5, 0.5, seed)).unwrap())
        .find(|d| d.scales == 2)
        .unwrap();
    let (_, x) = simulate(&dag.config).unwrap();
    let post = train(
        &x,
        &dag.spectrum(),
        &InferConfig {
            seed: 1,
            ..InferConfig::default()
        },
    )
    .unwrap();
    let (mut inside, mut cells) = (0, 0);
    for c in &post.coefficients {
        for t in 0..64 {
            let truth = dag.causal.at(&[c.scale, t, c.to, c.from]);
            cells += 1;
            if c.lower[t] - 1e-9 <= truth && truth <= c.upper[t] + 1e-9 {
                inside += 1;
            }
        }
    }
    assert_eq!(cells, 2 * 6 * 64);
    assert!(
        inside as f64 >= 0.8 * cells as f64,
        "{inside}/{cells} cells inside the band"
    );
}

#[test]
fn independent_series_give_no_edges() {
    let t = 32;
    let x = noise(&[3, t], 6);
    let s = Tensor::from_fn(&[1, t, 3, 3], |i| if i[2] == i[3] { 1.0 } else { 0.0 });
    let post = train(&x, &s, &quick(100, 0)).unwrap();
    assert_eq!(
        post.directed_edges() + post.undirected_edges(),
        0,
        "{:?}",
        post.edges
    );
    assert!(post.stationary);
    let largest = post
        .coefficients
        .iter()
        .flat_map(|c| c.mean.iter())
        .fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(largest < 0.1, "largest |mean| {largest}");
}

#[test]
fn constant_edge_is_recovered() {
    let (x, s) = chain(1.0, 32, 8);
    let post = train(&x, &s, &quick(300, 0)).unwrap();
    assert!(post.edges[0].directed.contains(&(0, 1)), "{:?}", post.edges);
    assert_eq!(post.edges[0].edge_count(), 1);
}

#[test]
fn edge_decisions_need_the_lower_bound_above_threshold() {
    let coefs = vec![CoefIndex {
        scale: 0,
        to: 1,
        from: 0,
    }];
    let mut samples: Vec<f64> = (0..1000).map(|i| 0.2 + i as f64 * 1e-3).collect();
    assert_eq!(
        decide_edges(&coefs, &[samples.clone()], 1, 0.1, 0.99).unwrap()[0].edge_count(),
        1
    );
    samples[..20].iter_mut().for_each(|v| *v = 0.0);
    assert_eq!(
        decide_edges(&coefs, &[samples], 1, 0.1, 0.99).unwrap()[0].edge_count(),
        0
    );
}

#[test]
fn invalid_inputs_are_rejected() {
    let (x, s) = chain(0.8, 16, 0);
    let short = Tensor::zeros(&[1, 8, 2, 2]);
    assert!(train(&x, &short, &quick(1, 0)).is_err());
    assert!(train(
        &x,
        &s,
        &InferConfig {
            particles: 0,
            ..quick(1, 0)
        }
    )
    .is_err());
    assert!(train(
        &x,
        &s,
        &InferConfig {
            posterior_samples: 10,
            ..quick(1, 0)
        }
    )
    .is_err());
    assert!(Step2Problem::new(s, vec![0.0; 3], 0.1, None).is_err());
}
