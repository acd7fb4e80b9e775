mod common;

use common::{mean_exp, mean_var};
use leaps_core::ctmc::{
    log_rnd_forward_forward, make_one_way, random_system, simulate, solve_kfe, time_reversal, uniform_grid, DenseCtmcSystem,
    RndEvaluator,
};
use leaps_core::rng;
use proptest::prelude::*;
use rand::Rng;

fn marginal(trajs: &[leaps_core::ctmc::Trajectory], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n];
    for t in trajs {
        c[t.final_state()] += 1.0;
    }
    c.iter().map(|v| v / trajs.len() as f64).collect()
}

#[test]
fn euler_marginal_matches_kfe() {
    let mut r = rng::stream(1, 0, 0);
    let sys = random_system(3, 0.1, 2.0, true, &mut r).unwrap();
    let trajs = simulate(&sys, 1000, 100_000, 1).unwrap();
    let exact = solve_kfe(&sys, &[0.0, 1.0]).unwrap();
    let emp = marginal(&trajs, 3);
    let tv: f64 = 0.5 * emp.iter().zip(exact.last()).map(|(a, b)| (a - b).abs()).sum::<f64>();
    assert!(tv <= 0.01, "{tv}");
}

#[test]
fn single_rate_step_is_bernoulli() {
    let sys = DenseCtmcSystem::constant(vec![vec![0.0, 0.0], vec![1.0, 0.0]], vec![1.0, 0.0]).unwrap();
    let mut r = rng::stream(2, 0, 0);
    let n = 1_000_000;
    let hits = (0..n).filter(|_| sys.euler_step(0, 0.0, 0.01, &mut r).unwrap() == 1).count() as f64;
    let sd = (n as f64 * 0.01 * 0.99).sqrt();
    assert!((hits - 0.01 * n as f64).abs() <= 3.0 * sd, "{hits}");
}

#[test]
fn jump_count_matches_expected_exit_rate() {
    let mut r = rng::stream(3, 0, 0);
    let sys = random_system(8, 0.05, 0.5, false, &mut r).unwrap();
    let n_steps = 1000;
    let trajs = simulate(&sys, n_steps, 20_000, 3).unwrap();
    let counts: Vec<f64> = trajs.iter().map(|t| t.n_jumps() as f64).collect();
    let (m, v) = mean_var(&counts);
    let se = (v / counts.len() as f64).sqrt();
    // Left-Riemann quadrature of E_{rho_t}[exit_t] on the simulation grid.
    let grid: Vec<f64> = (0..n_steps).map(|k| k as f64 / n_steps as f64).collect();
    let path = solve_kfe(&sys, &grid).unwrap();
    let mut expect = 0.0;
    for (t, p) in grid.iter().zip(path.pmfs()) {
        let q = sys.generator(*t).unwrap();
        expect += (0..8).map(|x| -q[x * 8 + x] * p[x]).sum::<f64>() / n_steps as f64;
    }
    assert!((m - expect).abs() <= 3.0 * se, "{m} +- {se} vs {expect}");
}

#[test]
fn reverse_rnd_is_normalized_for_arbitrary_reverse_rates() {
    let mut r = rng::stream(4, 0, 0);
    let q = random_system(3, 0.2, 1.5, true, &mut r).unwrap();
    let qp = random_system(3, 0.2, 1.5, false, &mut r).unwrap();
    let n_steps = 1000;
    let nu = solve_kfe(&q, &[0.0, 1.0]).unwrap().last().to_vec();
    let trajs = simulate(&q, n_steps, 50_000, 4).unwrap();
    let ev = RndEvaluator::new(&q, &qp, 0.0, 1e-3, n_steps).unwrap();
    let a: Vec<f64> = trajs.iter().map(|t| ev.reverse(t, q.initial_pmf(), &nu).unwrap().finite().unwrap()).collect();
    let (m, se) = mean_exp(&a);
    assert!((m - 1.0).abs() <= 3.0 * se, "{m} +- {se}");
}

#[test]
fn reverse_rnd_reweights_to_the_reverse_start() {
    // Under the reverse measure X_1 ~ nu, so reweighted terminal observables
    // follow nu even though the forward marginal is different.
    let mut r = rng::stream(5, 0, 0);
    let q = random_system(4, 0.2, 1.0, false, &mut r).unwrap();
    let other = random_system(4, 0.2, 1.0, true, &mut r).unwrap();
    let nu = solve_kfe(&other, &[0.0, 1.0]).unwrap().last().to_vec();
    let qp = random_system(4, 0.2, 1.0, false, &mut r).unwrap();
    let trajs = simulate(&q, 500, 50_000, 5).unwrap();
    let ev = RndEvaluator::new(&q, &qp, 0.0, 2e-3, 500).unwrap();
    let a: Vec<f64> = trajs.iter().map(|t| ev.reverse(t, q.initial_pmf(), &nu).unwrap().log_rnd).collect();
    let w = leaps_core::sampler::normalized_weights(&a).unwrap();
    let h = |x: usize| (x as f64 - 1.5).powi(2);
    let est: f64 = trajs.iter().zip(&w).map(|(t, w)| w * h(t.final_state())).sum();
    let var: f64 = trajs.iter().zip(&w).map(|(t, w)| w * w * (h(t.final_state()) - est).powi(2)).sum();
    let exact: f64 = (0..4).map(|x| nu[x] * h(x)).sum();
    assert!((est - exact).abs() <= 3.0 * var.sqrt(), "{est} +- {} vs {exact}", var.sqrt());
}

#[test]
fn time_reversal_weights_vanish_as_h_shrinks() {
    let q = DenseCtmcSystem::constant(vec![vec![0.0, 0.7], vec![1.3, 0.0]], vec![0.9, 0.1]).unwrap();
    let path = solve_kfe(&q, &uniform_grid(1e-3)).unwrap();
    let qr = time_reversal(&q, &path).unwrap();
    let mut vars = Vec::new();
    for n_steps in [100, 1000] {
        let trajs = simulate(&q, n_steps, 20_000, 6).unwrap();
        let ev = RndEvaluator::new(&q, &qr, 0.0, 1.0 / n_steps as f64, n_steps).unwrap();
        let a: Vec<f64> =
            trajs.iter().map(|t| ev.reverse(t, q.initial_pmf(), path.last()).unwrap().finite().unwrap()).collect();
        vars.push(mean_var(&a).1);
    }
    assert!(vars[1] < vars[0], "{vars:?}");
    assert!(vars[1] <= 1e-3, "{vars:?}");
}

#[test]
fn forward_forward_identities() {
    let mut r = rng::stream(7, 0, 0);
    let q = random_system(4, 0.2, 1.0, false, &mut r).unwrap();
    let trajs = simulate(&q, 200, 20_000, 7).unwrap();
    let mu = q.initial_pmf().to_vec();
    for t in trajs.iter().take(50) {
        assert_eq!(log_rnd_forward_forward(t, &mu, &mu, &q, &q).unwrap().log_rnd, 0.0);
    }
    let qp = random_system(4, 0.2, 1.0, true, &mut r).unwrap();
    let nu: Vec<f64> = {
        let raw: Vec<f64> = (0..4).map(|_| r.gen_range(0.2..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    };
    let ev = RndEvaluator::new(&q, &qp, 0.0, 5e-3, 200).unwrap();
    let a: Vec<f64> = trajs.iter().map(|t| ev.forward_forward(t, &mu, &nu).unwrap().finite().unwrap()).collect();
    // E_P[dP'/dP] = 1 and KL(P || P') = E_P[log dP/dP'] >= 0.
    let neg: Vec<f64> = a.iter().map(|v| -v).collect();
    let (m, se) = mean_exp(&neg);
    assert!((m - 1.0).abs() <= 3.0 * se, "{m} +- {se}");
    let (kl, v) = mean_var(&a);
    assert!(kl >= -3.0 * (v / a.len() as f64).sqrt(), "{kl}");
    assert!(kl > 0.0);
}

#[test]
fn one_way_conversion_preserves_marginals() {
    let mut r = rng::stream(8, 0, 0);
    for periodic in [false, true] {
        let q = random_system(8, 0.1, 1.0, periodic, &mut r).unwrap();
        let grid = uniform_grid(1e-3);
        let path = solve_kfe(&q, &grid).unwrap();
        let qbar = make_one_way(&q, &path).unwrap();
        let path_bar = solve_kfe(&qbar, &grid).unwrap();
        for (a, b) in path.pmfs().iter().zip(path_bar.pmfs()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
            }
        }
        for &t in &[0.0, 0.31, 0.8] {
            for x in 0..8 {
                for y in 0..8 {
                    if x != y {
                        assert_eq!(qbar.rate(t, y, x) * qbar.rate(t, x, y), 0.0);
                    }
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generators_are_valid(seed in 0u64..10_000, n in 2usize..10, t in 0.0f64..1.0) {
        let mut r = rng::stream(seed, 0, 0);
        let sys = random_system(n, 0.0, 3.0, seed % 2 == 0, &mut r).unwrap();
        let q = sys.generator(t).unwrap();
        for x in 0..n {
            let col: f64 = (0..n).map(|y| q[y * n + x]).sum();
            prop_assert!(col.abs() <= 1e-12);
            for y in 0..n {
                prop_assert!(y == x || q[y * n + x] >= 0.0);
            }
        }
    }

    #[test]
    fn kfe_stays_on_the_simplex(seed in 0u64..10_000, n in 2usize..7) {
        let mut r = rng::stream(seed, 1, 0);
        let sys = random_system(n, 0.0, 5.0, true, &mut r).unwrap();
        let path = solve_kfe(&sys, &uniform_grid(0.05)).unwrap();
        for p in path.pmfs() {
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(p.iter().all(|&v| v >= -1e-12));
        }
    }

    #[test]
    fn one_way_is_pairwise_exclusive(seed in 0u64..10_000) {
        let mut r = rng::stream(seed, 2, 0);
        let q = random_system(5, 0.0, 2.0, false, &mut r).unwrap();
        let path = solve_kfe(&q, &uniform_grid(0.1)).unwrap();
        let qbar = make_one_way(&q, &path).unwrap();
        let t = r.gen_range(0.0..1.0);
        for x in 0..5 {
            for y in 0..5 {
                if x != y {
                    prop_assert_eq!(qbar.rate(t, y, x) * qbar.rate(t, x, y), 0.0);
                }
            }
        }
    }
}
