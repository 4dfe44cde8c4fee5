use pspo_core::problems::{simulate_sir, sir_neg_log_pseudolikelihood, synthetic_outbreak};
use pspo_core::{seed, SirParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Exact-jump (Gillespie) SIR; returns `N − S` at `horizon`.
fn gillespie_final_size(beta: f64, gamma: f64, n: u64, i0: u64, horizon: f64, seed: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut s, mut i) = (n - i0, i0);
    let mut t = 0.0;
    while i > 0 {
        let inf = beta * s as f64 * i as f64 / n as f64;
        let rec = gamma * i as f64;
        let total = inf + rec;
        t += -(1.0 - rng.random::<f64>()).ln() / total;
        if t > horizon {
            break;
        }
        if rng.random::<f64>() * total < inf {
            s -= 1;
            i += 1;
        } else {
            i -= 1;
        }
    }
    n - s
}

#[test]
fn chain_binomial_final_size_matches_exact_jump_process() {
    let (beta, gamma, n, i0) = (0.5, 0.25, 188u64, 1u64);
    let runs = 20_000u64;
    let params = SirParams::new(beta, gamma).unwrap();
    let chain: u64 = (0..runs)
        .into_par_iter()
        .map(|r| {
            simulate_sir(params, (n - i0, i0, 0), 60.0, 0.1, seed::derive(1, 0, r))
                .unwrap()
                .final_size()
        })
        .sum();
    let exact: u64 = (0..runs)
        .into_par_iter()
        .map(|r| gillespie_final_size(beta, gamma, n, i0, 60.0, seed::derive(2, 0, r)))
        .sum();
    let (chain, exact) = (chain as f64 / runs as f64, exact as f64 / runs as f64);
    assert!(
        (chain - exact).abs() <= 0.05 * exact,
        "chain-binomial {chain} vs exact {exact}"
    );
}

#[test]
fn pseudo_likelihood_prefers_generating_parameters() {
    let truth = SirParams::new(0.6, 0.2).unwrap();
    let off = SirParams::new(1.2, 0.1).unwrap();
    let wins = (0..20u64)
        .filter(|&s| {
            let data = synthetic_outbreak(truth, 188, 1, 120, 0.2, seed::derive(3, 0, s)).unwrap();
            let at_truth = sir_neg_log_pseudolikelihood(truth, &data, 20, s).unwrap();
            let at_off = sir_neg_log_pseudolikelihood(off, &data, 20, s).unwrap();
            at_truth < at_off
        })
        .count();
    assert!(wins >= 18, "truth preferred in {wins}/20");
}

#[test]
fn pseudo_likelihood_grid_minimum_is_near_truth() {
    let (b, g) = (0.6f64, 0.2f64);
    let truth = SirParams::new(b, g).unwrap();
    let cells = 20usize;
    // Log-spaced grid over [x/4, 4x]; cell centres.
    let axis = |x: f64| -> Vec<f64> {
        let (lo, hi) = ((x / 4.0).ln(), (x * 4.0).ln());
        (0..cells)
            .map(|k| (lo + (k as f64 + 0.5) * (hi - lo) / cells as f64).exp())
            .collect()
    };
    let (betas, gammas) = (axis(b), axis(g));
    // Fractional cell index of the truth; it sits on the boundary between
    // the two middle cells, so either of them counts as its cell.
    let truth_pos = (cells as f64 - 1.0) / 2.0;
    let hits = (0..20u64)
        .into_par_iter()
        .filter(|&s| {
            let data = synthetic_outbreak(truth, 188, 1, 120, 0.2, seed::derive(4, 0, s)).unwrap();
            let mut best = (f64::INFINITY, 0, 0);
            for (i, &bb) in betas.iter().enumerate() {
                for (j, &gg) in gammas.iter().enumerate() {
                    let v =
                        sir_neg_log_pseudolikelihood(SirParams::new(bb, gg).unwrap(), &data, 10, s)
                            .unwrap();
                    if v < best.0 {
                        best = (v, i, j);
                    }
                }
            }
            (best.1 as f64 - truth_pos).abs() <= 1.5 && (best.2 as f64 - truth_pos).abs() <= 1.5
        })
        .count();
    assert!(hits >= 16, "grid minimum near truth in {hits}/20");
}

#[test]
fn simulated_series_conserve_population_and_are_monotone() {
    for s in 0..50 {
        let sim = simulate_sir(
            SirParams::new(0.8, 0.3).unwrap(),
            (180, 8, 0),
            40.0,
            0.25,
            s,
        )
        .unwrap();
        for k in 0..sim.len() {
            let (a, b, c) = sim.state(k);
            assert_eq!(a + b + c, 188);
            if k > 0 {
                let (a0, _, c0) = sim.state(k - 1);
                assert!(a <= a0 && c >= c0);
            }
        }
    }
}
