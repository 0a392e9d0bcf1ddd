mod common;

use battery_sddp_core::simulation::{quantile, simulate_out_of_sample};
use battery_sddp_core::{
    build_chain, evaluate_out_of_sample, kernel_density, train, PriceModel, Problem,
};
use common::{day, toy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn noiseless_prices_reproduce_the_deterministic_bound() {
    let (mut problem, _) = day(1, 0.03, 0.4);
    problem.model.innovation_std = 0.0;
    let chain = build_chain(&problem.model, 1, 0.0, 24).unwrap();
    let (policy, _) = train(&problem, &chain, 20, 0).unwrap();
    let report = evaluate_out_of_sample(&policy, 5, 3).unwrap();
    let bound = policy.bound().unwrap();
    assert!((report.mean_utility - bound).abs() < 1e-6, "{} vs {bound}", report.mean_utility);
    assert_eq!(report.std_error, 0.0);
}

#[test]
fn toy_simulation_stays_below_the_bound() {
    let (problem, chain) = toy(2);
    let (policy, _) = train(&problem, &chain, 200, 7).unwrap();
    let bound = policy.bound().unwrap();
    for seed in 0..20 {
        let r = evaluate_out_of_sample(&policy, 500, seed).unwrap();
        assert!(r.mean_utility <= bound + 2.0 * r.std_error, "seed {seed}: {} vs {bound}", r.mean_utility);
    }
}

#[test]
fn same_seed_same_wealths() {
    let (problem, chain) = day(4, 0.03, 0.4);
    let (policy, _) = train(&problem, &chain, 30, 1).unwrap();
    let a = evaluate_out_of_sample(&policy, 50, 9).unwrap();
    let b = evaluate_out_of_sample(&policy, 50, 9).unwrap();
    assert_eq!(a.terminal_wealths, b.terminal_wealths);
    // Scenario k does not depend on how many scenarios are run.
    let c = evaluate_out_of_sample(&policy, 20, 9).unwrap();
    assert_eq!(a.terminal_wealths[..20], c.terminal_wealths[..]);
}

fn feasibility_and_accounting(problem: &Problem, policy: &battery_sddp_core::Policy, scenarios: usize) {
    let b = &problem.battery;
    for k in 0..scenarios {
        let o = simulate_out_of_sample(policy, k, 21).unwrap();
        assert_eq!(o.energy.len(), problem.horizon() + 1);
        let mut wealth = problem.utility.initial_wealth;
        for (t, &u) in o.net_controls.iter().enumerate() {
            assert!(o.energy[t + 1] >= 0.0 && o.energy[t + 1] <= b.capacity);
            assert!(u <= b.max_charge + 1e-12 && -u <= b.max_discharge + 1e-12);
            let (bid, ask) = o.prices[t];
            let (buy, sell) = (u.max(0.0), (-u).max(0.0));
            wealth -= ask * buy - bid * sell;
            let expected = b.leak_factor() * o.energy[t] + b.charge_eff * buy - b.discharge_eff * sell;
            assert!((o.energy[t + 1] - expected).abs() < 1e-9);
        }
        assert!((o.terminal_wealth - wealth).abs() < 1e-9);
    }
}

#[test]
fn every_path_is_feasible_and_balances() {
    for (rho, alpha) in [(0.03, 0.4), (0.3, 1.0)] {
        let (problem, chain) = day(4, rho, alpha);
        let (policy, _) = train(&problem, &chain, 40, 2).unwrap();
        feasibility_and_accounting(&problem, &policy, 200);
    }
}

#[test]
fn in_sample_mean_is_not_below_out_of_sample() {
    let (problem, chain) = day(8, 0.03, 0.4);
    let (policy, _) = train(&problem, &chain, 200, 5).unwrap();
    let r = evaluate_out_of_sample(&policy, 1000, 11).unwrap();
    let se = libm::sqrt(r.std_error * r.std_error + r.in_sample_std_error * r.in_sample_std_error);
    assert!(r.in_sample_mean >= r.mean_utility - 2.0 * se, "{} vs {}", r.in_sample_mean, r.mean_utility);
}

fn normal_pdf(x: f64) -> f64 {
    libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI)
}

#[test]
fn kde_recovers_the_standard_normal() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xs: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let d = kernel_density(&xs, 256).unwrap();
    assert!((d.integral() - 1.0).abs() < 1e-3);
    let worst = d
        .grid
        .iter()
        .zip(&d.density)
        .map(|(&x, &f)| (f - normal_pdf(x)).abs())
        .fold(0.0, f64::max);
    assert!(worst < 0.02, "{worst}");
    let sd = libm::sqrt(xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64);
    assert!((d.bandwidth - 1.06 * sd * libm::pow(1e5, -0.2)).abs() < 1e-3);
}

#[test]
fn kde_finds_both_modes_of_a_mixture() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let xs: Vec<f64> = (0..20_000)
        .map(|k| {
            let z: f64 = StandardNormal.sample(&mut rng);
            if k % 2 == 0 { z - 5.0 } else { z + 5.0 }
        })
        .collect();
    let d = kernel_density(&xs, 400).unwrap();
    let peaks: Vec<f64> = (1..d.grid.len() - 1)
        .filter(|&i| d.density[i] > d.density[i - 1] && d.density[i] >= d.density[i + 1] && d.density[i] > 0.05)
        .map(|i| d.grid[i])
        .collect();
    assert_eq!(peaks.len(), 2, "{peaks:?}");
    assert!((peaks[0] + 5.0).abs() < 0.5 && (peaks[1] - 5.0).abs() < 0.5, "{peaks:?}");
}

#[test]
fn simulation_uses_the_model_with_its_own_innovations() {
    // Out-of-sample deviations follow the AR(1) law, not the chain nodes.
    let (problem, chain) = day(2, 0.03, 0.4);
    let (policy, _) = train(&problem, &chain, 10, 0).unwrap();
    let o = simulate_out_of_sample(&policy, 0, 5).unwrap();
    assert!(o.deviations.iter().any(|x| !chain.nodes[1].contains(x)));
    let m: &PriceModel = &problem.model;
    for (t, (&xi, &(bid, ask))) in o.deviations.iter().zip(&o.prices).enumerate() {
        assert_eq!((bid, ask), m.bid_ask(t + 1, xi).unwrap());
    }
    let q = quantile(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap();
    assert!((q - 2.5).abs() < 1e-12);
}
