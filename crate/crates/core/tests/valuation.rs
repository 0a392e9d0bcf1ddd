mod common;

use battery_sddp_core::valuation::sweep_point;
use battery_sddp_core::{
    indifference_price_exponential, price_sweep, train, SweepAxis, ValuationMethod, ValuationSetup,
};
use common::{problem_with, toy};
use proptest::prelude::*;

fn toy_setup(iterations: usize) -> ValuationSetup {
    ValuationSetup {
        problem: toy(2).0,
        quadrature_points: 2,
        sampling_std: None,
        iterations,
        seed: 7,
    }
}

#[test]
fn wealth_shift_identity_holds_on_the_toy_instance() {
    let setup = toy_setup(200);
    let rho = setup.problem.utility.risk_aversion;
    let phi0 = setup.value_at_wealth(0.0, &mut || 0.0).unwrap();
    for x in [-25.0, -3.0, 12.5, 40.0] {
        let phi = setup.value_at_wealth(x, &mut || 0.0).unwrap();
        let e = libm::exp(-rho * x);
        let predicted = e * phi0 + (1.0 - e) / rho;
        assert!((phi - predicted).abs() < 1e-3, "x {x}: {phi} vs {predicted}");
    }
}

#[test]
fn closed_form_and_bisection_agree_on_the_toy_instance() {
    let setup = toy_setup(200);
    let closed = setup.price_closed_form(&mut || 0.0).unwrap();
    assert_eq!(closed.method, ValuationMethod::ClosedForm);
    let from_phi = indifference_price_exponential(closed.phi_with, setup.problem.utility.risk_aversion).unwrap();
    assert!((closed.price - from_phi).abs() < 1e-9);
    let bis = setup.price_bisection((0.0, 40.0), 1e-4, 60, &mut || 0.0).unwrap();
    assert_eq!(bis.method, ValuationMethod::Bisection);
    assert!((closed.price - bis.price).abs() < 1e-3, "{} vs {}", closed.price, bis.price);
}

#[test]
fn zero_capacity_is_worth_nothing() {
    let base = toy_setup(50);
    let row = sweep_point(&base, SweepAxis::Capacity, 0.0, 0.03, 0, &mut || 0.0).unwrap();
    assert_eq!(row.price, 0.0);
    let row = sweep_point(&base, SweepAxis::SpeedFraction, 0.0, 0.3, 0, &mut || 0.0).unwrap();
    assert_eq!(row.price, 0.0);
}

#[test]
fn toy_capacity_sweep_is_monotone_with_second_differences() {
    let base = toy_setup(150);
    let rows = price_sweep(SweepAxis::Capacity, &[0.0, 0.5, 1.0, 2.0], &[0.03, 0.3], &base, &mut || 0.0).unwrap();
    assert_eq!(rows.len(), 8);
    for pair in rows.chunks(4) {
        assert_eq!(pair[0].price, 0.0);
        for w in pair.windows(2) {
            assert!(w[1].price >= w[0].price - 1e-3, "{w:?}");
        }
        assert!(pair[0].second_difference.is_none() && pair[1].second_difference.is_some());
    }
}

#[test]
fn price_is_the_certainty_equivalent_of_the_bound() {
    let (problem, chain) = toy(2);
    let (policy, _) = train(&problem, &chain, 100, 1).unwrap();
    let rho = problem.utility.risk_aversion;
    let p = indifference_price_exponential(policy.bound().unwrap(), rho).unwrap();
    assert!((p - policy.certainty_equivalent().unwrap()).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn price_is_never_negative(
        d1 in 20.0f64..70.0, d2 in 20.0f64..70.0, d3 in 20.0f64..70.0,
        rho in 0.003f64..0.5,
        alpha in 0.1f64..1.0,
    ) {
        let setup = ValuationSetup {
            problem: problem_with(vec![d1, d2, d3], 5.0, rho, alpha),
            quadrature_points: 2,
            sampling_std: None,
            iterations: 30,
            seed: 1,
        };
        let r = setup.price_closed_form(&mut || 0.0).unwrap();
        prop_assert!(r.price >= 0.0, "{}", r.price);
    }
}
