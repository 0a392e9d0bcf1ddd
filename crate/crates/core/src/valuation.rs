//! Indifference prices of storage access.
//!
//! Under exponential utility the value with initial wealth `x` satisfies
//! `phi(x, U) = exp(-rho x) phi(0, U) + (1 - exp(-rho x)) / rho`, so one
//! training run at zero wealth gives the price in closed form. Bisection on
//! the indifference equation is kept as a cross-check; it retrains the whole
//! policy at every evaluation.

use alloc::vec::Vec;

use crate::chain::{build_chain, default_sampling_std, MarkovChain};
use crate::error::{Error, Result};
use crate::sddp::{train_with_clock, Policy, Problem};
use crate::storage::BatterySpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ValuationMethod {
    ClosedForm,
    Bisection,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ValuationResult {
    pub price: f64,
    /// Value with the storage, at zero wealth for the closed form.
    pub phi_with: f64,
    /// Value without the storage at the initial wealth.
    pub phi_without: f64,
    pub method: ValuationMethod,
    /// Bisection steps, or training iterations for the closed form.
    pub iterations: usize,
}

/// `-ln(1 - rho phi) / rho`.
pub fn indifference_price_exponential(phi_zero_capacity: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::InvalidParameter("risk aversion must be > 0"));
    }
    let x = rho * phi_zero_capacity;
    if !(x < 1.0) {
        return Err(Error::DomainError);
    }
    Ok(-libm::log1p(-x) / rho)
}

/// Solves `value_fn(x0 - pi) = baseline` for `pi` in `bracket`, where
/// `value_fn` is increasing in wealth. Returns the midpoint of the final
/// interval (width `<= tol`) and the number of midpoint evaluations.
pub fn indifference_price_bisection(
    value_fn: &mut dyn FnMut(f64) -> Result<f64>,
    initial_wealth: f64,
    baseline: f64,
    bracket: (f64, f64),
    tol: f64,
    max_evaluations: usize,
) -> Result<(f64, usize)> {
    let (mut lo, mut hi) = bracket;
    if !(tol > 0.0) || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::BracketInvalid);
    }
    if value_fn(initial_wealth - lo)? < baseline || value_fn(initial_wealth - hi)? > baseline {
        return Err(Error::BracketInvalid);
    }
    let mut steps = 0;
    while hi - lo > tol {
        if steps == max_evaluations {
            return Err(Error::MaxEvaluations(max_evaluations));
        }
        let mid = 0.5 * (lo + hi);
        steps += 1;
        if value_fn(initial_wealth - mid)? >= baseline {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi), steps))
}

/// Doing nothing is always feasible, so the price is nonnegative; negatives
/// of round-off size are snapped to zero.
fn finite_price(policy: &Policy) -> Result<f64> {
    let x0 = policy.problem().utility.initial_wealth;
    let ce = policy.certainty_equivalent()?;
    if !ce.is_finite() {
        return Err(Error::DomainError);
    }
    let price = ce - x0;
    Ok(if price < 0.0 && price > -1e-9 * (1.0 + libm::fabs(x0)) { 0.0 } else { price })
}

/// Problem plus the discretization used to train it.
#[derive(Debug, Clone, PartialEq)]
pub struct ValuationSetup {
    pub problem: Problem,
    pub quadrature_points: usize,
    /// Sampling std of the chain; the stationary std of the model if `None`.
    pub sampling_std: Option<f64>,
    pub iterations: usize,
    pub seed: u64,
}

impl ValuationSetup {
    pub fn chain(&self) -> Result<MarkovChain> {
        let model = &self.problem.model;
        let sampling = match self.sampling_std {
            Some(s) => s,
            None if self.quadrature_points == 1 => 0.0,
            None => default_sampling_std(model)?,
        };
        build_chain(model, self.quadrature_points, sampling, model.horizon())
    }

    /// Policy trained at initial wealth `w`, with the training time read
    /// from `clock`.
    pub fn train_at_wealth(&self, wealth: f64, clock: &mut dyn FnMut() -> f64) -> Result<(Policy, f64)> {
        let mut problem = self.problem.clone();
        problem.utility.initial_wealth = wealth;
        let chain = self.chain()?;
        let t0 = clock();
        let (policy, _) = train_with_clock(&problem, &chain, self.iterations, self.seed, clock)?;
        Ok((policy, clock() - t0))
    }

    /// Trained value `phi(w, capacity)` at initial wealth `w`, as the SDDP
    /// bound.
    pub fn value_at_wealth(&self, wealth: f64, clock: &mut dyn FnMut() -> f64) -> Result<f64> {
        self.train_at_wealth(wealth, clock)?.0.bound()
    }

    /// Closed-form price from one zero-wealth training run. The price is the
    /// certainty equivalent of the bound, i.e. `-ln(1 - rho phi) / rho`
    /// evaluated without cancellation.
    pub fn price_closed_form(&self, clock: &mut dyn FnMut() -> f64) -> Result<ValuationResult> {
        let (policy, _) = self.train_at_wealth(0.0, clock)?;
        let phi = policy.bound()?;
        Ok(ValuationResult {
            price: finite_price(&policy)?,
            phi_with: phi,
            phi_without: self.problem.utility.utility(self.problem.utility.initial_wealth),
            method: ValuationMethod::ClosedForm,
            iterations: self.iterations,
        })
    }

    /// Price by bisection on the indifference equation, retraining at every
    /// shifted initial wealth.
    pub fn price_bisection(
        &self,
        bracket: (f64, f64),
        tol: f64,
        max_evaluations: usize,
        clock: &mut dyn FnMut() -> f64,
    ) -> Result<ValuationResult> {
        let x0 = self.problem.utility.initial_wealth;
        let baseline = self.problem.utility.utility(x0);
        let mut phi_with = f64::NAN;
        let (price, steps) = indifference_price_bisection(
            &mut |w| {
                let v = self.value_at_wealth(w, clock)?;
                if w == x0 {
                    phi_with = v;
                }
                Ok(v)
            },
            x0,
            baseline,
            bracket,
            tol,
            max_evaluations,
        )?;
        Ok(ValuationResult {
            price,
            phi_with,
            phi_without: baseline,
            method: ValuationMethod::Bisection,
            iterations: steps,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SweepAxis {
    /// Storage capacity in MWh; the speed fraction is held fixed.
    Capacity,
    /// Charge/discharge speed as a fraction of capacity per stage.
    SpeedFraction,
    /// Innovation std of the deviation process in EUR/MWh.
    Sigma,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepRow {
    pub axis_value: f64,
    pub rho: f64,
    pub price: f64,
    pub bound: f64,
    pub train_seconds: f64,
    /// Discrete second difference of price along the grid (interior points).
    pub second_difference: Option<f64>,
}

/// Setup for one grid point: `value` applied on `axis`, risk aversion `rho`
/// and seed `base.seed + index`. `None` means the storage is empty (zero
/// capacity or speed), whose price is zero without training.
pub fn sweep_setup(
    base: &ValuationSetup,
    axis: SweepAxis,
    value: f64,
    rho: f64,
    index: usize,
) -> Result<Option<ValuationSetup>> {
    let mut setup = base.clone();
    setup.seed = base.seed.wrapping_add(index as u64);
    setup.problem.utility.risk_aversion = rho;
    setup.problem.utility.wealth_floor = None;
    setup.problem.utility.initial_wealth = 0.0;
    let b = &base.problem.battery;
    let speed = b.max_charge / b.capacity;
    match axis {
        SweepAxis::Capacity | SweepAxis::SpeedFraction if value == 0.0 => return Ok(None),
        SweepAxis::Capacity => {
            setup.problem.battery =
                BatterySpec::with_speed_fraction(value, speed, b.charge_eff, b.discharge_eff, b.leakage)?;
            setup.problem.initial_energy = 0.0;
        }
        SweepAxis::SpeedFraction => {
            setup.problem.battery =
                BatterySpec::with_speed_fraction(b.capacity, value, b.charge_eff, b.discharge_eff, b.leakage)?;
        }
        SweepAxis::Sigma => {
            if !(value >= 0.0) {
                return Err(Error::InvalidParameter("sigma must be >= 0"));
            }
            setup.problem.model.innovation_std = value;
        }
    }
    setup.problem.validate()?;
    Ok(Some(setup))
}

/// Prices one grid point.
pub fn sweep_point(
    base: &ValuationSetup,
    axis: SweepAxis,
    value: f64,
    rho: f64,
    index: usize,
    clock: &mut dyn FnMut() -> f64,
) -> Result<SweepRow> {
    let Some(setup) = sweep_setup(base, axis, value, rho, index)? else {
        return Ok(SweepRow {
            axis_value: value,
            rho,
            price: 0.0,
            bound: 0.0,
            train_seconds: 0.0,
            second_difference: None,
        });
    };
    let (policy, secs) = setup.train_at_wealth(0.0, clock)?;
    Ok(SweepRow {
        axis_value: value,
        rho,
        price: finite_price(&policy)?,
        bound: policy.bound()?,
        train_seconds: secs,
        second_difference: None,
    })
}

pub fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("sweep grid must be nonempty and finite"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("sweep grid must be strictly increasing"));
    }
    Ok(())
}

/// Fills `second_difference` for rows sorted by `(rho, axis_value)`, using
/// the non-uniform three-point formula.
pub fn fill_second_differences(rows: &mut [SweepRow]) {
    for r in rows.iter_mut() {
        r.second_difference = None;
    }
    for k in 1..rows.len().saturating_sub(1) {
        let (a, b, c) = (&rows[k - 1], &rows[k], &rows[k + 1]);
        if a.rho != b.rho || b.rho != c.rho {
            continue;
        }
        let (h1, h2) = (b.axis_value - a.axis_value, c.axis_value - b.axis_value);
        let d = 2.0 * (h1 * c.price - (h1 + h2) * b.price + h2 * a.price) / (h1 * h2 * (h1 + h2));
        rows[k].second_difference = Some(d);
    }
}

/// One trained policy per (rho, grid value); rows ordered by rho, then grid.
pub fn price_sweep(
    axis: SweepAxis,
    grid: &[f64],
    rhos: &[f64],
    base: &ValuationSetup,
    clock: &mut dyn FnMut() -> f64,
) -> Result<Vec<SweepRow>> {
    check_grid(grid)?;
    if rhos.is_empty() {
        return Err(Error::InvalidParameter("at least one risk aversion is required"));
    }
    let mut rows = Vec::with_capacity(grid.len() * rhos.len());
    for &rho in rhos {
        for (index, &value) in grid.iter().enumerate() {
            rows.push(sweep_point(base, axis, value, rho, index, clock)?);
        }
    }
    fill_second_differences(&mut rows);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        assert_eq!(indifference_price_exponential(0.0, 0.03).unwrap(), 0.0);
        let p = indifference_price_exponential(10.0, 0.03).unwrap();
        // -ln(0.7)/0.03
        assert!((p - 11.889_164_797_957_748).abs() < 1e-10, "{p}");
        let p = indifference_price_exponential(10.0, 1e-6).unwrap();
        assert!((p - 10.0).abs() / 10.0 < 1e-4);
        assert_eq!(indifference_price_exponential(40.0, 0.03), Err(Error::DomainError));
        assert_eq!(indifference_price_exponential(1.0 / 0.03, 0.03), Err(Error::DomainError));
        assert!(indifference_price_exponential(1.0, 0.0).is_err());
    }

    #[test]
    fn bisection_on_affine_stub() {
        // phi(w) = 2 w + 3, baseline 0 at x0 = 1: root pi = 2.5.
        let (range, tol) = (10.0, 1e-6);
        let (pi, steps) = indifference_price_bisection(
            &mut |w| Ok(2.0 * w + 3.0),
            1.0,
            0.0,
            (0.0, range),
            tol,
            100,
        )
        .unwrap();
        assert!((pi - 2.5).abs() <= tol);
        assert_eq!(steps, libm::ceil(libm::log2(range / tol)) as usize);
    }

    #[test]
    fn bisection_rejects_bad_brackets() {
        let mut f = |w: f64| Ok(w);
        assert_eq!(
            indifference_price_bisection(&mut f, 0.0, 0.0, (1.0, 2.0), 1e-3, 50),
            Err(Error::BracketInvalid)
        );
        assert_eq!(
            indifference_price_bisection(&mut f, 0.0, 0.0, (2.0, 1.0), 1e-3, 50),
            Err(Error::BracketInvalid)
        );
        assert_eq!(
            indifference_price_bisection(&mut f, 0.0, 0.0, (-1.0, 1.0), 1e-9, 3),
            Err(Error::MaxEvaluations(3))
        );
    }

    #[test]
    fn zero_baseline_gap_prices_zero() {
        let (pi, _) =
            indifference_price_bisection(&mut |w| Ok(w), 0.0, 0.0, (0.0, 4.0), 1e-6, 100).unwrap();
        assert!(pi.abs() <= 1e-6);
    }

    #[test]
    fn second_differences_of_a_parabola() {
        let mut rows: Vec<SweepRow> = [0.5, 1.0, 2.0, 4.0]
            .iter()
            .map(|&x| SweepRow {
                axis_value: x,
                rho: 0.03,
                price: 3.0 * x * x,
                bound: 0.0,
                train_seconds: 0.0,
                second_difference: None,
            })
            .collect();
        fill_second_differences(&mut rows);
        assert_eq!(rows[0].second_difference, None);
        assert!((rows[1].second_difference.unwrap() - 6.0).abs() < 1e-12);
        assert!((rows[2].second_difference.unwrap() - 6.0).abs() < 1e-12);
        assert_eq!(rows[3].second_difference, None);
    }

    #[test]
    fn grid_checks() {
        assert!(check_grid(&[]).is_err());
        assert!(check_grid(&[1.0, 1.0]).is_err());
        assert!(check_grid(&[0.0, 0.5]).is_ok());
    }
}
