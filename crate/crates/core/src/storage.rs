//! Battery data, the linear relaxed dynamics and the complementarity
//! recovery that turns simultaneous buy/sell plans into physical ones.

use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BatterySpec {
    /// Maximum stored energy (MWh).
    pub capacity: f64,
    /// Maximum energy bought per stage (MWh).
    pub max_charge: f64,
    /// Maximum energy sold per stage (MWh).
    pub max_discharge: f64,
    /// Stored energy gained per unit bought.
    pub charge_eff: f64,
    /// Stored energy removed per unit sold.
    pub discharge_eff: f64,
    /// Proportional loss of stored energy per stage.
    pub leakage: f64,
}

impl BatterySpec {
    /// Equal charge and discharge limits `alpha * capacity`.
    pub fn with_speed_fraction(
        capacity: f64,
        speed_fraction: f64,
        charge_eff: f64,
        discharge_eff: f64,
        leakage: f64,
    ) -> Result<Self> {
        if !(speed_fraction > 0.0 && speed_fraction <= 1.0) {
            return Err(Error::InvalidParameter("speed_fraction must lie in (0, 1]"));
        }
        let spec = Self {
            capacity,
            max_charge: speed_fraction * capacity,
            max_discharge: speed_fraction * capacity,
            charge_eff,
            discharge_eff,
            leakage,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.capacity > 0.0) || !self.capacity.is_finite() {
            return Err(Error::InvalidParameter("capacity must be finite and > 0"));
        }
        if !(self.charge_eff > 0.0 && self.charge_eff <= self.discharge_eff)
            || !self.discharge_eff.is_finite()
        {
            return Err(Error::InvalidParameter("efficiencies must satisfy 0 < c+ <= c-"));
        }
        if !(0.0..=1.0).contains(&self.leakage) {
            return Err(Error::InvalidParameter("leakage must lie in [0, 1]"));
        }
        if !(self.max_charge >= 0.0 && self.max_discharge >= 0.0)
            || !self.max_charge.is_finite()
            || !self.max_discharge.is_finite()
        {
            return Err(Error::InvalidParameter("speed limits must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn leak_factor(&self) -> f64 {
        1.0 - self.leakage
    }
}

/// Exponential utility `(1/rho)(1 - exp(-rho z))` of terminal wealth.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UtilitySpec {
    pub risk_aversion: f64,
    pub initial_wealth: f64,
    /// Wealth below which `terminal_cost` refuses to evaluate; `None` means
    /// `-700 / rho`, just above where `exp(-rho w)` overflows.
    pub wealth_floor: Option<f64>,
}

impl UtilitySpec {
    pub fn new(risk_aversion: f64, initial_wealth: f64) -> Result<Self> {
        let spec = Self {
            risk_aversion,
            initial_wealth,
            wealth_floor: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.risk_aversion > 0.0) || !self.risk_aversion.is_finite() {
            return Err(Error::InvalidParameter("risk_aversion must be finite and > 0"));
        }
        if !self.initial_wealth.is_finite() {
            return Err(Error::InvalidParameter("initial_wealth must be finite"));
        }
        Ok(())
    }

    pub fn floor(&self) -> f64 {
        self.wealth_floor.unwrap_or(-700.0 / self.risk_aversion)
    }

    /// Infimum of the terminal cost, a valid lower bound on every cost-to-go.
    pub fn cost_lower_bound(&self) -> f64 {
        -1.0 / self.risk_aversion
    }

    pub fn utility(&self, wealth: f64) -> f64 {
        -libm::expm1(-self.risk_aversion * wealth) / self.risk_aversion
    }
}

/// Negated utility `(1/rho)(exp(-rho w) - 1)`; convex and decreasing.
pub fn terminal_cost(utility: &UtilitySpec, wealth: f64) -> Result<f64> {
    check_floor(utility, wealth)?;
    Ok(libm::expm1(-utility.risk_aversion * wealth) / utility.risk_aversion)
}

/// Derivative `-exp(-rho w)` of [`terminal_cost`].
pub fn terminal_cost_derivative(utility: &UtilitySpec, wealth: f64) -> Result<f64> {
    check_floor(utility, wealth)?;
    Ok(-libm::exp(-utility.risk_aversion * wealth))
}

fn check_floor(utility: &UtilitySpec, wealth: f64) -> Result<()> {
    let floor = utility.floor();
    if !(wealth >= floor) {
        return Err(Error::OverflowGuard { wealth, floor });
    }
    Ok(())
}

/// Prices and battery coefficients of one stage at one chain node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageData {
    pub stage: usize,
    pub node: usize,
    pub bid: f64,
    pub ask: f64,
    pub leak_factor: f64,
    pub charge_eff: f64,
    pub discharge_eff: f64,
    pub capacity: f64,
    pub u_max_charge: f64,
    pub u_max_discharge: f64,
}

impl StageData {
    pub fn new(stage: usize, node: usize, bid: f64, ask: f64, battery: &BatterySpec) -> Self {
        Self {
            stage,
            node,
            bid,
            ask,
            leak_factor: battery.leak_factor(),
            charge_eff: battery.charge_eff,
            discharge_eff: battery.discharge_eff,
            capacity: battery.capacity,
            u_max_charge: battery.max_charge,
            u_max_discharge: battery.max_discharge,
        }
    }

    /// Wealth after buying `buy` at the ask and selling `sell` at the bid.
    pub fn next_wealth(&self, wealth: f64, buy: f64, sell: f64) -> f64 {
        wealth - self.ask * buy + self.bid * sell
    }

    pub fn next_energy(&self, energy: f64, buy: f64, sell: f64) -> f64 {
        self.leak_factor * energy + self.charge_eff * buy - self.discharge_eff * sell
    }
}

/// `bid / c- <= ask / c+`: under this condition buying and selling in the
/// same stage never pays, so the relaxed problem loses nothing.
pub fn check_spread_condition(stage_data: &StageData) -> bool {
    stage_data.bid / stage_data.discharge_eff <= stage_data.ask / stage_data.charge_eff + 1e-12
}

/// Plan that may buy (`buy`) and sell (`sell`) in the same stage.
/// `wealth` and `energy` hold `T + 1` entries starting at stage 0.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RelaxedTrajectory {
    pub wealth: Vec<f64>,
    pub energy: Vec<f64>,
    pub buy: Vec<f64>,
    pub sell: Vec<f64>,
}

/// Physical plan with a signed net control (positive buys, negative sells).
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ComplementaryTrajectory {
    pub wealth: Vec<f64>,
    pub energy: Vec<f64>,
    pub net_control: Vec<f64>,
}

impl ComplementaryTrajectory {
    pub fn terminal_wealth(&self) -> f64 {
        self.wealth.last().copied().unwrap_or(0.0)
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

/// Net control equivalent to buying `buy` and selling `sell` at once: the
/// same stored-energy change `C = c+ buy - c- sell`, executed on one side.
pub fn complementary_control(buy: f64, sell: f64, battery: &BatterySpec) -> f64 {
    let change = battery.charge_eff * buy - battery.discharge_eff * sell;
    if change >= 0.0 {
        change / battery.charge_eff
    } else {
        change / battery.discharge_eff
    }
}

/// Cash flow `-(ask u+ - bid u-)` of a signed control.
pub fn net_cash_flow(net: f64, bid: f64, ask: f64) -> f64 {
    if net >= 0.0 {
        -ask * net
    } else {
        -bid * net
    }
}

pub fn recover_complementary(
    relaxed: &RelaxedTrajectory,
    prices: &[(f64, f64)],
    spec: &BatterySpec,
    x0m: f64,
) -> Result<ComplementaryTrajectory> {
    spec.validate()?;
    let horizon = relaxed.buy.len();
    if relaxed.sell.len() != horizon
        || relaxed.wealth.len() != horizon + 1
        || relaxed.energy.len() != horizon + 1
    {
        return Err(Error::InfeasibleInput("trajectory lengths are inconsistent"));
    }
    if prices.len() != horizon {
        return Err(Error::LengthMismatch {
            expected: horizon,
            found: prices.len(),
        });
    }
    if !close(relaxed.wealth[0], x0m) {
        return Err(Error::InfeasibleInput("initial wealth differs from x0m"));
    }
    let tol = 1e-9 * (1.0 + spec.capacity);
    for t in 0..=horizon {
        let e = relaxed.energy[t];
        if e < -tol || e > spec.capacity + tol {
            return Err(Error::InfeasibleInput("stored energy outside [0, capacity]"));
        }
    }
    for t in 0..horizon {
        let (bid, ask) = prices[t];
        let (buy, sell) = (relaxed.buy[t], relaxed.sell[t]);
        if buy < -tol || buy > spec.max_charge + tol || sell < -tol || sell > spec.max_discharge + tol {
            return Err(Error::InfeasibleInput("control outside its box"));
        }
        let expected_wealth = relaxed.wealth[t] - ask * buy + bid * sell;
        let expected_energy =
            spec.leak_factor() * relaxed.energy[t] + spec.charge_eff * buy - spec.discharge_eff * sell;
        if !close(relaxed.wealth[t + 1], expected_wealth) || !close(relaxed.energy[t + 1], expected_energy) {
            return Err(Error::InfeasibleInput("dynamics do not hold"));
        }
        let data = StageData::new(t + 1, 0, bid, ask, spec);
        if !check_spread_condition(&data) {
            return Err(Error::ConditionViolated { stage: t + 1, node: 0 });
        }
    }

    let mut wealth = Vec::with_capacity(horizon + 1);
    let mut net_control = Vec::with_capacity(horizon);
    wealth.push(x0m);
    for t in 0..horizon {
        let (bid, ask) = prices[t];
        let net = complementary_control(relaxed.buy[t], relaxed.sell[t], spec);
        wealth.push(wealth[t] + net_cash_flow(net, bid, ask));
        net_control.push(net);
    }
    Ok(ComplementaryTrajectory {
        wealth,
        energy: relaxed.energy.clone(),
        net_control,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn battery() -> BatterySpec {
        BatterySpec::with_speed_fraction(1.0, 0.4, 0.95, 1.05, 0.0).unwrap()
    }

    #[test]
    fn spread_condition_examples() {
        let b = battery();
        assert!(check_spread_condition(&StageData::new(1, 0, 49.0, 51.0, &b)));
        assert!(check_spread_condition(&StageData::new(1, 0, -11.0, -9.0, &b)));
        let unit = BatterySpec {
            charge_eff: 1.0,
            discharge_eff: 1.0,
            ..b
        };
        assert!(check_spread_condition(&StageData::new(1, 0, 30.0, 30.0, &unit)));
        // deep negative mid-price breaks it: -101/1.05 > -99/0.95
        assert!(!check_spread_condition(&StageData::new(1, 0, -101.0, -99.0, &b)));
    }

    #[test]
    fn terminal_cost_values_and_derivative() {
        let u = UtilitySpec::new(0.03, 0.0).unwrap();
        assert_eq!(terminal_cost(&u, 0.0).unwrap(), 0.0);
        let v = terminal_cost(&u, 100.0).unwrap();
        assert!((v - (-31.673_764_387_737_87)).abs() < 1e-9, "{v}");
        for w in [-500.0, -10.0, 0.0, 3.7, 250.0] {
            let h = 1e-5;
            let fd = (terminal_cost(&u, w + h).unwrap() - terminal_cost(&u, w - h).unwrap()) / (2.0 * h);
            let d = terminal_cost_derivative(&u, w).unwrap();
            assert!((fd - d).abs() <= 1e-6 * d.abs(), "w={w}");
        }
        assert!(matches!(
            terminal_cost(&u, -1e6),
            Err(Error::OverflowGuard { .. })
        ));
    }

    #[test]
    fn already_complementary_plan_is_unchanged() {
        let b = battery();
        let prices = vec![(29.0, 31.0), (39.0, 41.0)];
        let relaxed = RelaxedTrajectory {
            wealth: vec![0.0, -31.0 * 0.2, -31.0 * 0.2 - 41.0 * 0.3],
            energy: vec![0.0, 0.19, 0.19 + 0.285],
            buy: vec![0.2, 0.3],
            sell: vec![0.0, 0.0],
        };
        let out = recover_complementary(&relaxed, &prices, &b, 0.0).unwrap();
        assert_eq!(out.net_control.len(), 2);
        assert!((out.net_control[0] - 0.2).abs() < 1e-15);
        assert!((out.net_control[1] - 0.3).abs() < 1e-15);
        for (a, r) in out.wealth.iter().zip(&relaxed.wealth) {
            assert!((a - r).abs() < 1e-12);
        }
    }

    #[test]
    fn simultaneous_trades_collapse_to_net_sale() {
        let b = battery();
        // buy 1 and sell 1: C = 0.95 - 1.05 = -0.1, so sell 0.1/1.05
        let wide = BatterySpec {
            max_charge: 1.0,
            max_discharge: 1.0,
            ..b
        };
        let relaxed = RelaxedTrajectory {
            wealth: vec![0.0, -51.0 + 49.0],
            energy: vec![0.5, 0.4],
            buy: vec![1.0],
            sell: vec![1.0],
        };
        let out = recover_complementary(&relaxed, &[(49.0, 51.0)], &wide, 0.0).unwrap();
        let net = out.net_control[0];
        assert!((net + 0.095_238_095_238_095_24).abs() < 1e-12);
        // energy-balance oracle: c+ u+ - c- u- equals C
        assert!((-(1.05 * -net) - (-0.1)).abs() < 1e-12);
        assert!(out.terminal_wealth() >= relaxed.wealth[1]);
        assert_eq!(out.energy, relaxed.energy);
    }

    #[test]
    fn infeasible_or_violating_inputs_are_rejected() {
        let b = battery();
        let bad = RelaxedTrajectory {
            wealth: vec![0.0, 0.0],
            energy: vec![0.0, 0.1],
            buy: vec![0.0],
            sell: vec![0.0],
        };
        assert!(matches!(
            recover_complementary(&bad, &[(49.0, 51.0)], &b, 0.0),
            Err(Error::InfeasibleInput(_))
        ));
        let ok = RelaxedTrajectory {
            wealth: vec![0.0, 0.0],
            energy: vec![0.0, 0.0],
            buy: vec![0.0],
            sell: vec![0.0],
        };
        assert!(matches!(
            recover_complementary(&ok, &[(-101.0, -99.0)], &b, 0.0),
            Err(Error::ConditionViolated { stage: 1, .. })
        ));
    }

    #[test]
    fn invalid_specs() {
        assert!(BatterySpec::with_speed_fraction(0.0, 0.4, 0.95, 1.05, 0.0).is_err());
        assert!(BatterySpec::with_speed_fraction(1.0, 0.0, 0.95, 1.05, 0.0).is_err());
        assert!(BatterySpec::with_speed_fraction(1.0, 0.4, 1.1, 1.05, 0.0).is_err());
        assert!(BatterySpec::with_speed_fraction(1.0, 0.4, 0.95, 1.05, 1.5).is_err());
        assert!(UtilitySpec::new(0.0, 0.0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn terminal_cost_is_midpoint_convex(a in -300.0f64..300.0, b in -300.0f64..300.0, rho in 0.001f64..0.5) {
            let u = UtilitySpec::new(rho, 0.0).unwrap();
            let mid = terminal_cost(&u, 0.5 * (a + b)).unwrap();
            let avg = 0.5 * (terminal_cost(&u, a).unwrap() + terminal_cost(&u, b).unwrap());
            proptest::prop_assert!(mid <= avg + 1e-9 * (1.0 + avg.abs()));
        }
    }
}
