//! Policy evaluation on sampled price paths.
//!
//! Out of sample, the deviation follows the continuous AR(1) law. At each
//! stage the realized deviation is mapped to the nearest chain node, whose
//! cuts price the future, while the trade itself is solved and booked at the
//! realized bid and ask. Whatever the LP returns is turned into its
//! one-sided equivalent before accounting, so no stage both buys and sells.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::nearest_node;
use crate::error::{Error, Result};
use crate::price_model::deviation_path_with;
use crate::sddp::{sample_index, Policy};
use crate::stage::State;
use crate::storage::{complementary_control, net_cash_flow};

/// One simulated day.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub terminal_wealth: f64,
    pub utility: f64,
    /// Deviations `xi_1..xi_T` that drove the prices.
    pub deviations: Vec<f64>,
    /// Signed traded quantity per stage: positive buys, negative sells.
    pub net_controls: Vec<f64>,
    pub prices: Vec<(f64, f64)>,
    /// `T + 1` stored-energy levels.
    pub energy: Vec<f64>,
}

/// One independent ChaCha stream per (scenario, kind) under the base seed.
fn scenario_rng(base_seed: u64, scenario: usize, kind: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(((scenario as u64) << 1) | kind);
    rng
}

/// Runs the policy along a given deviation path. `nodes` gives the chain
/// node used at each stage; `prices` the bid/ask booked at each stage.
fn run_path(
    policy: &Policy,
    deviations: Vec<f64>,
    nodes: &[usize],
    prices: Vec<(f64, f64)>,
) -> Result<ScenarioOutcome> {
    let problem = policy.problem();
    let battery = &problem.battery;
    let horizon = nodes.len();
    let mut state = problem.initial_state();
    let mut net_controls = Vec::with_capacity(horizon);
    let mut energy = Vec::with_capacity(horizon + 1);
    energy.push(state.energy);
    for t in 1..=horizon {
        let (bid, ask) = prices[t - 1];
        let sol = policy.solve_at_prices(t, nodes[t - 1], state, bid, ask)?;
        let net = complementary_control(sol.controls.buy, sol.controls.sell, battery);
        let change = if net >= 0.0 {
            battery.charge_eff * net
        } else {
            battery.discharge_eff * net
        };
        let mut e = battery.leak_factor() * state.energy + change;
        let slack = 1e-9 * (1.0 + battery.capacity);
        if e < -slack || e > battery.capacity + slack {
            return Err(Error::Infeasible);
        }
        e = e.clamp(0.0, battery.capacity);
        state = State::new(state.wealth + net_cash_flow(net, bid, ask), e);
        net_controls.push(net);
        energy.push(e);
    }
    Ok(ScenarioOutcome {
        terminal_wealth: state.wealth,
        utility: problem.utility.utility(state.wealth),
        deviations,
        net_controls,
        prices,
        energy,
    })
}

/// Scenario `scenario` of an out-of-sample run seeded with `base_seed`.
pub fn simulate_out_of_sample(policy: &Policy, scenario: usize, base_seed: u64) -> Result<ScenarioOutcome> {
    let model = &policy.problem().model;
    let chain = policy.chain();
    let horizon = chain.horizon;
    let mut rng = scenario_rng(base_seed, scenario, 0);
    let deviations = deviation_path_with(model, horizon, &mut rng);
    let mut nodes = Vec::with_capacity(horizon);
    let mut prices = Vec::with_capacity(horizon);
    for (t, &xi) in (1..=horizon).zip(&deviations) {
        nodes.push(nearest_node(chain, t, xi)?);
        prices.push(model.bid_ask(t, xi)?);
    }
    run_path(policy, deviations, &nodes, prices)
}

/// Scenario `scenario` of the in-sample analogue: the node path is drawn
/// from the chain and prices sit exactly on the nodes.
pub fn simulate_in_sample(policy: &Policy, scenario: usize, base_seed: u64) -> Result<ScenarioOutcome> {
    let model = &policy.problem().model;
    let chain = policy.chain();
    let horizon = chain.horizon;
    let mut rng = scenario_rng(base_seed, scenario, 1);
    let mut node = 0;
    let mut nodes = Vec::with_capacity(horizon);
    let mut deviations = Vec::with_capacity(horizon);
    let mut prices = Vec::with_capacity(horizon);
    for t in 0..horizon {
        node = sample_index(chain.transition_row(t, node)?, rng.random::<f64>());
        let xi = chain.nodes[t + 1][node];
        nodes.push(node);
        deviations.push(xi);
        prices.push(model.bid_ask(t + 1, xi)?);
    }
    run_path(policy, deviations, &nodes, prices)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimulationReport {
    pub n_scenarios: usize,
    pub mean_utility: f64,
    pub std_error: f64,
    pub mean_wealth: f64,
    /// Indexed by scenario.
    pub terminal_wealths: Vec<f64>,
    pub utilities: Vec<f64>,
    pub in_sample_mean: f64,
    pub in_sample_std_error: f64,
}

/// Sample mean and standard error of the mean.
pub fn mean_and_std_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, libm::sqrt(var / n as f64))
}

impl SimulationReport {
    /// Aggregates outcomes listed in scenario order.
    pub fn from_outcomes(out_of_sample: &[ScenarioOutcome], in_sample: &[ScenarioOutcome]) -> Result<Self> {
        if out_of_sample.is_empty() || in_sample.is_empty() {
            return Err(Error::InvalidParameter("at least one scenario is required"));
        }
        let terminal_wealths: Vec<f64> = out_of_sample.iter().map(|o| o.terminal_wealth).collect();
        let utilities: Vec<f64> = out_of_sample.iter().map(|o| o.utility).collect();
        let in_utilities: Vec<f64> = in_sample.iter().map(|o| o.utility).collect();
        let (mean_utility, std_error) = mean_and_std_error(&utilities);
        let (in_sample_mean, in_sample_std_error) = mean_and_std_error(&in_utilities);
        Ok(Self {
            n_scenarios: out_of_sample.len(),
            mean_utility,
            std_error,
            mean_wealth: mean_and_std_error(&terminal_wealths).0,
            terminal_wealths,
            utilities,
            in_sample_mean,
            in_sample_std_error,
        })
    }
}

/// `n_scenarios` out-of-sample days plus as many in-sample ones.
pub fn evaluate_out_of_sample(policy: &Policy, n_scenarios: usize, rng_seed: u64) -> Result<SimulationReport> {
    if n_scenarios == 0 {
        return Err(Error::InvalidParameter("n_scenarios must be at least 1"));
    }
    policy.bound()?;
    let oos = (0..n_scenarios)
        .map(|k| simulate_out_of_sample(policy, k, rng_seed))
        .collect::<Result<Vec<_>>>()?;
    let ins = (0..n_scenarios)
        .map(|k| simulate_in_sample(policy, k, rng_seed))
        .collect::<Result<Vec<_>>>()?;
    SimulationReport::from_outcomes(&oos, &ins)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl DensityEstimate {
    /// Trapezoidal integral of the density over the grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
            .sum()
    }
}

/// Gaussian KDE with Silverman's bandwidth `1.06 std n^(-1/5)` on an even
/// grid over `[min - 3 bw, max + 3 bw]`.
pub fn kernel_density(samples: &[f64], grid_points: usize) -> Result<DensityEstimate> {
    let n = samples.len();
    if n < 2 || grid_points < 16 || samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateSample);
    }
    let (mean, se) = mean_and_std_error(samples);
    let std = se * libm::sqrt(n as f64);
    if !(std > 0.0) || !mean.is_finite() {
        return Err(Error::DegenerateSample);
    }
    let bw = 1.06 * std * libm::pow(n as f64, -0.2);
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * bw;
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * bw;
    let step = (hi - lo) / (grid_points - 1) as f64;
    let norm = 1.0 / (n as f64 * bw * libm::sqrt(2.0 * core::f64::consts::PI));
    let grid: Vec<f64> = (0..grid_points).map(|k| lo + step * k as f64).collect();
    let density = grid
        .iter()
        .map(|&x| {
            norm * samples
                .iter()
                .map(|&s| {
                    let z = (x - s) / bw;
                    libm::exp(-0.5 * z * z)
                })
                .sum::<f64>()
        })
        .collect();
    Ok(DensityEstimate {
        grid,
        density,
        bandwidth: bw,
    })
}

/// Linearly interpolated empirical quantile (the usual "type 7" rule).
pub fn quantile(samples: &[f64], q: f64) -> Result<f64> {
    if samples.is_empty() || !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidParameter("quantile needs samples and q in [0, 1]"));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let h = (s.len() - 1) as f64 * q;
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(s.len() - 1);
    Ok(s[lo] + (h - lo as f64) * (s[hi] - s[lo]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TailRow {
    pub rho: f64,
    pub quantile: f64,
    pub value: f64,
}

/// Lower terminal-wealth quantile per risk aversion, sorted by `rho`.
pub fn tail_comparison(reports: &[(f64, SimulationReport)], q: f64) -> Result<Vec<TailRow>> {
    if reports.len() < 2 || !(q > 0.0 && q < 0.5) {
        return Err(Error::InvalidParameter("need two risk aversions and 0 < q < 0.5"));
    }
    let mut rows = reports
        .iter()
        .map(|(rho, r)| {
            Ok(TailRow {
                rho: *rho,
                quantile: q,
                value: quantile(&r.terminal_wealths, q)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.rho.total_cmp(&b.rho));
    Ok(rows)
}
