//! Shared fixtures and an exhaustive scenario-tree oracle.
//!
//! The oracle solves the complementary (one-sided) problem by dynamic
//! programming over the chain. Exponential utility factors the cost-to-go as
//! `J_t(x_m, x_e, j) = exp(-rho x_m) G_t(x_e, j) - 1/rho` with `G_T = 1/rho`
//! and `G_t(x_e, j) = sum_i p_ji min_U exp(rho cost_i(U)) G_{t+1}(x_e', i)`,
//! so only the energy dimension is tabulated. Minima are taken over a
//! control grid (step <= 1e-3, endpoints and zero included) and polished by
//! golden section; both only overestimate the true minimum.
#![allow(dead_code)]

use battery_sddp_core::{
    build_chain, synthetic_day_ahead, BatterySpec, MarkovChain, PriceModel, Problem, State,
    UtilitySpec,
};

pub const SIGMA: f64 = 5.0;
pub const A: f64 = 0.48;

pub fn problem_with(day_ahead: Vec<f64>, sigma: f64, rho: f64, alpha: f64) -> Problem {
    let model = PriceModel::new(day_ahead, A, sigma, 1.0, 0.0).unwrap();
    let battery = BatterySpec::with_speed_fraction(1.0, alpha, 0.95, 1.05, 0.0).unwrap();
    Problem::new(model, battery, UtilitySpec::new(rho, 0.0).unwrap()).unwrap()
}

pub fn chain_for(problem: &Problem, n: usize) -> MarkovChain {
    let m = &problem.model;
    let sampling = if n == 1 { 0.0 } else { m.stationary_std().unwrap() };
    build_chain(m, n, sampling, m.horizon()).unwrap()
}

/// T = 3, N = 2 instance used throughout the tests.
pub fn toy(n: usize) -> (Problem, MarkovChain) {
    let p = problem_with(vec![40.0, 30.0, 55.0], SIGMA, 0.03, 0.4);
    let c = chain_for(&p, n);
    (p, c)
}

/// 24-hour instance on the synthetic day-ahead curve.
pub fn day(n: usize, rho: f64, alpha: f64) -> (Problem, MarkovChain) {
    let p = problem_with(synthetic_day_ahead(24), SIGMA, rho, alpha);
    let c = chain_for(&p, n);
    (p, c)
}

pub struct TreeOracle {
    rho: f64,
    leak: f64,
    cp: f64,
    cm: f64,
    cap: f64,
    umax_c: f64,
    umax_d: f64,
    /// `prices[t - 1][i]`: bid and ask at stage `t`, node `i`.
    prices: Vec<Vec<(f64, f64)>>,
    transitions: Vec<Vec<Vec<f64>>>,
    /// `tables[t][j]` samples `G_t(., j)` on the energy grid, `1 <= t < T`.
    tables: Vec<Vec<Vec<f64>>>,
    step: f64,
    horizon: usize,
}

const CONTROL_STEP: f64 = 1e-3;
const INV_PHI: f64 = 0.618_033_988_749_894_9;

impl TreeOracle {
    pub fn new(problem: &Problem, chain: &MarkovChain, energy_step: f64) -> Self {
        let m = &problem.model;
        let b = &problem.battery;
        let horizon = chain.horizon;
        let prices = (1..=horizon)
            .map(|t| chain.nodes[t].iter().map(|&xi| m.bid_ask(t, xi).unwrap()).collect())
            .collect();
        let mut o = Self {
            rho: problem.utility.risk_aversion,
            leak: b.leak_factor(),
            cp: b.charge_eff,
            cm: b.discharge_eff,
            cap: b.capacity,
            umax_c: b.max_charge,
            umax_d: b.max_discharge,
            prices,
            transitions: chain.transitions.clone(),
            tables: vec![Vec::new(); horizon],
            step: energy_step,
            horizon,
        };
        let points = (o.cap / energy_step).round() as usize + 1;
        for t in (1..horizon).rev() {
            let nodes = chain.node_count(t);
            let mut table = vec![vec![0.0; points]; nodes];
            for k in 0..points {
                let xe = (k as f64 * energy_step).min(o.cap);
                let mins: Vec<f64> = (0..chain.node_count(t + 1))
                    .map(|i| o.successor_min(t + 1, i, xe).1)
                    .collect();
                for (j, col) in table.iter_mut().enumerate() {
                    col[k] = o.transitions[t][j]
                        .iter()
                        .zip(&mins)
                        .map(|(p, v)| p * v)
                        .sum();
                }
            }
            o.tables[t] = table;
        }
        o
    }

    fn g(&self, t: usize, j: usize, xe: f64) -> f64 {
        if t == self.horizon {
            return 1.0 / self.rho;
        }
        let table = &self.tables[t][j];
        let pos = (xe / self.step).clamp(0.0, (table.len() - 1) as f64);
        let k = (pos.floor() as usize).min(table.len() - 2);
        let w = pos - k as f64;
        table[k] * (1.0 - w) + table[k + 1] * w
    }

    fn feasible_range(&self, xe: f64) -> (f64, f64) {
        let e = self.leak * xe;
        let lo = (-self.umax_d).max(-e / self.cm);
        let hi = self.umax_c.min((self.cap - e) / self.cp);
        (lo.min(0.0), hi.max(0.0))
    }

    pub fn cash(&self, stage: usize, node: usize, u: f64) -> f64 {
        let (bid, ask) = self.prices[stage - 1][node];
        if u >= 0.0 {
            -ask * u
        } else {
            -bid * u
        }
    }

    pub fn next_energy(&self, xe: f64, u: f64) -> f64 {
        let c = if u >= 0.0 { self.cp * u } else { self.cm * u };
        (self.leak * xe + c).clamp(0.0, self.cap)
    }

    fn objective(&self, stage: usize, node: usize, xe: f64, u: f64) -> f64 {
        libm::exp(-self.rho * self.cash(stage, node, u)) * self.g(stage, node, self.next_energy(xe, u))
    }

    /// Best net control at stage `stage` (1..=T) and node `node`, with the
    /// minimized factor `exp(rho cost) G_stage`.
    pub fn successor_min(&self, stage: usize, node: usize, xe: f64) -> (f64, f64) {
        let (lo, hi) = self.feasible_range(xe);
        let f = |u: f64| self.objective(stage, node, xe, u);
        let n = ((hi - lo) / CONTROL_STEP).ceil().max(1.0) as usize;
        let h = (hi - lo) / n as f64;
        let mut best = (0.0, f(0.0));
        for k in 0..=n {
            let u = if k == n { hi } else { lo + h * k as f64 };
            let v = f(u);
            if v < best.1 {
                best = (u, v);
            }
        }
        let (mut a, mut b) = ((best.0 - h).max(lo), (best.0 + h).min(hi));
        let mut c = b - INV_PHI * (b - a);
        let mut d = a + INV_PHI * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        for _ in 0..80 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - INV_PHI * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + INV_PHI * (b - a);
                fd = f(d);
            }
        }
        for (u, v) in [(c, fc), (d, fd)] {
            if v < best.1 {
                best = (u, v);
            }
        }
        best
    }

    /// `G_t(x_e, j)` for any `t < T`, including the root stage.
    pub fn g_at(&self, t: usize, j: usize, xe: f64) -> f64 {
        self.transitions[t][j]
            .iter()
            .enumerate()
            .map(|(i, p)| if *p > 0.0 { p * self.successor_min(t + 1, i, xe).1 } else { 0.0 })
            .sum()
    }

    /// Cost-to-go of stage `t` (0..T) at node `j`, minimization orientation.
    pub fn cost_to_go(&self, t: usize, j: usize, state: State) -> f64 {
        libm::exp(-self.rho * state.wealth) * self.g_at(t, j, state.energy) - 1.0 / self.rho
    }

    /// Optimal expected utility from the root.
    pub fn optimum(&self, state: State) -> f64 {
        -self.cost_to_go(0, 0, state)
    }

    /// Net control the oracle picks at stage `stage`, node `node`.
    pub fn decision(&self, stage: usize, node: usize, energy: f64) -> f64 {
        self.successor_min(stage, node, energy).0
    }
}

/// Expected utility of a policy given as a net control per (stage, node,
/// energy), by enumerating every chain path. Controls are clipped to the
/// feasible range.
pub fn policy_utility(
    problem: &Problem,
    chain: &MarkovChain,
    policy: &mut dyn FnMut(usize, usize, f64) -> f64,
) -> f64 {
    let o = TreeOracle {
        rho: problem.utility.risk_aversion,
        leak: problem.battery.leak_factor(),
        cp: problem.battery.charge_eff,
        cm: problem.battery.discharge_eff,
        cap: problem.battery.capacity,
        umax_c: problem.battery.max_charge,
        umax_d: problem.battery.max_discharge,
        prices: (1..=chain.horizon)
            .map(|t| {
                chain.nodes[t]
                    .iter()
                    .map(|&xi| problem.model.bid_ask(t, xi).unwrap())
                    .collect()
            })
            .collect(),
        transitions: chain.transitions.clone(),
        tables: Vec::new(),
        step: 1.0,
        horizon: chain.horizon,
    };
    fn walk(
        o: &TreeOracle,
        problem: &Problem,
        policy: &mut dyn FnMut(usize, usize, f64) -> f64,
        t: usize,
        j: usize,
        state: State,
        prob: f64,
    ) -> f64 {
        if t == o.horizon {
            return prob * problem.utility.utility(state.wealth);
        }
        let mut acc = 0.0;
        for (i, &p) in o.transitions[t][j].iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let (lo, hi) = o.feasible_range(state.energy);
            let u = policy(t + 1, i, state.energy).clamp(lo, hi);
            let next = State::new(state.wealth + o.cash(t + 1, i, u), o.next_energy(state.energy, u));
            acc += walk(o, problem, policy, t + 1, i, next, prob * p);
        }
        acc
    }
    walk(&o, problem, policy, 0, 0, problem.initial_state(), 1.0)
}
