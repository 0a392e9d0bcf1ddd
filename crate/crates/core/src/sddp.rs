//! Markov-chain SDDP training.
//!
//! `pools[t][j]` holds the cuts of the stage-`t` cost-to-go at chain node
//! `j`, for `t = 0..T` (stage 0 has only the root). The stage-`T` cost is the
//! exact terminal cost and has no pool.
//!
//! Cuts bound `ln(1 + rho J)` rather than `J`. Under exponential utility
//! trades do not depend on wealth and `1 + rho J` scales by `exp(-rho d)`
//! when wealth grows by `d`, so in the logarithm every cut has wealth slope
//! exactly `-rho`: the terminal cost is the single cut `-rho x`, an
//! expectation over successors is a log-sum-exp, and nothing depends on the
//! magnitude of wealth. Affine cuts on `J` itself carry slopes
//! `-exp(-rho x)`, which leave the range an LP can resolve once `rho` times
//! the day's profit reaches a few tens.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::MarkovChain;
use crate::error::{Error, Result};
use crate::price_model::PriceModel;
use crate::stage::{solve_successor, Controls, Cut, NextValue, SolveOptions, State, SuccessorSolution};
use crate::storage::{check_spread_condition, BatterySpec, StageData, UtilitySpec};

/// Everything that defines one storage valuation problem.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Problem {
    pub model: PriceModel,
    pub battery: BatterySpec,
    pub utility: UtilitySpec,
    /// Stored energy at the start of the day.
    pub initial_energy: f64,
    /// Add the backward-pass cut to every node of the stage, not only the
    /// visited one. All nodes of a stage share their successors, so the
    /// successor solves at the visited state bound each of them.
    pub share_cuts: bool,
}

impl Problem {
    pub fn new(model: PriceModel, battery: BatterySpec, utility: UtilitySpec) -> Result<Self> {
        let p = Self {
            model,
            battery,
            utility,
            initial_energy: 0.0,
            share_cuts: true,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.battery.validate()?;
        self.utility.validate()?;
        if !(self.initial_energy >= 0.0 && self.initial_energy <= self.battery.capacity) {
            return Err(Error::InvalidParameter("initial_energy must lie in [0, capacity]"));
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.model.horizon()
    }

    pub fn initial_state(&self) -> State {
        State::new(self.utility.initial_wealth, self.initial_energy)
    }

    /// Wealth interval no trading policy can leave: ten times the largest
    /// cash flow a day of full-speed trading at a five-sigma price can make.
    pub fn wealth_box(&self) -> (f64, f64) {
        let m = &self.model;
        let peak = m.day_ahead.iter().fold(0.0f64, |acc, s| acc.max(s.abs()));
        let speed = self.battery.max_charge.max(self.battery.max_discharge);
        let radius =
            10.0 * m.horizon() as f64 * (peak + 5.0 * m.innovation_std + m.spread) * speed;
        let x0 = self.utility.initial_wealth;
        (x0 - radius, x0 + radius)
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            wealth_box: Some(self.wealth_box()),
            ..SolveOptions::for_utility(&self.utility)
        }
    }

    /// Stage data of every chain node, `data[t - 1][i]` for stage `t`.
    /// Fails if the spread condition breaks anywhere.
    pub fn stage_data(&self, chain: &MarkovChain) -> Result<Vec<Vec<StageData>>> {
        let horizon = self.horizon();
        if chain.horizon != horizon {
            return Err(Error::LengthMismatch {
                expected: horizon,
                found: chain.horizon,
            });
        }
        let mut out = Vec::with_capacity(horizon);
        for t in 1..=horizon {
            let mut row = Vec::with_capacity(chain.node_count(t));
            for (i, &xi) in chain.nodes[t].iter().enumerate() {
                let (bid, ask) = self.model.bid_ask(t, xi)?;
                let data = StageData::new(t, i, bid, ask, &self.battery);
                if !check_spread_condition(&data) {
                    return Err(Error::ConditionViolated { stage: t, node: i });
                }
                row.push(data);
            }
            out.push(row);
        }
        Ok(out)
    }
}

/// Cuts on `ln(1 + rho J_t)` per stage and node.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CutPool {
    /// `pools[t][j]`, `t = 0..T`.
    pub pools: Vec<Vec<Vec<Cut>>>,
    /// Number of completed training iterations that fed the pool.
    pub generation: usize,
}

impl CutPool {
    pub fn empty(chain: &MarkovChain) -> Self {
        Self {
            pools: (0..chain.horizon)
                .map(|t| vec![Vec::new(); chain.node_count(t)])
                .collect(),
            generation: 0,
        }
    }

    pub fn horizon(&self) -> usize {
        self.pools.len()
    }

    pub fn cuts(&self, stage: usize, node: usize) -> Result<&[Cut]> {
        self.pools
            .get(stage)
            .and_then(|p| p.get(node))
            .map(Vec::as_slice)
            .ok_or(Error::NodeOutOfRange { stage, node })
    }

    pub fn total_cuts(&self) -> usize {
        self.pools.iter().flatten().map(Vec::len).sum()
    }

    /// Bound on `ln(1 + rho J)` at `(stage, node)`; `-inf` without cuts.
    pub fn log_value(&self, stage: usize, node: usize, state: State) -> Result<f64> {
        Ok(self
            .cuts(stage, node)?
            .iter()
            .map(|c| c.eval(state))
            .fold(f64::NEG_INFINITY, f64::max))
    }

    fn check_shape(&self, chain: &MarkovChain) -> Result<()> {
        if self.pools.len() != chain.horizon {
            return Err(Error::LengthMismatch {
                expected: chain.horizon,
                found: self.pools.len(),
            });
        }
        for (t, p) in self.pools.iter().enumerate() {
            if p.len() != chain.node_count(t) {
                return Err(Error::LengthMismatch {
                    expected: chain.node_count(t),
                    found: p.len(),
                });
            }
        }
        Ok(())
    }
}

/// Per-iteration record. `bounds` are in maximization orientation (expected
/// utility), as are `sampled_utilities`.
///
/// For strongly risk-averse problems the bound sits within rounding of
/// `1/rho`; `certainty_equivalents` carry the same information without the
/// cancellation.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainingLog {
    pub bounds: Vec<f64>,
    /// Certainty-equivalent wealth of the bound, `-ln(1 - rho bound) / rho`.
    pub certainty_equivalents: Vec<f64>,
    /// Terminal wealth reached on the forward path, and its utility.
    pub sampled_wealths: Vec<f64>,
    pub sampled_utilities: Vec<f64>,
    /// Clock reading after each iteration, relative to the start.
    pub seconds: Vec<f64>,
    pub cut_counts: Vec<usize>,
}

impl TrainingLog {
    pub fn iterations(&self) -> usize {
        self.bounds.len()
    }

    /// Largest relative bound change over the last `window` iterations.
    pub fn tail_relative_change(&self, window: usize) -> Option<f64> {
        let n = self.bounds.len();
        if n < 2 {
            return None;
        }
        let start = n.saturating_sub(window + 1);
        Some(
            self.bounds[start..]
                .windows(2)
                .map(|w| (w[1] - w[0]).abs() / w[0].abs().max(1e-12))
                .fold(0.0, f64::max),
        )
    }
}

/// Trained cut pools bundled with the data they approximate.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    problem: Problem,
    chain: MarkovChain,
    pool: CutPool,
    stage_data: Vec<Vec<StageData>>,
    /// `ln(1 + rho J_T) = -rho x`.
    terminal: [Cut; 1],
}

impl Policy {
    /// Reassemble a policy from stored cuts, e.g. a checkpoint.
    pub fn from_parts(problem: Problem, chain: MarkovChain, pool: CutPool) -> Result<Self> {
        problem.validate()?;
        pool.check_shape(&chain)?;
        if pool.pools.iter().flatten().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("checkpoint contains non-finite values"));
        }
        let stage_data = problem.stage_data(&chain)?;
        let terminal = [Cut {
            intercept: 0.0,
            grad_wealth: -problem.utility.risk_aversion,
            grad_energy: 0.0,
            origin_iteration: 0,
        }];
        Ok(Self {
            problem,
            chain,
            pool,
            stage_data,
            terminal,
        })
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn chain(&self) -> &MarkovChain {
        &self.chain
    }

    pub fn pool(&self) -> &CutPool {
        &self.pool
    }

    pub fn into_pool(self) -> CutPool {
        self.pool
    }

    fn rho(&self) -> f64 {
        self.problem.utility.risk_aversion
    }

    pub fn stage_data(&self, stage: usize, node: usize) -> Result<&StageData> {
        if stage == 0 || stage > self.chain.horizon {
            return Err(Error::StageOutOfRange {
                stage,
                horizon: self.chain.horizon,
            });
        }
        self.stage_data[stage - 1]
            .get(node)
            .ok_or(Error::NodeOutOfRange { stage, node })
    }

    /// Approximate cost-to-go at `(stage, node)`, `stage < T`.
    pub fn cost_to_go(&self, stage: usize, node: usize, state: State) -> Result<f64> {
        let l = self.pool.log_value(stage, node, state)?;
        Ok(libm::expm1(l) / self.rho())
    }

    /// Root value in maximization orientation.
    pub fn bound(&self) -> Result<f64> {
        if self.pool.generation == 0 {
            return Err(Error::NotTrained);
        }
        Ok(-self.cost_to_go(0, 0, self.problem.initial_state())?)
    }

    /// Wealth whose sure utility equals the bound. Exact where the bound
    /// itself rounds to `1/rho`.
    pub fn certainty_equivalent(&self) -> Result<f64> {
        if self.pool.generation == 0 {
            return Err(Error::NotTrained);
        }
        let l = self.pool.log_value(0, 0, self.problem.initial_state())?;
        Ok(-l / self.rho())
    }

    /// Successor problem into `(stage, node)` with value and subgradient
    /// on `ln(1 + rho J)`.
    fn solve_log(&self, stage: usize, node: usize, state: State, data: &StageData) -> Result<SuccessorSolution> {
        let cuts = if stage == self.chain.horizon {
            &self.terminal[..]
        } else {
            &self.pool.pools[stage][node][..]
        };
        solve_successor(
            state,
            data,
            NextValue::LogCuts { cuts, rho: self.rho() },
            &self.problem.solve_options(),
        )
    }

    /// As [`Policy::solve_log`] with value and subgradient on `J`.
    fn solve_into(&self, stage: usize, node: usize, state: State, data: &StageData) -> Result<SuccessorSolution> {
        let mut sol = self.solve_log(stage, node, state, data)?;
        let rho = self.rho();
        let level = libm::exp(sol.value) / rho;
        sol.value = libm::expm1(sol.value) / rho;
        sol.subgradient = (level * sol.subgradient.0, level * sol.subgradient.1);
        Ok(sol)
    }

    /// Trade at stage `stage` (1..=T) after the chain has moved to `node`,
    /// with the incoming state, at arbitrary prices. The trained cost-to-go
    /// of `(stage, node)` prices the future.
    pub fn solve_at_prices(
        &self,
        stage: usize,
        node: usize,
        state: State,
        bid: f64,
        ask: f64,
    ) -> Result<SuccessorSolution> {
        let base = self.stage_data(stage, node)?;
        let data = StageData { bid, ask, ..*base };
        self.solve_into(stage, node, state, &data)
    }
}

/// Controls at stage `stage` (1..=T), chain node `node` of that stage, given
/// the state carried in from the previous stage.
pub fn decide(policy: &Policy, stage: usize, node: usize, state: State) -> Result<Controls> {
    let data = policy.stage_data(stage, node)?;
    Ok(policy.solve_log(stage, node, state, data)?.controls)
}

/// Last reported bound of a training run.
pub fn bound(log: &TrainingLog) -> Result<f64> {
    log.bounds.last().copied().ok_or(Error::NotTrained)
}

pub fn train(
    problem: &Problem,
    chain: &MarkovChain,
    iterations: usize,
    rng_seed: u64,
) -> Result<(Policy, TrainingLog)> {
    train_with_clock(problem, chain, iterations, rng_seed, &mut || 0.0)
}

/// [`train`] with a caller-supplied clock (seconds) for the timing column.
pub fn train_with_clock(
    problem: &Problem,
    chain: &MarkovChain,
    iterations: usize,
    rng_seed: u64,
    clock: &mut dyn FnMut() -> f64,
) -> Result<(Policy, TrainingLog)> {
    let policy = Policy::from_parts(problem.clone(), chain.clone(), CutPool::empty(chain))?;
    continue_training(policy, iterations, rng_seed, clock)
}

/// Runs `iterations` more passes on an existing policy. Iteration numbers
/// (and so the sampled paths) continue from the pool's generation counter.
pub fn continue_training(
    mut policy: Policy,
    iterations: usize,
    rng_seed: u64,
    clock: &mut dyn FnMut() -> f64,
) -> Result<(Policy, TrainingLog)> {
    if iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be at least 1"));
    }
    let horizon = policy.chain.horizon;
    let start = clock();
    let mut log = TrainingLog::default();
    let mut path = vec![0usize; horizon + 1];
    let mut states = vec![State::default(); horizon + 1];

    for _ in 0..iterations {
        let k = policy.pool.generation;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        rng.set_stream(k as u64);

        states[0] = policy.problem.initial_state();
        for t in 0..horizon {
            let row = policy.chain.transition_row(t, path[t])?;
            let i = sample_index(row, rng.random::<f64>());
            let sol = policy.solve_log(t + 1, i, states[t], &policy.stage_data[t][i])?;
            path[t + 1] = i;
            states[t + 1] = sol.next_state;
        }
        let wealth = states[horizon].wealth;
        log.sampled_wealths.push(wealth);
        log.sampled_utilities.push(policy.problem.utility.utility(wealth));

        for t in (0..horizon).rev() {
            backward_step(&mut policy, t, path[t], states[t], k + 1)?;
        }
        policy.pool.generation += 1;

        log.bounds.push(policy.bound()?);
        log.certainty_equivalents.push(policy.certainty_equivalent()?);
        log.seconds.push(clock() - start);
        log.cut_counts.push(policy.pool.total_cuts());
    }
    Ok((policy, log))
}

/// Adds the cut(s) of stage `t` at `state`, reached through node `visited`.
/// With `L_i` the successor logarithms, the node's `ln(1 + rho J)` is
/// `ln sum_i p_i exp(L_i)`, convex, with gradient the `p_i exp(L_i)`-weighted
/// mean of the successor gradients.
fn backward_step(policy: &mut Policy, t: usize, visited: usize, state: State, iteration: usize) -> Result<()> {
    let chain = &policy.chain;
    let share = policy.problem.share_cuts && chain.node_count(t) > 1;
    let visited_row = chain.transition_row(t, visited)?;
    let mut solved: Vec<Option<SuccessorSolution>> = Vec::with_capacity(chain.node_count(t + 1));
    for i in 0..chain.node_count(t + 1) {
        let needed = if share {
            chain.transitions[t].iter().any(|row| row[i] > 0.0)
        } else {
            visited_row[i] > 0.0
        };
        solved.push(if needed {
            Some(policy.solve_log(t + 1, i, state, &policy.stage_data[t][i])?)
        } else {
            None
        });
    }

    let cut_for = |row: &[f64]| {
        let terms = || {
            row.iter()
                .zip(&solved)
                .filter_map(|(p, sol)| sol.as_ref().filter(|_| *p > 0.0).map(|s| (*p, s)))
        };
        let top = terms().map(|(_, s)| s.value).fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            // every successor still on the floor: nothing to learn
            return None;
        }
        let (mut mass, mut row_mass, mut gm, mut ge) = (0.0, 0.0, 0.0, 0.0);
        for (p, s) in terms() {
            let w = p * libm::exp(s.value - top);
            mass += w;
            row_mass += p;
            gm += w * s.subgradient.0;
            ge += w * s.subgradient.1;
        }
        // Dividing by the row mass keeps equal successor values exact.
        let value = top + libm::log(mass / row_mass);
        let (gm, ge) = (gm / mass, ge / mass);
        Some(Cut {
            intercept: value - gm * state.wealth - ge * state.energy,
            grad_wealth: gm,
            grad_energy: ge,
            origin_iteration: iteration,
        })
    };
    if share {
        let cuts: Vec<Option<Cut>> = chain.transitions[t].iter().map(|row| cut_for(row)).collect();
        for (pool, cut) in policy.pool.pools[t].iter_mut().zip(cuts) {
            pool.extend(cut);
        }
    } else if let Some(cut) = cut_for(visited_row) {
        policy.pool.pools[t][visited].push(cut);
    }
    Ok(())
}

/// Inverse-CDF draw from a probability row. Rounding slack at the top end
/// falls on the last positive entry.
pub(crate) fn sample_index(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}
