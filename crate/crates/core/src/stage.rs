//! One Bellman stage of the battery problem.
//!
//! Prices of stage `t + 1` are observed before trading, so the stage value at
//! `(state, node j)` decomposes into one deterministic LP per successor node
//! `i`, weighted by the transition probabilities. Each successor LP has the
//! variables `(buy, sell, theta)`: `theta` is the epigraph of the next
//! cost-to-go, bounded below by `-1/rho`. Cuts are loaded lazily: the LP is
//! re-solved with the most violated cut until none is violated. At the last
//! stage the "cuts" are exact tangents of the exponential terminal cost
//! (Kelley's method).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpError, LpSolution, RowKind};
use crate::storage::{terminal_cost, terminal_cost_derivative, StageData, UtilitySpec};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct State {
    pub wealth: f64,
    pub energy: f64,
}

impl State {
    pub fn new(wealth: f64, energy: f64) -> Self {
        Self { wealth, energy }
    }
}

/// Energy bought (`buy`) and sold (`sell`) in one stage, both nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Controls {
    pub buy: f64,
    pub sell: f64,
}

/// Affine lower bound `intercept + grad . state` on a cost-to-go function.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Cut {
    pub intercept: f64,
    pub grad_wealth: f64,
    pub grad_energy: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub origin_iteration: usize,
}

impl Cut {
    pub fn eval(&self, state: State) -> f64 {
        self.intercept + self.grad_wealth * state.wealth + self.grad_energy * state.energy
    }

    pub fn is_finite(&self) -> bool {
        self.intercept.is_finite() && self.grad_wealth.is_finite() && self.grad_energy.is_finite()
    }
}

/// Max over a cut slice; `-inf` when empty.
pub fn polyhedral_value(cuts: &[Cut], state: State) -> f64 {
    cuts.iter().map(|c| c.eval(state)).fold(f64::NEG_INFINITY, f64::max)
}

/// What lies after the successor's trade.
#[derive(Debug, Clone, Copy)]
pub enum NextValue<'a> {
    /// Polyhedral approximation of the stage `t + 1` cost-to-go at the node.
    Cuts(&'a [Cut]),
    /// Exact exponential terminal cost.
    Terminal(&'a UtilitySpec),
    /// Cuts on `ln(1 + rho J)` for an exponential-utility cost-to-go `J`.
    /// Since `J(x) + 1/rho` scales by `exp(-rho d)` when wealth grows by
    /// `d`, every such cut has wealth slope `-rho` and the successor problem
    /// is an LP in that logarithm. Value and subgradient of the solution
    /// refer to the logarithm too; with no cuts the value is `-inf`, the
    /// floor `J = -1/rho`.
    LogCuts { cuts: &'a [Cut], rho: f64 },
}

/// Epigraph description the LP works with.
#[derive(Debug, Clone, Copy)]
enum Epigraph<'a> {
    Cuts(&'a [Cut]),
    Terminal(&'a UtilitySpec),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Lower bound on the epigraph variable (`-1/rho`).
    pub theta_floor: f64,
    /// Admissible incoming wealth interval.
    pub wealth_box: Option<(f64, f64)>,
    pub kelley_tol: f64,
    pub kelley_max_iter: usize,
}

impl SolveOptions {
    pub fn for_utility(utility: &UtilitySpec) -> Self {
        Self {
            theta_floor: utility.cost_lower_bound(),
            wealth_box: None,
            kelley_tol: 1e-8,
            kelley_max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuccessorSolution {
    pub node: usize,
    pub controls: Controls,
    /// Optimal LP value: a lower bound on the true successor value.
    pub value: f64,
    /// `(d/d wealth, d/d energy)` of the value at the incoming state.
    pub subgradient: (f64, f64),
    pub next_state: State,
    /// Number of lazy rows (cuts or tangents) the LP needed.
    pub rounds: usize,
    /// Best objective minus LP bound after each round (terminal stage only).
    pub gaps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSolution {
    pub value: f64,
    pub state_subgradient: (f64, f64),
    pub successors: Vec<SuccessorSolution>,
}

impl StageSolution {
    /// Cut on the stage cost-to-go generated at `state`.
    pub fn cut_at(&self, state: State, iteration: usize) -> Cut {
        let (gm, ge) = self.state_subgradient;
        Cut {
            intercept: self.value - gm * state.wealth - ge * state.energy,
            grad_wealth: gm,
            grad_energy: ge,
            origin_iteration: iteration,
        }
    }
}

fn map_lp(e: LpError) -> Error {
    match e {
        LpError::Infeasible => Error::Infeasible,
        LpError::Unbounded | LpError::BadBounds => Error::Unbounded,
        LpError::IterationLimit => Error::MaxIterations(0),
    }
}

struct LazyLp<'a> {
    data: &'a StageData,
    state: State,
    next: Epigraph<'a>,
    lp: LinearProgram,
    /// d rhs / d (wealth, energy) per row.
    row_grads: Vec<(f64, f64)>,
    added: Vec<usize>,
    tangent_points: Vec<State>,
    rounds: usize,
    max_rounds: usize,
    tol: f64,
    /// Objective size of one unit of money, for relative tolerances.
    scale: f64,
    gaps: Vec<f64>,
    best_objective: f64,
}

impl<'a> LazyLp<'a> {
    fn new(data: &'a StageData, state: State, next: Epigraph<'a>, opts: &SolveOptions, scale: f64) -> Self {
        let lf = data.leak_factor;
        let mut lp = LinearProgram::new(
            vec![0.0, 0.0, 1.0],
            vec![0.0, 0.0, opts.theta_floor],
            vec![data.u_max_charge, data.u_max_discharge, f64::INFINITY],
        );
        let energy = vec![data.charge_eff, -data.discharge_eff, 0.0];
        lp.add_row(energy.clone(), RowKind::Ge, -lf * state.energy);
        lp.add_row(energy, RowKind::Le, data.capacity - lf * state.energy);
        let (max_rounds, tol) = match next {
            Epigraph::Cuts(cuts) => (cuts.len() + 8, 1e-12),
            Epigraph::Terminal(_) => (opts.kelley_max_iter, opts.kelley_tol),
        };
        Self {
            data,
            state,
            next,
            lp,
            row_grads: vec![(0.0, -lf), (0.0, -lf)],
            added: Vec::new(),
            tangent_points: Vec::new(),
            rounds: 0,
            max_rounds,
            tol,
            scale,
            gaps: Vec::new(),
            best_objective: f64::INFINITY,
        }
    }

    fn next_state(&self, buy: f64, sell: f64) -> State {
        State {
            wealth: self.data.next_wealth(self.state.wealth, buy, sell),
            energy: self.data.next_energy(self.state.energy, buy, sell),
        }
    }

    fn add_cut(&mut self, cut: &Cut) {
        let d = self.data;
        let (gm, ge) = (cut.grad_wealth, cut.grad_energy);
        self.lp.add_row(
            vec![gm * d.ask - ge * d.charge_eff, -gm * d.bid + ge * d.discharge_eff, 1.0],
            RowKind::Ge,
            cut.eval(State {
                wealth: self.state.wealth,
                energy: d.leak_factor * self.state.energy,
            }),
        );
        self.row_grads.push((gm, ge * d.leak_factor));
    }

    /// Most violated cut at the LP point, if any.
    fn separate(&mut self, sol: &LpSolution, track_gap: bool) -> Result<Option<Cut>> {
        let (buy, sell, theta) = (sol.x[0], sol.x[1], sol.x[2]);
        let next = self.next_state(buy, sell);
        match self.next {
            Epigraph::Cuts(cuts) => {
                let mut best: Option<(usize, f64)> = None;
                for (k, cut) in cuts.iter().enumerate() {
                    let v = cut.eval(next);
                    if best.is_none_or(|(_, bv)| v > bv) {
                        best = Some((k, v));
                    }
                }
                match best {
                    Some((k, v)) if v > theta + self.tol * (self.scale + theta.abs()) && !self.added.contains(&k) => {
                        self.added.push(k);
                        Ok(Some(cuts[k]))
                    }
                    _ => Ok(None),
                }
            }
            Epigraph::Terminal(utility) => {
                let w = next.wealth;
                let f = terminal_cost(utility, w)?;
                if track_gap {
                    self.best_objective = self.best_objective.min(f);
                    self.gaps.push(self.best_objective - theta);
                }
                if f - theta > self.tol * (1.0 + f.abs()) && !self.seen(next) {
                    self.tangent_points.push(next);
                    let slope = terminal_cost_derivative(utility, w)?;
                    Ok(Some(Cut {
                        intercept: f - slope * w,
                        grad_wealth: slope,
                        grad_energy: 0.0,
                        origin_iteration: 0,
                    }))
                } else {
                    Ok(None)
                }
            }
        }
    }

    fn seen(&self, p: State) -> bool {
        self.tangent_points.iter().any(|q| {
            (q.wealth - p.wealth).abs() <= 1e-13 * (1.0 + p.wealth.abs())
                && (q.energy - p.energy).abs() <= 1e-13
        })
    }

    fn solve(&mut self, track_gap: bool) -> Result<LpSolution> {
        loop {
            let sol = self.lp.solve().map_err(map_lp)?;
            match self.separate(&sol, track_gap)? {
                None => return Ok(sol),
                Some(cut) => {
                    self.rounds += 1;
                    if self.rounds > self.max_rounds {
                        return Err(Error::MaxIterations(self.max_rounds));
                    }
                    self.add_cut(&cut);
                }
            }
        }
    }
}

fn check_state(state: State, data: &StageData, opts: &SolveOptions) -> Result<State> {
    let tol = 1e-9 * (1.0 + data.capacity);
    if !(state.energy >= -tol && state.energy <= data.capacity + tol) || !state.wealth.is_finite() {
        return Err(Error::Infeasible);
    }
    if let Some((lo, hi)) = opts.wealth_box {
        if !(state.wealth >= lo && state.wealth <= hi) {
            return Err(Error::Infeasible);
        }
    }
    Ok(State {
        wealth: state.wealth,
        energy: state.energy.clamp(0.0, data.capacity),
    })
}

/// Clamp to `[0, max]` and drop simplex round-off near zero.
fn clean(u: f64, max: f64) -> f64 {
    if u <= 1e-13 * (1.0 + max) {
        0.0
    } else {
        u.min(max)
    }
}

/// Optimal trade for one successor node: minimize the next cost-to-go over
/// the control box and the capacity constraint. Among optimal trades the
/// lexicographically smallest `(buy, sell)` is returned.
pub fn solve_successor(
    state: State,
    data: &StageData,
    next: NextValue<'_>,
    opts: &SolveOptions,
) -> Result<SuccessorSolution> {
    let state = check_state(state, data, opts)?;
    match next {
        NextValue::LogCuts { cuts, rho } => solve_log(state, data, cuts, rho, opts),
        NextValue::Cuts(cuts) => solve_lp(state, data, Epigraph::Cuts(cuts), opts, 1.0),
        NextValue::Terminal(u) => solve_lp(state, data, Epigraph::Terminal(u), opts, 1.0),
    }
}

fn solve_log(state: State, data: &StageData, cuts: &[Cut], rho: f64, opts: &SolveOptions) -> Result<SuccessorSolution> {
    if cuts.is_empty() {
        return Ok(SuccessorSolution {
            node: data.node,
            controls: Controls::default(),
            value: f64::NEG_INFINITY,
            subgradient: (0.0, 0.0),
            next_state: State {
                wealth: data.next_wealth(state.wealth, 0.0, 0.0),
                energy: data.next_energy(state.energy, 0.0, 0.0),
            },
            rounds: 0,
            gaps: Vec::new(),
        });
    }
    // No cut falls below its own minimum over the control box, so this
    // bound on the logarithm never binds.
    let idle = State {
        wealth: state.wealth,
        energy: data.leak_factor * state.energy,
    };
    let floor = cuts
        .iter()
        .map(|l| {
            let per_buy = -l.grad_wealth * data.ask + l.grad_energy * data.charge_eff;
            let per_sell = l.grad_wealth * data.bid - l.grad_energy * data.discharge_eff;
            l.eval(idle) + per_buy.min(0.0) * data.u_max_charge + per_sell.min(0.0) * data.u_max_discharge
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let log_opts = SolveOptions {
        theta_floor: floor - 1.0,
        ..*opts
    };
    solve_lp(state, data, Epigraph::Cuts(cuts), &log_opts, rho)
}

fn solve_lp(
    state: State,
    data: &StageData,
    next: Epigraph<'_>,
    opts: &SolveOptions,
    scale: f64,
) -> Result<SuccessorSolution> {
    let mut lazy = LazyLp::new(data, state, next, opts, scale);
    let primary = lazy.solve(true)?;
    let value = primary.objective;
    let subgradient = primary
        .duals
        .iter()
        .zip(&lazy.row_grads)
        .fold((0.0, 0.0), |(m, e), (y, (gm, ge))| (m + y * gm, e + y * ge));

    let mut controls = Controls {
        buy: clean(primary.x[0], data.u_max_charge),
        sell: clean(primary.x[1], data.u_max_discharge),
    };
    // Tie-break. A cut loaded late can make the tightened LP infeasible by
    // round-off; the primary controls are optimal, so keep them then.
    if controls.buy > 0.0 || controls.sell > 0.0 {
        lazy.lp.add_row(vec![0.0, 0.0, 1.0], RowKind::Le, value + 1e-11 * (scale + value.abs()));
        lazy.row_grads.push((0.0, 0.0));
        if controls.buy > 0.0 {
            lazy.lp.objective = vec![1.0, 0.0, 0.0];
            match lazy.solve(false) {
                Ok(s) => controls = Controls { buy: s.x[0], sell: s.x[1] },
                Err(Error::Infeasible) => {}
                Err(e) => return Err(e),
            }
        }
        if controls.sell > 0.0 {
            lazy.lp.add_row(vec![1.0, 0.0, 0.0], RowKind::Le, controls.buy + 1e-12);
            lazy.row_grads.push((0.0, 0.0));
            lazy.lp.objective = vec![0.0, 1.0, 0.0];
            match lazy.solve(false) {
                Ok(s) => {
                    controls = Controls {
                        buy: s.x[0].min(controls.buy),
                        sell: s.x[1],
                    }
                }
                Err(Error::Infeasible) => {}
                Err(e) => return Err(e),
            }
        }
    }

    controls.buy = clean(controls.buy, data.u_max_charge);
    controls.sell = clean(controls.sell, data.u_max_discharge);
    let mut next_state = lazy.next_state(controls.buy, controls.sell);
    next_state.energy = next_state.energy.clamp(0.0, data.capacity);
    Ok(SuccessorSolution {
        node: data.node,
        controls,
        value,
        subgradient,
        next_state,
        rounds: lazy.rounds,
        gaps: lazy.gaps,
    })
}

/// Last-stage trade against the exact terminal cost, refined with tangent
/// cuts until LP bound and evaluated objective agree within `tol`.
pub fn terminal_kelley_solve(
    state: State,
    stage_data: &StageData,
    utility: &UtilitySpec,
    tol: f64,
) -> Result<SuccessorSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("Kelley tolerance must be > 0"));
    }
    let opts = SolveOptions {
        kelley_tol: tol,
        ..SolveOptions::for_utility(utility)
    };
    solve_successor(state, stage_data, NextValue::Terminal(utility), &opts)
}

/// Expected value over successors of the stage problem at `state`, with the
/// probability-weighted subgradient. Zero-probability successors are skipped.
pub fn solve_stage(
    state: State,
    stage_data_by_successor: &[StageData],
    transition_row: &[f64],
    next_by_successor: &[NextValue<'_>],
    opts: &SolveOptions,
) -> Result<StageSolution> {
    if stage_data_by_successor.len() != transition_row.len()
        || next_by_successor.len() != transition_row.len()
    {
        return Err(Error::LengthMismatch {
            expected: transition_row.len(),
            found: stage_data_by_successor.len().min(next_by_successor.len()),
        });
    }
    let mut value = 0.0;
    let mut grad = (0.0, 0.0);
    let mut successors = Vec::with_capacity(transition_row.len());
    for ((data, next), &p) in stage_data_by_successor
        .iter()
        .zip(next_by_successor)
        .zip(transition_row)
    {
        if p <= 0.0 {
            continue;
        }
        let sol = solve_successor(state, data, *next, opts)?;
        value += p * sol.value;
        grad.0 += p * sol.subgradient.0;
        grad.1 += p * sol.subgradient.1;
        successors.push(sol);
    }
    Ok(StageSolution {
        value,
        state_subgradient: grad,
        successors,
    })
}
