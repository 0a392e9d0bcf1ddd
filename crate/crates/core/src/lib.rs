//! Markov-chain stochastic dual dynamic programming for a battery trading in
//! an intraday electricity market, together with indifference pricing of the
//! storage under exponential utility.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, timing, parallel
//! drivers and the command-line front end live in the `battery-sddp` crate.
//!
//! Orientation: cost-to-go functions are minimized and equal the negated
//! expected utility. Values reported to users (`bound`, prices) are in the
//! maximization orientation.
#![no_std]
// `!(x >= 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod chain;
mod error;
pub mod lp;
pub mod price_model;
pub mod quadrature;
pub mod sddp;
pub mod simulation;
pub mod stage;
pub mod storage;
pub mod valuation;

pub use chain::{build_chain, nearest_node, MarkovChain};
pub use error::{Error, Result};
pub use price_model::{
    bid_ask, deviations_from_series, fit_ar, simulate_deviation_path, synthetic_day_ahead,
    PriceModel, PriceSeries, RegressionFit,
};
pub use quadrature::{gauss_hermite, QuadratureRule};
pub use sddp::{bound, decide, train, train_with_clock, CutPool, Policy, Problem, TrainingLog};
pub use simulation::{
    evaluate_out_of_sample, kernel_density, tail_comparison, DensityEstimate, SimulationReport,
};
pub use stage::{solve_stage, terminal_kelley_solve, Controls, Cut, StageSolution, State};
pub use storage::{
    check_spread_condition, recover_complementary, terminal_cost, BatterySpec,
    ComplementaryTrajectory, RelaxedTrajectory, StageData, UtilitySpec,
};
pub use valuation::{
    indifference_price_bisection, indifference_price_exponential, price_sweep, SweepAxis,
    SweepRow, ValuationMethod, ValuationResult, ValuationSetup,
};
