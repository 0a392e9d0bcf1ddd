use std::path::Path;
use std::time::Instant;

use battery_sddp_core::simulation::{
    quantile, simulate_in_sample, simulate_out_of_sample, SimulationReport,
};
use battery_sddp_core::valuation::{check_grid, fill_second_differences, sweep_point};
use battery_sddp_core::{
    deviations_from_series, fit_ar, kernel_density, train_with_clock, Policy, SweepAxis,
    ValuationResult,
};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{
    checkpoint_entries, pool_from_entries, read_json, read_price_csv, write_csv, write_json,
    ChainDoc, CheckpointEntry,
};

pub const CHAIN_FILE: &str = "chain.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAINING_FILE: &str = "training.csv";
pub const SCENARIO_FILE: &str = "scenarios.csv";
pub const DENSITY_FILE: &str = "density.csv";
pub const PRICE_FILE: &str = "price.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const FIT_FILE: &str = "fit.json";

const DENSITY_POINTS: usize = 256;

fn clock() -> impl FnMut() -> f64 {
    let start = Instant::now();
    move || start.elapsed().as_secs_f64()
}

fn prepare(out_dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))
}

pub fn fit(csv: &Path, out_dir: &Path) -> CliResult<()> {
    let (series, dropped) = read_price_csv(csv)?;
    if dropped > 0 {
        warn!("dropped {dropped} malformed rows from {}", csv.display());
    }
    let deviations = deviations_from_series(&series).map_err(|e| CliError::Data(e.to_string()))?;
    let fit = fit_ar(&deviations).map_err(|e| CliError::Data(e.to_string()))?;
    prepare(out_dir)?;
    write_json(&out_dir.join(FIT_FILE), &fit)?;
    println!("rows used        {}", series.len());
    println!("rows dropped     {dropped}");
    println!("slope            {:.6}", fit.slope);
    println!("intercept        {:.6}", fit.intercept);
    println!("r_squared        {:.6}", fit.r_squared);
    println!("residual_std     {:.6}", fit.residual_std);
    Ok(())
}

pub fn discretize(config: &RunConfig, out_dir: &Path) -> CliResult<()> {
    let chain = config.setup()?.chain()?;
    prepare(out_dir)?;
    write_json(&out_dir.join(CHAIN_FILE), &ChainDoc::from(&chain))?;
    let worst = chain
        .raw_row_mass
        .iter()
        .flatten()
        .fold(f64::INFINITY, |m, &x| m.min(x));
    println!("stages           {}", chain.horizon);
    println!("nodes per stage  {}", config.sddp.quadrature_points);
    println!("smallest raw row mass {worst:.4}");
    Ok(())
}

#[derive(Serialize)]
struct IterationRow {
    iteration: usize,
    bound: f64,
    seconds: f64,
}

pub fn train(config: &RunConfig, out_dir: &Path) -> CliResult<()> {
    let setup = config.setup()?;
    let chain = setup.chain()?;
    info!("training {} iterations on {} nodes per stage", setup.iterations, setup.quadrature_points);
    let (policy, log) = train_with_clock(&setup.problem, &chain, setup.iterations, setup.seed, &mut clock())?;
    prepare(out_dir)?;
    write_json(&out_dir.join(CHECKPOINT_FILE), &checkpoint_entries(policy.pool()))?;
    write_csv(
        &out_dir.join(TRAINING_FILE),
        log.bounds.iter().zip(&log.seconds).enumerate().map(|(k, (&bound, &seconds))| IterationRow {
            iteration: k + 1,
            bound,
            seconds,
        }),
    )?;
    println!("iterations       {}", log.iterations());
    println!("bound            {:.6}", policy.bound()?);
    println!("certainty equiv. {:.6} EUR", policy.certainty_equivalent()?);
    println!("cuts             {}", policy.pool().total_cuts());
    println!("seconds          {:.2}", log.seconds.last().copied().unwrap_or(0.0));
    Ok(())
}

pub fn load_policy(config: &RunConfig, checkpoint: &Path) -> CliResult<Policy> {
    let setup = config.setup()?;
    let chain = setup.chain()?;
    let entries: Vec<CheckpointEntry> = read_json(checkpoint)?;
    let pool = pool_from_entries(&chain, &entries)?;
    let policy = Policy::from_parts(setup.problem, chain, pool)
        .map_err(|e| CliError::Data(format!("{}: {e}", checkpoint.display())))?;
    policy
        .bound()
        .map_err(|_| CliError::Data(format!("{}: no cuts at the root", checkpoint.display())))?;
    Ok(policy)
}

#[derive(Serialize)]
struct ScenarioRow {
    scenario: usize,
    terminal_wealth: f64,
    utility: f64,
}

#[derive(Serialize)]
struct DensityRow {
    x: f64,
    density: f64,
}

/// Out-of-sample and in-sample evaluation of a trained policy.
pub fn simulate_report(policy: &Policy, scenarios: usize, seed: u64) -> CliResult<SimulationReport> {
    if scenarios == 0 {
        return Err(CliError::Config("simulate.scenarios must be at least 1".into()));
    }
    let run = |in_sample: bool| {
        (0..scenarios)
            .into_par_iter()
            .map(|k| {
                if in_sample {
                    simulate_in_sample(policy, k, seed)
                } else {
                    simulate_out_of_sample(policy, k, seed)
                }
            })
            .collect::<Result<Vec<_>, _>>()
    };
    let oos = run(false)?;
    let ins = run(true)?;
    Ok(SimulationReport::from_outcomes(&oos, &ins)?)
}

pub fn simulate(config: &RunConfig, checkpoint: &Path, out_dir: &Path) -> CliResult<()> {
    let policy = load_policy(config, checkpoint)?;
    let report = simulate_report(&policy, config.simulate.scenarios, config.simulate.seed)?;
    prepare(out_dir)?;
    write_csv(
        &out_dir.join(SCENARIO_FILE),
        report.terminal_wealths.iter().zip(&report.utilities).enumerate().map(|(k, (&w, &u))| ScenarioRow {
            scenario: k,
            terminal_wealth: w,
            utility: u,
        }),
    )?;
    match kernel_density(&report.terminal_wealths, DENSITY_POINTS) {
        Ok(kde) => write_csv(
            &out_dir.join(DENSITY_FILE),
            kde.grid.iter().zip(&kde.density).map(|(&x, &density)| DensityRow { x, density }),
        )?,
        Err(e) => warn!("no density written: {e}"),
    }
    let bound = policy.bound()?;
    println!("scenarios        {}", report.n_scenarios);
    println!("bound            {bound:.6}");
    println!("out-of-sample    {:.6} +- {:.6}", report.mean_utility, report.std_error);
    println!("in-sample        {:.6} +- {:.6}", report.in_sample_mean, report.in_sample_std_error);
    println!("mean wealth      {:.4} EUR", report.mean_wealth);
    println!("5% wealth quantile {:.4} EUR", quantile(&report.terminal_wealths, 0.05)?);
    if report.mean_utility > bound + 2.0 * report.std_error {
        warn!("out-of-sample mean exceeds the bound by more than two standard errors");
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriceMethod {
    ClosedForm,
    Bisection,
}

#[derive(Serialize)]
struct PriceRow {
    method: &'static str,
    price_eur: f64,
    phi_with: f64,
    phi_without: f64,
    iterations: usize,
    seconds: f64,
}

pub fn price(
    config: &RunConfig,
    method: PriceMethod,
    bracket: (f64, f64),
    tol: f64,
    out_dir: &Path,
) -> CliResult<()> {
    let setup = config.setup()?;
    let mut clock = clock();
    let result: ValuationResult = match method {
        PriceMethod::ClosedForm => setup.price_closed_form(&mut clock)?,
        PriceMethod::Bisection => {
            if tol.is_nan() || tol <= 0.0 {
                return Err(CliError::Config("--tol must be positive".into()));
            }
            setup.price_bisection(bracket, tol, 200, &mut clock)?
        }
    };
    let seconds = clock();
    let name = match method {
        PriceMethod::ClosedForm => "closed_form",
        PriceMethod::Bisection => "bisection",
    };
    prepare(out_dir)?;
    write_csv(
        &out_dir.join(PRICE_FILE),
        [PriceRow {
            method: name,
            price_eur: result.price,
            phi_with: result.phi_with,
            phi_without: result.phi_without,
            iterations: result.iterations,
            seconds,
        }],
    )?;
    println!("method           {name}");
    println!("price            {:.4} EUR", result.price);
    println!("value with       {:.6}", result.phi_with);
    println!("value without    {:.6}", result.phi_without);
    Ok(())
}

#[derive(Serialize)]
struct SweepCsvRow {
    axis_value: f64,
    rho: f64,
    price_eur: f64,
    bound: f64,
    train_seconds: f64,
}

/// Prices every (rho, grid value) pair; points train in parallel.
pub fn sweep(config: &RunConfig, axis: SweepAxis, grid: &[f64], rhos: &[f64], out_dir: &Path) -> CliResult<()> {
    check_grid(grid).map_err(|e| CliError::Config(e.to_string()))?;
    let rhos: Vec<f64> = if rhos.is_empty() { vec![config.utility.rho] } else { rhos.to_vec() };
    let base = config.setup()?;
    let points: Vec<(f64, usize, f64)> = rhos
        .iter()
        .flat_map(|&rho| grid.iter().enumerate().map(move |(i, &v)| (rho, i, v)))
        .collect();
    let mut rows = points
        .par_iter()
        .map(|&(rho, index, value)| {
            let row = sweep_point(&base, axis, value, rho, index, &mut clock());
            if let Ok(r) = &row {
                info!("rho {rho} value {value}: price {:.4}", r.price);
            }
            row
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| match e {
            battery_sddp_core::Error::InvalidParameter(_) => CliError::Config(e.to_string()),
            other => CliError::Numerical(other),
        })?;
    fill_second_differences(&mut rows);
    prepare(out_dir)?;
    write_csv(
        &out_dir.join(SWEEP_FILE),
        rows.iter().map(|r| SweepCsvRow {
            axis_value: r.axis_value,
            rho: r.rho,
            price_eur: r.price,
            bound: r.bound,
            train_seconds: r.train_seconds,
        }),
    )?;
    for r in &rows {
        println!("rho {:<6} value {:<8} price {:>10.4} EUR", r.rho, r.axis_value, r.price);
    }
    Ok(())
}
