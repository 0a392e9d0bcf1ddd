//! Run configuration: one JSON document, every field optional.

use std::path::{Path, PathBuf};

use battery_sddp_core::{
    synthetic_day_ahead, BatterySpec, PriceModel, Problem, UtilitySpec, ValuationSetup,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::read_price_csv;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub horizon: usize,
    pub battery: BatteryConfig,
    pub market: MarketConfig,
    pub price: PriceConfig,
    pub utility: UtilityConfig,
    pub sddp: SddpConfig,
    pub simulate: SimulateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatteryConfig {
    pub capacity_mwh: f64,
    /// Charge and discharge limit per stage as a fraction of capacity.
    pub alpha: f64,
    pub c_plus: f64,
    pub c_minus: f64,
    pub leakage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketConfig {
    pub spread_eur: f64,
    /// Day-ahead prices per stage. When absent, the first `horizon` rows of
    /// `day_ahead_csv` are used, and failing that the synthetic curve.
    pub day_ahead: Option<Vec<f64>>,
    /// Price CSV (`timestamp,day_ahead,id1`), relative to the config file.
    pub day_ahead_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceConfig {
    pub a: f64,
    pub sigma_eps: f64,
    pub xi0: f64,
    /// Std of the Gaussian sampling the chain nodes; stationary std if absent.
    pub sampling_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UtilityConfig {
    pub rho: f64,
    pub initial_wealth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SddpConfig {
    pub quadrature_points: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Give each backward-pass cut to every node of its stage.
    pub share_cuts: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub scenarios: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            horizon: 24,
            battery: BatteryConfig::default(),
            market: MarketConfig::default(),
            price: PriceConfig::default(),
            utility: UtilityConfig::default(),
            sddp: SddpConfig::default(),
            simulate: SimulateConfig::default(),
        }
    }
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self {
            capacity_mwh: 1.0,
            alpha: 0.4,
            c_plus: 0.95,
            c_minus: 1.05,
            leakage: 0.0,
        }
    }
}

impl Default for PriceConfig {
    fn default() -> Self {
        Self {
            a: 0.48,
            sigma_eps: 5.0,
            xi0: 0.0,
            sampling_std: None,
        }
    }
}

impl Default for UtilityConfig {
    fn default() -> Self {
        Self {
            rho: 0.03,
            initial_wealth: 0.0,
        }
    }
}

impl Default for SddpConfig {
    fn default() -> Self {
        Self {
            quadrature_points: 8,
            iterations: 1000,
            seed: 0,
            share_cuts: true,
        }
    }
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            scenarios: 10000,
            seed: 1,
        }
    }
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            spread_eur: 1.0,
            day_ahead: None,
            day_ahead_csv: None,
        }
    }
}

impl RunConfig {
    /// Reads a config file. Relative CSV paths are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(csv) = &config.market.day_ahead_csv {
            if csv.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                config.market.day_ahead_csv = Some(base.join(csv));
            }
        }
        Ok(config)
    }

    pub fn day_ahead(&self) -> CliResult<Vec<f64>> {
        let curve = match (&self.market.day_ahead, &self.market.day_ahead_csv) {
            (Some(v), _) => v.clone(),
            (None, Some(csv)) => {
                let (series, _) = read_price_csv(csv)?;
                series.day_ahead.into_iter().take(self.horizon).collect()
            }
            (None, None) => synthetic_day_ahead(self.horizon),
        };
        if curve.len() != self.horizon {
            return Err(CliError::Config(format!(
                "day-ahead curve has {} entries but horizon is {}",
                curve.len(),
                self.horizon
            )));
        }
        Ok(curve)
    }

    pub fn model(&self) -> CliResult<PriceModel> {
        let p = &self.price;
        PriceModel::new(self.day_ahead()?, p.a, p.sigma_eps, self.market.spread_eur, p.xi0).map_err(config_error)
    }

    pub fn problem(&self) -> CliResult<Problem> {
        let b = &self.battery;
        let battery = BatterySpec::with_speed_fraction(b.capacity_mwh, b.alpha, b.c_plus, b.c_minus, b.leakage)
            .map_err(config_error)?;
        let utility = UtilitySpec::new(self.utility.rho, self.utility.initial_wealth).map_err(config_error)?;
        let mut problem = Problem::new(self.model()?, battery, utility).map_err(config_error)?;
        problem.share_cuts = self.sddp.share_cuts;
        Ok(problem)
    }

    pub fn setup(&self) -> CliResult<ValuationSetup> {
        if self.sddp.iterations == 0 {
            return Err(CliError::Config("sddp.iterations must be at least 1".into()));
        }
        let setup = ValuationSetup {
            problem: self.problem()?,
            quadrature_points: self.sddp.quadrature_points,
            sampling_std: self.price.sampling_std,
            iterations: self.sddp.iterations,
            seed: self.sddp.seed,
        };
        // Catches bad quadrature orders and sampling stds before any work.
        setup.chain().map_err(config_error)?;
        Ok(setup)
    }
}

fn config_error(e: battery_sddp_core::Error) -> CliError {
    CliError::Config(e.to_string())
}
