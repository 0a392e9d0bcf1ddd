//! Intraday mid-price model: day-ahead anchor plus an AR(1) deviation.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// `s_t = day_ahead[t-1] + xi_t` with `xi_t = a * xi_{t-1} + eps_t`,
/// `eps_t ~ N(0, innovation_std^2)`. Bid and ask sit `spread` below and
/// above the mid-price.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PriceModel {
    pub day_ahead: Vec<f64>,
    pub ar_coefficient: f64,
    pub innovation_std: f64,
    pub spread: f64,
    pub initial_deviation: f64,
}

impl PriceModel {
    pub fn new(
        day_ahead: Vec<f64>,
        ar_coefficient: f64,
        innovation_std: f64,
        spread: f64,
        initial_deviation: f64,
    ) -> Result<Self> {
        let model = Self {
            day_ahead,
            ar_coefficient,
            innovation_std,
            spread,
            initial_deviation,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.day_ahead.is_empty() {
            return Err(Error::InvalidParameter("day_ahead must have at least one entry"));
        }
        if !(self.innovation_std >= 0.0) || !self.innovation_std.is_finite() {
            return Err(Error::InvalidParameter("innovation_std must be finite and >= 0"));
        }
        if !(self.spread >= 0.0) || !self.spread.is_finite() {
            return Err(Error::InvalidParameter("spread must be finite and >= 0"));
        }
        if !self.ar_coefficient.is_finite() || !self.initial_deviation.is_finite() {
            return Err(Error::InvalidParameter("ar_coefficient and initial_deviation must be finite"));
        }
        if self.day_ahead.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter("day_ahead contains a non-finite price"));
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.day_ahead.len()
    }

    /// Standard deviation of the stationary AR(1) law, `None` when `|a| >= 1`.
    pub fn stationary_std(&self) -> Option<f64> {
        let a = self.ar_coefficient;
        if a.abs() < 1.0 {
            Some(self.innovation_std / libm::sqrt(1.0 - a * a))
        } else {
            None
        }
    }

    pub fn bid_ask(&self, stage: usize, deviation: f64) -> Result<(f64, f64)> {
        bid_ask(self, stage, deviation)
    }
}

/// Hourly curve `50 - 20 cos(2 pi (t-1) / 12)`: two peaks of 70 at hours 7
/// and 19, troughs of 30 at hours 1 and 13. Used whenever no measured
/// day-ahead curve is supplied.
pub fn synthetic_day_ahead(horizon: usize) -> Vec<f64> {
    (0..horizon)
        .map(|h| 50.0 - 20.0 * libm::cos(2.0 * core::f64::consts::PI * h as f64 / 12.0))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PriceSeries {
    pub timestamps: Vec<String>,
    pub day_ahead: Vec<f64>,
    pub id1: Vec<f64>,
}

impl PriceSeries {
    pub fn len(&self) -> usize {
        self.day_ahead.len()
    }

    pub fn is_empty(&self) -> bool {
        self.day_ahead.is_empty()
    }
}

/// Ordinary least squares of `xi_{t+1}` on `xi_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Population std of `xi_{t+1} - slope * xi_t` about its mean.
    pub residual_std: f64,
    pub n_obs: usize,
}

pub fn fit_ar(deviations: &[f64]) -> Result<RegressionFit> {
    if deviations.len() < 3 {
        return Err(Error::InvalidParameter("fit_ar needs at least 3 observations"));
    }
    let xs = &deviations[..deviations.len() - 1];
    let ys = &deviations[1..];
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mean_x, y - mean_y);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx <= f64::EPSILON * f64::EPSILON * n * (1.0 + mean_x * mean_x) {
        return Err(Error::DegenerateInput);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;

    let ssr: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let e = y - intercept - slope * x;
            e * e
        })
        .sum();
    let r_squared = if syy > 0.0 {
        (1.0 - ssr / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };

    let residual_mean = xs.iter().zip(ys).map(|(&x, &y)| y - slope * x).sum::<f64>() / n;
    let residual_var = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - slope * x - residual_mean;
            r * r
        })
        .sum::<f64>()
        / n;

    Ok(RegressionFit {
        slope,
        intercept,
        r_squared,
        residual_std: libm::sqrt(residual_var),
        n_obs: xs.len(),
    })
}

/// Elementwise `id1 - day_ahead`.
pub fn deviations_from_series(series: &PriceSeries) -> Result<Vec<f64>> {
    if series.id1.len() != series.day_ahead.len() {
        return Err(Error::LengthMismatch {
            expected: series.day_ahead.len(),
            found: series.id1.len(),
        });
    }
    if !series.timestamps.is_empty() && series.timestamps.len() != series.day_ahead.len() {
        return Err(Error::LengthMismatch {
            expected: series.day_ahead.len(),
            found: series.timestamps.len(),
        });
    }
    Ok(series
        .id1
        .iter()
        .zip(&series.day_ahead)
        .map(|(id1, da)| id1 - da)
        .collect())
}

/// `xi_1, ..., xi_horizon` starting from the model's initial deviation.
pub fn simulate_deviation_path(model: &PriceModel, horizon: usize, rng_seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    deviation_path_with(model, horizon, &mut rng)
}

pub(crate) fn deviation_path_with<R: Rng + ?Sized>(
    model: &PriceModel,
    horizon: usize,
    rng: &mut R,
) -> Vec<f64> {
    let mut xi = model.initial_deviation;
    (0..horizon)
        .map(|_| {
            let eps: f64 = rng.sample(StandardNormal);
            xi = model.ar_coefficient * xi + model.innovation_std * eps;
            xi
        })
        .collect()
}

/// Best bid and ask at `stage` (1-based) for mid-price deviation `deviation`.
pub fn bid_ask(model: &PriceModel, stage: usize, deviation: f64) -> Result<(f64, f64)> {
    let horizon = model.horizon();
    if stage == 0 || stage > horizon {
        return Err(Error::StageOutOfRange { stage, horizon });
    }
    let mid = model.day_ahead[stage - 1] + deviation;
    Ok((mid - model.spread, mid + model.spread))
}
