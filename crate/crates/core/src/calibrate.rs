//! Ambiguity-radius calibration by circular block bootstrap.
//!
//! For a horizon `n` the reference empirical is built from the overlapping
//! n-period compound returns of the daily series. Each bootstrap replicate
//! resamples the daily series in circular blocks of length `n`, rebuilds the
//! n-period empirical and records its Wasserstein distance to the reference.
//! The radius is an empirical quantile of those distances at level
//! `1 - beta / |N|`, so that the per-horizon coverage targets combine to
//! `1 - beta` by a union bound.
//!
//! Resampling recipe for replicate `b` (see [`crate::rng`]): stream
//! `(seed, b)`; repeatedly draw a start `s = index_below(T)` and append days
//! `s, s+1, ..., s+n-1` (mod T) until `T` days are collected, truncating the
//! final block.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::compound_returns;
use crate::rng;
use crate::transport::{wasserstein_distance, EmpiricalDistribution, TransportError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("insufficient history for horizon {n}: {available} daily rows, need at least {needed}")]
    InsufficientHistory { n: usize, needed: usize, available: usize },
    #[error("invalid calibration config: {0}")]
    InvalidConfig(String),
    #[error("empty input to quantile")]
    EmptyQuantile,
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// Which order statistic [`quantile`] returns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileRule {
    /// Sorted value at index `ceil(level * K) - 1`.
    #[default]
    Lower,
    /// Sorted value at index `ceil(level * (K - 1))`.
    Higher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub beta: f64,
    pub horizons: Vec<usize>,
    #[serde(default = "default_reps")]
    pub bootstrap_reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_order")]
    pub p: f64,
    #[serde(default)]
    pub quantile: QuantileRule,
}

fn default_reps() -> usize {
    200
}

fn default_order() -> f64 {
    1.0
}

impl CalibrationConfig {
    pub fn new(beta: f64, horizons: Vec<usize>, bootstrap_reps: usize, seed: u64) -> Self {
        Self { beta, horizons, bootstrap_reps, seed, p: 1.0, quantile: QuantileRule::Lower }
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(CalibrationError::InvalidConfig(format!("beta {} outside (0, 1)", self.beta)));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(CalibrationError::InvalidConfig("horizons must be positive and nonempty".into()));
        }
        let mut sorted = self.horizons.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.horizons.len() {
            return Err(CalibrationError::InvalidConfig("duplicate horizon".into()));
        }
        if self.bootstrap_reps == 0 {
            return Err(CalibrationError::InvalidConfig("bootstrap_reps must be >= 1".into()));
        }
        if !(self.p.is_finite() && self.p >= 1.0) {
            return Err(CalibrationError::InvalidConfig(format!("order p = {}", self.p)));
        }
        Ok(())
    }

    /// Per-horizon confidence `1 - beta / |N|`.
    pub fn level(&self) -> f64 {
        1.0 - self.beta / self.horizons.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusRow {
    pub n: usize,
    pub epsilon: f64,
    pub samples: usize,
    pub level: f64,
}

/// Calibrated radius per horizon, in configuration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RadiusTable {
    pub rows: Vec<RadiusRow>,
}

impl RadiusTable {
    pub fn epsilon(&self, n: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.n == n).map(|r| r.epsilon)
    }

    pub fn horizons(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.n).collect()
    }
}

/// Empirical quantile of `values` at `level`.
pub fn quantile(values: &[f64], level: f64) -> Result<f64, CalibrationError> {
    quantile_with(values, level, QuantileRule::Lower)
}

pub fn quantile_with(values: &[f64], level: f64, rule: QuantileRule) -> Result<f64, CalibrationError> {
    if values.is_empty() {
        return Err(CalibrationError::EmptyQuantile);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    let level = level.clamp(0.0, 1.0);
    // guard against level * K landing a rounding error above an integer
    let idx = match rule {
        QuantileRule::Lower => (level * k as f64 - 1e-9).ceil() as i64 - 1,
        QuantileRule::Higher => (level * (k - 1) as f64 - 1e-9).ceil() as i64,
    };
    Ok(sorted[idx.clamp(0, k as i64 - 1) as usize])
}

/// One circular-block-bootstrap resample of the daily rows.
pub fn block_resample(daily: &[Vec<f64>], block: usize, seed: u64, replicate: u64) -> Vec<Vec<f64>> {
    let t = daily.len();
    let mut rng = rng::stream(seed, replicate);
    let mut out = Vec::with_capacity(t);
    while out.len() < t {
        let start = rng::index_below(&mut rng, t);
        for k in 0..block {
            if out.len() == t {
                break;
            }
            out.push(daily[(start + k) % t].clone());
        }
    }
    out
}

/// Bootstrap distances for one horizon.
pub fn bootstrap_distances(
    daily: &[Vec<f64>],
    n: usize,
    config: &CalibrationConfig,
) -> Result<Vec<f64>, CalibrationError> {
    if daily.len() < n + 1 {
        return Err(CalibrationError::InsufficientHistory { n, needed: n + 1, available: daily.len() });
    }
    let reference = EmpiricalDistribution::uniform(compound_returns(daily, n))?;
    (0..config.bootstrap_reps as u64)
        .into_par_iter()
        .map(|b| {
            let resample = block_resample(daily, n, config.seed, b);
            let emp = EmpiricalDistribution::uniform(compound_returns(&resample, n))?;
            Ok(wasserstein_distance(&emp, &reference, config.p)?)
        })
        .collect()
}

/// Radius table for every configured horizon. Deterministic given the seed.
pub fn calibrate_radii(
    daily_returns: &[Vec<f64>],
    config: &CalibrationConfig,
) -> Result<RadiusTable, CalibrationError> {
    config.validate()?;
    let level = config.level();
    let rows = config
        .horizons
        .iter()
        .map(|&n| {
            let distances = bootstrap_distances(daily_returns, n, config)?;
            Ok(RadiusRow {
                n,
                epsilon: quantile_with(&distances, level, config.quantile)?.max(0.0),
                samples: daily_returns.len() + 1 - n,
                level,
            })
        })
        .collect::<Result<Vec<_>, CalibrationError>>()?;
    Ok(RadiusTable { rows })
}
