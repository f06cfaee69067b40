//! Run configuration document.

use std::path::{Path, PathBuf};

use mdro::backtest::BacktestConfig;
use mdro::dro::RelaxationProblem;
use mdro::montecarlo::StreamSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Price panel CSV; relative paths resolve against the config file.
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    /// Decision index for `calibrate`, `solve` and `simulate` on panel data;
    /// defaults to the last row.
    pub end_index: Option<usize>,
    pub backtest: BacktestConfig,
    /// Explicit instances for `solve` and `simulate`; when nonempty the panel
    /// is not read by those commands.
    pub problems: Vec<RelaxationProblem>,
    pub tc_rates: Vec<f64>,
    /// Also run buy-and-hold and daily equal-weight alongside `backtest`.
    pub benchmarks: bool,
    pub simulate: SimulateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            out: PathBuf::from("out"),
            end_index: None,
            backtest: BacktestConfig::default(),
            problems: Vec::new(),
            tc_rates: vec![0.0005, 0.001, 0.002, 0.005],
            benchmarks: true,
            simulate: SimulateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// Disturbance law; `None` replays the problem's empirical distribution.
    pub stream: Option<StreamSpec>,
    pub seed: u64,
    pub draws: usize,
    pub viability_steps: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { stream: None, seed: 0, draws: 100_000, viability_steps: 1_000_000 }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Applies command-line overrides and anchors relative paths at `base`.
    pub fn resolve(mut self, base: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Self {
        if let Some(data) = &self.data {
            if data.is_relative() {
                self.data = Some(base.join(data));
            }
        }
        if let Some(out) = out {
            self.out = out;
        } else if self.out.is_relative() {
            self.out = base.join(&self.out);
        }
        if let Some(seed) = seed {
            self.backtest.seed = seed;
            self.simulate.seed = seed;
        }
        self
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.backtest.validate()?;
        for (k, p) in self.problems.iter().enumerate() {
            p.validate().map_err(|e| anyhow::anyhow!("problem {k}: {e}"))?;
        }
        if self.tc_rates.iter().any(|r| !(0.0..1.0).contains(r)) {
            anyhow::bail!("tc_rates must lie in [0, 1)");
        }
        Ok(())
    }
}
