//! Rolling-window out-of-sample backtests.
//!
//! Timeline: a decision at price index `t` sees the `lookback` daily returns
//! ending at `t`. Execution at the close of `t` charges
//! `sum_i kappa_i |target_i - current_i|` in currency, with targets sized on
//! post-cost wealth so cash never goes negative. Share counts are then held
//! for `n` trading days while cash accrues the daily risk-free rate
//! `rf_annual / 252` of each day's opening yield.
//!
//! Benchmarks start from an equal split acquired without cost; that initial
//! allocation is not counted as a rebalance.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::Mutex;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::{calibrate_radii, CalibrationConfig, CalibrationError, QuantileRule};
use crate::certificate::{empirical_gap, CertificateError, GapRow};
use crate::data::{compound_windows, riskfree_n, DataError, PricePanel, TRADING_DAYS};
use crate::dro::{argmax_horizon, cutting_plane, RelaxationProblem, RelaxationSolution, SolveError, Tolerances};
use crate::model::{AffineGrowthModel, ControlSet, ModelError, Utility};
use crate::transport::EmpiricalDistribution;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("invalid backtest config: {0}")]
    InvalidConfig(String),
    #[error("solver failed on {date} for horizon {horizon}: {source}")]
    Solve { date: NaiveDate, horizon: usize, source: SolveError },
    #[error("calibration failed on {date}: {source}")]
    Calibration { date: NaiveDate, source: CalibrationError },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Certificate(#[from] CertificateError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Static,
    Adaptive,
    BuyAndHold,
    EqualWeightDaily,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestConfig {
    pub scheme: Scheme,
    pub lookback: usize,
    pub horizons: Vec<usize>,
    pub beta: f64,
    pub eta: f64,
    /// Proportional cost rate applied to every asset.
    pub tc_rate: f64,
    pub initial_wealth: f64,
    pub seed: u64,
    pub bootstrap_reps: usize,
    pub p: f64,
    pub leverage_cap: f64,
    /// Relative inflation of the fitted support box.
    pub inflation: f64,
    pub utility: Utility,
    pub quantile: QuantileRule,
    pub tolerances: Tolerances,
    /// Price index of the first decision; defaults to `lookback`.
    pub start_index: Option<usize>,
    /// Record a gap certificate for the chosen horizon at each rebalance.
    pub certify: bool,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Adaptive,
            lookback: 252,
            horizons: vec![5, 21, 42, 63],
            beta: 0.1,
            eta: 0.5,
            tc_rate: 0.001,
            initial_wealth: 1.0,
            seed: 0,
            bootstrap_reps: 200,
            p: 1.0,
            leverage_cap: 1.0,
            inflation: 0.0,
            utility: Utility::Log,
            quantile: QuantileRule::Lower,
            tolerances: Tolerances::default(),
            start_index: None,
            certify: false,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<(), BacktestError> {
        let bad = |m: String| Err(BacktestError::InvalidConfig(m));
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return bad("horizons must be nonempty and positive".into());
        }
        if self.lookback < *self.horizons.iter().max().unwrap() {
            return bad(format!("look-back {} shorter than the longest horizon", self.lookback));
        }
        if !(self.initial_wealth > 0.0) {
            return bad("initial wealth must be positive".into());
        }
        if !(0.0..1.0).contains(&self.tc_rate) {
            return bad(format!("cost rate {} outside [0, 1)", self.tc_rate));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta {} outside (0, 1)", self.beta));
        }
        if !(self.eta > 0.0) || !(self.leverage_cap > 0.0) || self.bootstrap_reps == 0 {
            return bad("eta, leverage cap and bootstrap_reps must be positive".into());
        }
        Ok(())
    }

    fn start(&self) -> usize {
        self.start_index.unwrap_or(self.lookback)
    }

    /// Radius calibration settings for the window ending at `end_index`.
    pub fn calibration(&self, end_index: usize) -> CalibrationConfig {
        CalibrationConfig {
            beta: self.beta,
            horizons: self.horizons.clone(),
            bootstrap_reps: self.bootstrap_reps,
            seed: self.seed.wrapping_add(end_index as u64),
            p: self.p,
            quantile: self.quantile,
        }
    }
}

/// Calibrated radii keyed by `(end_index, n)`; shareable across runs on the
/// same panel with the same calibration settings.
#[derive(Debug, Default)]
pub struct RadiusCache {
    radii: Mutex<HashMap<(usize, usize), f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonCandidate {
    pub n: usize,
    pub epsilon: f64,
    pub value: f64,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebalanceEvent {
    pub date: NaiveDate,
    pub index: usize,
    pub n: usize,
    pub target: Vec<f64>,
    pub j_cvx: Option<f64>,
    pub epsilon: Option<f64>,
    pub cost: f64,
    pub wealth_before: f64,
    pub wealth_after: f64,
    pub candidates: Vec<HorizonCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub date: NaiveDate,
    pub wealth: f64,
    pub cash: f64,
    pub cost: f64,
    pub n: usize,
    pub rebalanced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub fv: f64,
    pub tr: f64,
    pub cagr: f64,
    pub mdd: f64,
    /// NaN (serialized as null) when daily returns have zero variance.
    pub sharpe: f64,
    pub sharpe_defined: bool,
    pub vol: f64,
    pub best_day: f64,
    pub worst_day: f64,
    pub tc_total: f64,
    pub n_rebalances: usize,
    pub years: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestLedger {
    pub scheme: Scheme,
    pub rows: Vec<LedgerRow>,
    pub events: Vec<RebalanceEvent>,
    pub gaps: Vec<GapRow>,
    pub tc_total: f64,
    pub metrics: MetricBlock,
}

impl BacktestLedger {
    pub fn wealth(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.wealth).collect()
    }
}

/// FV, CAGR, drawdown, Sharpe and volatility of a daily wealth path.
/// `riskfree_annual[k]` is the yield in force over day `k -> k + 1`.
pub fn compute_metrics(wealth: &[f64], riskfree_annual: &[f64], years: f64) -> MetricBlock {
    let v0 = wealth[0];
    let fv = wealth[wealth.len() - 1] / v0;
    let mut peak = f64::NEG_INFINITY;
    let mut mdd: f64 = 0.0;
    for &v in wealth {
        peak = peak.max(v);
        mdd = mdd.max((peak - v) / peak);
    }
    let rets: Vec<f64> = wealth.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
    let k = rets.len() as f64;
    let (sharpe, vol, best, worst) = if rets.len() >= 2 {
        let mean = rets.iter().sum::<f64>() / k;
        let sd = (rets.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
        let excess = rets.iter().zip(riskfree_annual).map(|(r, rf)| r - rf / TRADING_DAYS).sum::<f64>() / k;
        let sr = if sd > 0.0 { excess / sd * TRADING_DAYS.sqrt() } else { f64::NAN };
        let best = rets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let worst = rets.iter().copied().fold(f64::INFINITY, f64::min);
        (sr, sd * TRADING_DAYS.sqrt(), best, worst)
    } else {
        (f64::NAN, 0.0, rets.first().copied().unwrap_or(0.0), rets.first().copied().unwrap_or(0.0))
    };
    MetricBlock {
        fv,
        tr: fv - 1.0,
        cagr: if years > 0.0 { fv.powf(1.0 / years) - 1.0 } else { f64::NAN },
        mdd,
        sharpe,
        sharpe_defined: sharpe.is_finite(),
        vol,
        best_day: best,
        worst_day: worst,
        tc_total: 0.0,
        n_rebalances: 0,
        years,
    }
}

struct Book {
    shares: Vec<f64>,
    cash: f64,
}

impl Book {
    fn wealth(&self, prices: &[f64]) -> f64 {
        self.cash + self.shares.iter().zip(prices).map(|(s, p)| s * p).sum::<f64>()
    }

    /// Moves to `weights` of post-cost wealth; returns the cost paid.
    fn rebalance(&mut self, prices: &[f64], weights: &[f64], kappa: f64) -> f64 {
        let gross = self.wealth(prices);
        let current: Vec<f64> = self.shares.iter().zip(prices).map(|(s, p)| s * p).collect();
        let turnover = |w: f64| -> f64 { weights.iter().zip(&current).map(|(u, c)| (u * w - c).abs()).sum() };
        // fixed point of net = gross - kappa * turnover(net); a contraction
        // since kappa * sum(weights) < 1
        let mut net = gross;
        for _ in 0..100 {
            let next = gross - kappa * turnover(net);
            if (next - net).abs() <= 1e-15 * gross {
                net = next;
                break;
            }
            net = next;
        }
        let cost = gross - net;
        self.shares = weights.iter().zip(prices).map(|(u, p)| u * net / p).collect();
        self.cash = net - weights.iter().sum::<f64>() * net;
        cost
    }
}

struct Decision {
    n: usize,
    target: Vec<f64>,
    j_cvx: f64,
    epsilon: f64,
    candidates: Vec<HorizonCandidate>,
    gap: Option<GapRow>,
}

struct Planner<'a> {
    panel: &'a PricePanel,
    config: &'a BacktestConfig,
    cache: &'a RadiusCache,
}

impl Planner<'_> {
    fn radius(&self, t: usize, n: usize) -> Result<f64, BacktestError> {
        if let Some(e) = self.cache.radii.lock().expect("cache lock").get(&(t, n)) {
            return Ok(*e);
        }
        let daily = self.panel.returns_window(t, self.config.lookback)?;
        let table = calibrate_radii(&daily, &self.config.calibration(t))
            .map_err(|source| BacktestError::Calibration { date: self.panel.dates[t], source })?;
        let mut cache = self.cache.radii.lock().expect("cache lock");
        for row in &table.rows {
            cache.insert((t, row.n), row.epsilon);
        }
        Ok(cache[&(t, n)])
    }

    fn problem(&self, t: usize, n: usize) -> Result<RelaxationProblem, BacktestError> {
        let c = self.config;
        let d = self.panel.dim();
        let w = compound_windows(self.panel, t, c.lookback, n, c.inflation)?;
        Ok(RelaxationProblem {
            model: AffineGrowthModel::new(vec![c.tc_rate; d], w.r_fn, n)?,
            utility: c.utility,
            support: w.support,
            empirical: EmpiricalDistribution::uniform(w.samples).map_err(SolveError::from).map_err(|e| {
                BacktestError::Solve { date: self.panel.dates[t], horizon: n, source: e }
            })?,
            epsilon: self.radius(t, n)?,
            p: c.p,
            control_set: ControlSet::long_only(d, c.leverage_cap, c.eta),
            tolerances: c.tolerances,
        })
    }

    fn solve(&self, t: usize, n: usize) -> Result<(RelaxationProblem, RelaxationSolution), BacktestError> {
        let problem = self.problem(t, n)?;
        let sol = cutting_plane(&problem)
            .map_err(|source| BacktestError::Solve { date: self.panel.dates[t], horizon: n, source })?;
        Ok((problem, sol))
    }

    fn decide(&self, t: usize, horizons: &[usize]) -> Result<Decision, BacktestError> {
        // radii first, so parallel solves hit a warm cache
        for &n in horizons {
            self.radius(t, n)?;
        }
        let solved: Vec<(RelaxationProblem, RelaxationSolution)> =
            horizons.par_iter().map(|&n| self.solve(t, n)).collect::<Result<_, _>>()?;
        let values: Vec<(usize, f64)> = solved.iter().map(|(p, s)| (p.horizon(), s.value)).collect();
        let n = argmax_horizon(&values).expect("nonempty horizons");
        let (problem, sol) = solved.iter().find(|(p, _)| p.horizon() == n).expect("chosen horizon");
        let gap = if self.config.certify {
            Some(GapRow::new(self.panel.dates[t], &empirical_gap(sol, problem)?))
        } else {
            None
        };
        Ok(Decision {
            n,
            target: sol.u_star.clone(),
            j_cvx: sol.value,
            epsilon: problem.epsilon,
            candidates: solved
                .iter()
                .map(|(p, s)| HorizonCandidate { n: p.horizon(), epsilon: p.epsilon, value: s.value, u: s.u_star.clone() })
                .collect(),
            gap,
        })
    }
}

/// Relaxation problems for every candidate horizon at decision index
/// `end_index`, built exactly as a backtest rebalance would build them.
pub fn problems_at(
    panel: &PricePanel,
    config: &BacktestConfig,
    end_index: usize,
    cache: &RadiusCache,
) -> Result<Vec<RelaxationProblem>, BacktestError> {
    config.validate()?;
    let planner = Planner { panel, config, cache };
    config.horizons.iter().map(|&n| planner.problem(end_index, n)).collect()
}

/// Runs one backtest.
pub fn run_backtest(panel: &PricePanel, config: &BacktestConfig) -> Result<BacktestLedger, BacktestError> {
    run_backtest_with_cache(panel, config, &RadiusCache::default())
}

pub fn run_backtest_with_cache(
    panel: &PricePanel,
    config: &BacktestConfig,
    cache: &RadiusCache,
) -> Result<BacktestLedger, BacktestError> {
    config.validate()?;
    let start = config.start();
    if start < config.lookback || start + 1 >= panel.len() {
        return Err(BacktestError::Data(DataError::InsufficientHistory {
            needed: start.max(config.lookback) + 2,
            available: panel.len(),
        }));
    }
    let d = panel.dim();
    let planner = Planner { panel, config, cache };
    let last = panel.len() - 1;
    let equal = vec![1.0 / d as f64; d];

    let mut book = Book { shares: vec![0.0; d], cash: config.initial_wealth };
    let mut rows = Vec::with_capacity(last - start + 1);
    let mut events = Vec::new();
    let mut gaps = Vec::new();
    let mut tc_total = 0.0;
    let mut next_rebalance = start;
    let mut fixed_n = None;
    let mut hold = 1;

    for t in start..=last {
        let prices = &panel.prices[t];
        if t > start {
            let rf = panel.riskfree_annual[t - 1] / TRADING_DAYS;
            book.cash *= 1.0 + rf;
        }
        let mut cost = 0.0;
        let mut rebalanced = false;
        if t == start && matches!(config.scheme, Scheme::BuyAndHold | Scheme::EqualWeightDaily) {
            book.rebalance(prices, &equal, 0.0);
        } else if t == next_rebalance && t < last {
            let before = book.wealth(prices);
            let (n, target, j, eps, candidates) = match config.scheme {
                Scheme::BuyAndHold => unreachable!("no rebalances after inception"),
                Scheme::EqualWeightDaily => (1, equal.clone(), None, None, Vec::new()),
                Scheme::Adaptive | Scheme::Static => {
                    let horizons = match fixed_n {
                        Some(n) => vec![n],
                        None => config.horizons.clone(),
                    };
                    let dec = planner.decide(t, &horizons)?;
                    if config.scheme == Scheme::Static {
                        fixed_n = Some(dec.n);
                    }
                    gaps.extend(dec.gap);
                    (dec.n, dec.target, Some(dec.j_cvx), Some(dec.epsilon), dec.candidates)
                }
            };
            cost = book.rebalance(prices, &target, config.tc_rate);
            tc_total += cost;
            rebalanced = true;
            hold = n;
            next_rebalance = t + n;
            events.push(RebalanceEvent {
                date: panel.dates[t],
                index: t,
                n,
                target,
                j_cvx: j,
                epsilon: eps,
                cost,
                wealth_before: before,
                wealth_after: book.wealth(prices),
                candidates,
            });
        }
        if t == start && config.scheme == Scheme::EqualWeightDaily {
            next_rebalance = start + 1;
        }
        rows.push(LedgerRow { date: panel.dates[t], wealth: book.wealth(prices), cash: book.cash, cost, n: hold, rebalanced });
        if config.scheme == Scheme::BuyAndHold {
            hold = 0;
        }
    }

    // metrics start from the pre-trade value, so day-one returns carry the
    // first execution cost
    let mut wealth: Vec<f64> = rows.iter().map(|r| r.wealth).collect();
    wealth[0] = config.initial_wealth;
    let years = (wealth.len() - 1) as f64 / TRADING_DAYS;
    let mut metrics = compute_metrics(&wealth, &panel.riskfree_annual[start..], years);
    metrics.tc_total = tc_total;
    metrics.n_rebalances = events.len();
    Ok(BacktestLedger { scheme: config.scheme, rows, events, gaps, tc_total, metrics })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcRow {
    pub rate: f64,
    pub final_value: f64,
    pub mean_n: f64,
    pub rebalances: usize,
    /// Share of rebalances choosing each horizon.
    pub frequencies: BTreeMap<usize, f64>,
}

/// Adaptive backtest per cost rate. Radii do not depend on costs and are
/// shared across runs.
pub fn tc_sensitivity(panel: &PricePanel, config: &BacktestConfig, rates: &[f64]) -> Result<Vec<TcRow>, BacktestError> {
    if config.scheme != Scheme::Adaptive {
        return Err(BacktestError::InvalidConfig("cost sweeps use the adaptive scheme".into()));
    }
    let cache = RadiusCache::default();
    rates
        .iter()
        .map(|&rate| {
            let cfg = BacktestConfig { tc_rate: rate, ..config.clone() };
            let ledger = run_backtest_with_cache(panel, &cfg, &cache)?;
            let count = ledger.events.len();
            let mut frequencies: BTreeMap<usize, f64> = config.horizons.iter().map(|&n| (n, 0.0)).collect();
            for e in &ledger.events {
                *frequencies.entry(e.n).or_default() += 1.0 / count as f64;
            }
            Ok(TcRow {
                rate,
                final_value: ledger.metrics.fv,
                mean_n: ledger.events.iter().map(|e| e.n as f64).sum::<f64>() / count.max(1) as f64,
                rebalances: count,
                frequencies,
            })
        })
        .collect()
}

/// Daily ledger as `date,wealth,cash,cost,n,rebalanced`.
pub fn write_ledger_csv(ledger: &BacktestLedger, writer: impl Write) -> Result<(), BacktestError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in &ledger.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per rebalance: `date,index,n,j_cvx,epsilon,cost,wealth_before,wealth_after,u1..ud`.
pub fn write_events_csv(ledger: &BacktestLedger, dim: usize, writer: impl Write) -> Result<(), BacktestError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> =
        ["date", "index", "n", "j_cvx", "epsilon", "cost", "wealth_before", "wealth_after"].map(String::from).to_vec();
    header.extend((1..=dim).map(|i| format!("u{i}")));
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for e in &ledger.events {
        let mut rec = vec![
            e.date.to_string(),
            e.index.to_string(),
            e.n.to_string(),
            opt(e.j_cvx),
            opt(e.epsilon),
            e.cost.to_string(),
            e.wealth_before.to_string(),
            e.wealth_after.to_string(),
        ];
        rec.extend(e.target.iter().map(|u| u.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Risk-free growth of cash over `n` days at a constant yield.
pub fn cash_growth(rf_annual: f64, n: usize) -> f64 {
    1.0 + riskfree_n(rf_annual, n)
}
