//! Subcommand implementations. Each writes its machine-readable outputs
//! before any plot.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use chrono::NaiveDate;
use mdro::backtest::{
    problems_at, run_backtest, tc_sensitivity, write_events_csv, write_ledger_csv, BacktestError, LedgerRow,
    MetricBlock, RadiusCache, Scheme,
};
use mdro::calibrate::calibrate_radii;
use mdro::certificate::{empirical_gap, write_gap_csv, GapReport};
use mdro::data::{load_csv, PricePanel};
use mdro::dro::{cutting_plane, select_horizon, RelaxationProblem, RelaxationSolution, SolveStatus};
use mdro::montecarlo::{verify_long_run, verify_viability, LongRunReport, SyntheticStream, ViabilityReport};
use serde::Serialize;

use crate::config::RunConfig;
use crate::plot::{line_chart, Series};

/// Error with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub const EXIT_NUMERIC: u8 = 1;
pub const EXIT_INPUT: u8 = 2;

pub trait Classify<T> {
    fn input(self) -> Result<T, Failure>;
    fn numeric(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: EXIT_INPUT, error: e.into() })
    }

    fn numeric(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: EXIT_NUMERIC, error: e.into() })
    }
}

fn classify_backtest<T>(r: Result<T, BacktestError>) -> Result<T, Failure> {
    match r {
        Err(e @ (BacktestError::Solve { .. } | BacktestError::Certificate(_))) => Err(e).numeric(),
        other => other.input(),
    }
}

fn numeric_failure(msg: String) -> Failure {
    Failure { code: EXIT_NUMERIC, error: anyhow!(msg) }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).numeric()?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display())).numeric()
}

fn csv_file(path: &Path) -> Result<fs::File, Failure> {
    fs::File::create(path).with_context(|| format!("cannot write {}", path.display())).numeric()
}

/// Creates the output directory and echoes the effective configuration.
fn prepare(cfg: &RunConfig) -> Result<&Path, Failure> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("cannot create {}", cfg.out.display())).input()?;
    write_json(&cfg.out.join("config.json"), cfg)?;
    Ok(&cfg.out)
}

fn load_panel(cfg: &RunConfig) -> Result<PricePanel, Failure> {
    let path = cfg.data.as_ref().ok_or_else(|| anyhow!("config has no data path")).input()?;
    load_csv(path).input()
}

fn end_index(cfg: &RunConfig, panel: &PricePanel) -> Result<usize, Failure> {
    let last = panel.len().saturating_sub(1);
    let t = cfg.end_index.unwrap_or(last);
    if t > last || t < cfg.backtest.lookback {
        return Err(anyhow!(
            "decision index {t} needs {} days of history inside a panel of {} rows",
            cfg.backtest.lookback,
            panel.len()
        ))
        .input();
    }
    Ok(t)
}

fn problems(cfg: &RunConfig) -> Result<Vec<RelaxationProblem>, Failure> {
    if !cfg.problems.is_empty() {
        let distinct: BTreeSet<usize> = cfg.problems.iter().map(RelaxationProblem::horizon).collect();
        if distinct.len() != cfg.problems.len() {
            return Err(anyhow!("explicit problems must have distinct horizons")).input();
        }
        return Ok(cfg.problems.clone());
    }
    let panel = load_panel(cfg)?;
    let t = end_index(cfg, &panel)?;
    classify_backtest(problems_at(&panel, &cfg.backtest, t, &RadiusCache::default()))
}

pub fn calibrate(cfg: &RunConfig) -> Result<(), Failure> {
    let panel = load_panel(cfg)?;
    let t = end_index(cfg, &panel)?;
    let out = prepare(cfg)?;
    let daily = panel.returns_window(t, cfg.backtest.lookback).input()?;
    let table = calibrate_radii(&daily, &cfg.backtest.calibration(t)).input()?;
    write_json(&out.join("radii.json"), &table)
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    chosen_n: usize,
    solutions: Vec<&'a RelaxationSolution>,
}

#[derive(Serialize)]
struct GapEntry {
    n: usize,
    #[serde(flatten)]
    report: GapReport,
    /// Sample-average rate of the relaxation's control, recomputed directly.
    saa_rate_at_u: f64,
    /// `saa_rate_at_u - J*_cvx`; nonnegative since the relaxation is a
    /// lower bound, zero at radius zero for vertex-supported samples.
    saa_excess: f64,
}

/// Largest amount the certified rate may exceed the direct sample average.
const SAA_SLACK: f64 = 1e-7;

pub fn solve(cfg: &RunConfig) -> Result<(), Failure> {
    let problems = problems(cfg)?;
    let out = prepare(cfg)?;
    let (chosen, solutions) = select_horizon(&problems).numeric()?;
    let mut gaps = Vec::new();
    let mut issues = Vec::new();
    for p in &problems {
        let n = p.horizon();
        let sol = &solutions[&n];
        let report = empirical_gap(sol, p).numeric()?;
        let saa = p.saa_rate(&sol.u_star);
        if sol.status != SolveStatus::Optimal {
            issues.push(format!("horizon {n}: status {:?}", sol.status));
        }
        if sol.value > saa + SAA_SLACK {
            issues.push(format!("horizon {n}: certified rate {} exceeds sample average {saa}", sol.value));
        }
        gaps.push(GapEntry { n, report, saa_rate_at_u: saa, saa_excess: saa - sol.value });
    }
    write_json(&out.join("solutions.json"), &SolveOutput { chosen_n: chosen, solutions: solutions.values().collect() })?;
    write_json(&out.join("gaps.json"), &gaps)?;
    if issues.is_empty() {
        Ok(())
    } else {
        Err(numeric_failure(issues.join("; ")))
    }
}

fn scheme_name(s: Scheme) -> String {
    serde_json::to_value(s).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

pub fn backtest(cfg: &RunConfig) -> Result<(), Failure> {
    let panel = load_panel(cfg)?;
    let out = prepare(cfg)?;
    let main = classify_backtest(run_backtest(&panel, &cfg.backtest))?;
    write_ledger_csv(&main, csv_file(&out.join("ledger.csv"))?).numeric()?;
    write_events_csv(&main, panel.dim(), csv_file(&out.join("events.csv"))?).numeric()?;
    if cfg.backtest.certify {
        write_gap_csv(&main.gaps, csv_file(&out.join("gaps.csv"))?).numeric()?;
    }
    let mut metrics: BTreeMap<String, MetricBlock> = BTreeMap::new();
    metrics.insert(scheme_name(main.scheme), main.metrics.clone());
    if cfg.benchmarks {
        for scheme in [Scheme::BuyAndHold, Scheme::EqualWeightDaily] {
            if scheme == cfg.backtest.scheme {
                continue;
            }
            let bench_cfg = mdro::backtest::BacktestConfig { scheme, ..cfg.backtest.clone() };
            let ledger = classify_backtest(run_backtest(&panel, &bench_cfg))?;
            let name = scheme_name(scheme);
            write_ledger_csv(&ledger, csv_file(&out.join(format!("ledger_{name}.csv")))?).numeric()?;
            metrics.insert(name, ledger.metrics);
        }
    }
    write_json(&out.join("metrics.json"), &metrics)?;
    render(out, Some(&scheme_name(main.scheme)))
}

pub fn tc_sweep(cfg: &RunConfig) -> Result<(), Failure> {
    let panel = load_panel(cfg)?;
    let mut cfg = cfg.clone();
    cfg.backtest.scheme = Scheme::Adaptive;
    let out = prepare(&cfg)?;
    let rows = classify_backtest(tc_sensitivity(&panel, &cfg.backtest, &cfg.tc_rates))?;
    write_json(&out.join("tc_sweep.json"), &rows)
}

#[derive(Serialize)]
struct SimulationEntry {
    n: usize,
    u: Vec<f64>,
    long_run: LongRunReport,
    viability: ViabilityReport,
}

pub fn simulate(cfg: &RunConfig) -> Result<(), Failure> {
    let problems = problems(cfg)?;
    let out = prepare(cfg)?;
    let sim = &cfg.simulate;
    let mut entries = Vec::new();
    let mut issues = Vec::new();
    for p in &problems {
        let n = p.horizon();
        let sol = cutting_plane(p).with_context(|| format!("horizon {n}")).numeric()?;
        let stream = match &sim.stream {
            Some(spec) => SyntheticStream::new(spec.clone(), p.support.clone(), sim.seed),
            None => SyntheticStream::from_empirical(&p.empirical, p.support.clone(), sim.seed),
        }
        .with_context(|| format!("horizon {n}"))
        .input()?;
        let long_run = verify_long_run(p, &sol, &stream, sim.draws).with_context(|| format!("horizon {n}")).input()?;
        let viability = verify_viability(&p.model, &sol.u_star, p.control_set.eta, &stream, sim.viability_steps);
        if !long_run.pass {
            issues.push(format!("horizon {n}: long-run rate below the certified floor"));
        }
        if viability.violations > 0 {
            issues.push(format!("horizon {n}: {} viability violations", viability.violations));
        }
        entries.push(SimulationEntry { n, u: sol.u_star, long_run, viability });
    }
    write_json(&out.join("simulate.json"), &entries)?;
    if issues.is_empty() {
        Ok(())
    } else {
        Err(numeric_failure(issues.join("; ")))
    }
}

pub fn report(dir: &Path) -> Result<(), Failure> {
    if !dir.is_dir() {
        return Err(anyhow!("{} is not a directory", dir.display())).input();
    }
    let main = fs::read_to_string(dir.join("config.json"))
        .ok()
        .and_then(|t| RunConfig::from_json(&t).ok())
        .map(|c| scheme_name(c.backtest.scheme));
    render(dir, main.as_deref())
}

fn ledger_files(dir: &Path) -> Result<Vec<(String, PathBuf)>, Failure> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).input()? {
        let path = entry.input()?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if let Some(rest) = name.strip_prefix("ledger").and_then(|r| r.strip_suffix(".csv")) {
            let label = rest.strip_prefix('_').unwrap_or("").to_string();
            found.push((label, path));
        }
    }
    found.sort();
    Ok(found)
}

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, Failure> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display())).input()?;
    rdr.deserialize().collect::<Result<Vec<T>, _>>().with_context(|| format!("malformed {}", path.display())).input()
}

#[derive(serde::Deserialize)]
struct EventRow {
    date: NaiveDate,
    n: usize,
}

#[derive(serde::Deserialize)]
struct GapCsvRow {
    date: NaiveDate,
    delta_max: f64,
    bound: f64,
}

/// Renders every chart whose inputs exist in `dir`; fails when none do.
fn render(dir: &Path, main_label: Option<&str>) -> Result<(), Failure> {
    let mut rendered = 0;
    let ledgers = ledger_files(dir)?;
    if !ledgers.is_empty() {
        let mut series = Vec::new();
        for (label, path) in &ledgers {
            let rows: Vec<LedgerRow> = read_rows(path)?;
            let label = if label.is_empty() { main_label.unwrap_or("strategy").to_string() } else { label.clone() };
            series.push(Series { label, points: rows.iter().map(|r| (r.date, r.wealth)).collect() });
        }
        let svg = line_chart("Wealth", "account value", &series, false).numeric()?;
        fs::write(dir.join("wealth.svg"), svg).numeric()?;
        rendered += 1;
    }
    let events = dir.join("events.csv");
    if events.is_file() {
        let rows: Vec<EventRow> = read_rows(&events)?;
        let series = [Series { label: "n".into(), points: rows.iter().map(|r| (r.date, r.n as f64)).collect() }];
        let svg = line_chart("Chosen sampling period", "trading days", &series, true).numeric()?;
        fs::write(dir.join("chosen_n.svg"), svg).numeric()?;
        rendered += 1;
    }
    let gaps = dir.join("gaps.csv");
    if gaps.is_file() {
        let rows: Vec<GapCsvRow> = read_rows(&gaps)?;
        let series = [
            Series { label: "empirical gap".into(), points: rows.iter().map(|r| (r.date, r.delta_max)).collect() },
            Series { label: "bound".into(), points: rows.iter().map(|r| (r.date, r.bound)).collect() },
        ];
        let svg = line_chart("Duality gap", "gap", &series, false).numeric()?;
        fs::write(dir.join("gaps.svg"), svg).numeric()?;
        rendered += 1;
    }
    let metrics = dir.join("metrics.json");
    if metrics.is_file() {
        let text = fs::read_to_string(&metrics).input()?;
        let table: BTreeMap<String, serde_json::Value> = serde_json::from_str(&text)
            .with_context(|| format!("malformed {}", metrics.display()))
            .input()?;
        fs::write(dir.join("summary.md"), summary_table(&table)).numeric()?;
        rendered += 1;
    }
    if rendered == 0 {
        return Err(anyhow!("{} holds no backtest outputs to report on", dir.display())).input();
    }
    Ok(())
}

fn summary_table(metrics: &BTreeMap<String, serde_json::Value>) -> String {
    let cols = [
        ("FV", "fv", 4, false),
        ("TR", "tr", 2, true),
        ("CAGR", "cagr", 2, true),
        ("MDD", "mdd", 2, true),
        ("SR", "sharpe", 2, false),
        ("Vol", "vol", 2, true),
        ("Best day", "best_day", 2, true),
        ("Worst day", "worst_day", 2, true),
        ("TC", "tc_total", 4, false),
        ("#Reb", "n_rebalances", 0, false),
    ];
    let mut s = String::from("| Strategy |");
    for (h, ..) in cols {
        s.push_str(&format!(" {h} |"));
    }
    s.push_str("\n|---|");
    s.push_str(&"---:|".repeat(cols.len()));
    s.push('\n');
    for (name, m) in metrics {
        s.push_str(&format!("| {name} |"));
        for (_, key, digits, pct) in cols {
            let cell = match m.get(key).and_then(serde_json::Value::as_f64) {
                Some(v) if pct => format!("{:.digits$}%", v * 100.0),
                Some(v) => format!("{v:.digits$}"),
                None => "n/a".into(),
            };
            s.push_str(&format!(" {cell} |"));
        }
        s.push('\n');
    }
    s
}
