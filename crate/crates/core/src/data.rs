//! Price-panel ingestion and construction of overlapping n-period excess
//! return samples.
//!
//! Input is a wide CSV: `date,<TICKER>...,RF_ANNUAL` with ISO dates, adjusted
//! closes and the annualized risk-free yield as a decimal. Trading-day
//! arithmetic is index based.

use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BoxSupport, ModelError};

pub const RISKFREE_COLUMN: &str = "RF_ANNUAL";
pub const TRADING_DAYS: f64 = 252.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column {0}")]
    MissingColumn(String),
    #[error("row {row}: malformed number {value:?} in column {column}")]
    MalformedNumber { row: usize, column: String, value: String },
    #[error("row {row}: malformed date {value:?}")]
    MalformedDate { row: usize, value: String },
    #[error("duplicate date {0}")]
    DuplicateDate(NaiveDate),
    #[error("row {row}: missing cell in column {column}")]
    MissingCell { row: usize, column: String },
    #[error("row {row}: price {value} in column {column} is not positive")]
    NonPositivePrice { row: usize, column: String, value: f64 },
    #[error("insufficient history: need index {needed}, have {available}")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Daily adjusted closes plus the annualized risk-free yield.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricePanel {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    /// `T x d`
    pub prices: Vec<Vec<f64>>,
    pub riskfree_annual: Vec<f64>,
}

impl PricePanel {
    /// Validates the panel invariants and sorts rows by date.
    pub fn new(
        dates: Vec<NaiveDate>,
        tickers: Vec<String>,
        prices: Vec<Vec<f64>>,
        riskfree_annual: Vec<f64>,
    ) -> Result<Self, DataError> {
        let t = dates.len();
        if prices.len() != t || riskfree_annual.len() != t {
            return Err(DataError::InvalidWindow("ragged panel".into()));
        }
        let mut order: Vec<usize> = (0..t).collect();
        order.sort_by_key(|&k| dates[k]);
        for w in order.windows(2) {
            if dates[w[0]] == dates[w[1]] {
                return Err(DataError::DuplicateDate(dates[w[0]]));
            }
        }
        for (row, p) in prices.iter().enumerate() {
            if p.len() != tickers.len() {
                return Err(DataError::MissingCell {
                    row: row + 1,
                    column: tickers.get(p.len()).cloned().unwrap_or_default(),
                });
            }
            for (col, &v) in p.iter().enumerate() {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(DataError::NonPositivePrice {
                        row: row + 1,
                        column: tickers[col].clone(),
                        value: v,
                    });
                }
            }
        }
        Ok(Self {
            dates: order.iter().map(|&k| dates[k]).collect(),
            tickers,
            prices: order.iter().map(|&k| prices[k].clone()).collect(),
            riskfree_annual: order.iter().map(|&k| riskfree_annual[k]).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.tickers.len()
    }

    /// Simple daily returns; entry `k` is the return from day `k` to `k + 1`.
    pub fn daily_returns(&self) -> Vec<Vec<f64>> {
        self.prices
            .windows(2)
            .map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| b / a - 1.0).collect())
            .collect()
    }

    /// The `lookback` daily returns ending at price index `end_index`.
    pub fn returns_window(&self, end_index: usize, lookback: usize) -> Result<Vec<Vec<f64>>, DataError> {
        if end_index >= self.len() {
            return Err(DataError::InsufficientHistory { needed: end_index + 1, available: self.len() });
        }
        if end_index < lookback {
            return Err(DataError::InsufficientHistory { needed: lookback, available: end_index });
        }
        Ok((end_index - lookback + 1..=end_index)
            .map(|t| {
                self.prices[t].iter().zip(&self.prices[t - 1]).map(|(b, a)| b / a - 1.0).collect()
            })
            .collect())
    }
}

/// Reads a wide price CSV.
pub fn load_csv(path: impl AsRef<Path>) -> Result<PricePanel, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    read_csv(file)
}

pub fn read_csv(reader: impl Read) -> Result<PricePanel, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let date_col = names
        .iter()
        .position(|h| h.eq_ignore_ascii_case("date"))
        .ok_or_else(|| DataError::MissingColumn("date".into()))?;
    let rf_col = names
        .iter()
        .position(|h| *h == RISKFREE_COLUMN)
        .ok_or_else(|| DataError::MissingColumn(RISKFREE_COLUMN.into()))?;
    let ticker_cols: Vec<usize> = (0..names.len()).filter(|&c| c != date_col && c != rf_col).collect();
    if ticker_cols.is_empty() {
        return Err(DataError::MissingColumn("at least one ticker".into()));
    }
    let tickers: Vec<String> = ticker_cols.iter().map(|&c| names[c].to_string()).collect();

    let mut dates = Vec::new();
    let mut prices = Vec::new();
    let mut rf = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        let cell = |c: usize| -> Result<&str, DataError> {
            match rec.get(c) {
                Some(s) if !s.is_empty() => Ok(s),
                _ => Err(DataError::MissingCell { row, column: names[c].to_string() }),
            }
        };
        let number = |c: usize| -> Result<f64, DataError> {
            let s = cell(c)?;
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::MalformedNumber {
                    row,
                    column: names[c].to_string(),
                    value: s.to_string(),
                })
        };
        let ds = cell(date_col)?;
        let date = NaiveDate::parse_from_str(ds, "%Y-%m-%d")
            .map_err(|_| DataError::MalformedDate { row, value: ds.to_string() })?;
        let mut p = Vec::with_capacity(ticker_cols.len());
        for &c in &ticker_cols {
            let v = number(c)?;
            if v <= 0.0 {
                return Err(DataError::NonPositivePrice { row, column: names[c].to_string(), value: v });
            }
            p.push(v);
        }
        dates.push(date);
        prices.push(p);
        rf.push(number(rf_col)?);
    }
    PricePanel::new(dates, tickers, prices, rf)
}

pub fn write_csv(panel: &PricePanel, writer: impl Write) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string()];
    header.extend(panel.tickers.iter().cloned());
    header.push(RISKFREE_COLUMN.into());
    w.write_record(&header)?;
    for t in 0..panel.len() {
        let mut rec = vec![panel.dates[t].format("%Y-%m-%d").to_string()];
        rec.extend(panel.prices[t].iter().map(|v| v.to_string()));
        rec.push(panel.riskfree_annual[t].to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| DataError::Io { path: "<writer>".into(), source })?;
    Ok(())
}

/// n-period risk-free return from an annualized yield: `(1 + r/252)^n - 1`.
pub fn riskfree_n(r_annual: f64, n: usize) -> f64 {
    (1.0 + r_annual / TRADING_DAYS).powi(n as i32) - 1.0
}

/// Overlapping n-period compound returns `prod(1 + r) - 1` of a daily series.
pub fn compound_returns(daily: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    if n == 0 || daily.len() < n {
        return Vec::new();
    }
    let d = daily[0].len();
    (0..=daily.len() - n)
        .map(|s| {
            (0..d)
                .map(|i| daily[s..s + n].iter().map(|r| 1.0 + r[i]).product::<f64>() - 1.0)
                .collect()
        })
        .collect()
}

/// Excess-return samples for one horizon and look-back window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSamples {
    pub horizon: usize,
    pub samples: Vec<Vec<f64>>,
    pub r_fn: f64,
    pub support: BoxSupport,
}

impl WindowSamples {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// One sample per row: `horizon,r_fn,x1..xd`. Floats use the shortest
    /// round-trip representation.
    pub fn write_csv(&self, writer: impl Write) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let d = self.support.dim();
        let mut header = vec!["horizon".to_string(), "r_fn".to_string()];
        header.extend((1..=d).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for x in &self.samples {
            let mut rec = vec![self.horizon.to_string(), self.r_fn.to_string()];
            rec.extend(x.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|source| DataError::Io { path: "<writer>".into(), source })?;
        Ok(())
    }

    /// Inverse of [`write_csv`](Self::write_csv); the support comes from its
    /// own JSON document.
    pub fn read_csv(reader: impl Read, support: BoxSupport) -> Result<Self, DataError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut horizon = None;
        let mut r_fn = None;
        let mut samples = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |c: usize| -> Result<f64, DataError> {
                let s = rec.get(c).unwrap_or("");
                s.parse::<f64>().map_err(|_| DataError::MalformedNumber {
                    row: k + 1,
                    column: c.to_string(),
                    value: s.to_string(),
                })
            };
            horizon = Some(parse(0)? as usize);
            r_fn = Some(parse(1)?);
            samples.push((2..rec.len()).map(parse).collect::<Result<Vec<_>, _>>()?);
        }
        match (horizon, r_fn) {
            (Some(horizon), Some(r_fn)) => Ok(Self { horizon, samples, r_fn, support }),
            _ => Err(DataError::InvalidWindow("no samples".into())),
        }
    }
}

/// Builds the `L - n + 1` overlapping n-period excess-return samples from the
/// `lookback` daily returns ending at `end_index`. The risk-free leg is the
/// n-period rate implied by the yield on the window's end date. The support
/// box is the componentwise hull of the samples, inflated by `inflation`.
pub fn compound_windows(
    panel: &PricePanel,
    end_index: usize,
    lookback: usize,
    n: usize,
    inflation: f64,
) -> Result<WindowSamples, DataError> {
    if n == 0 || n > lookback {
        return Err(DataError::InvalidWindow(format!("horizon {n} vs look-back {lookback}")));
    }
    let daily = panel.returns_window(end_index, lookback)?;
    let r_fn = riskfree_n(panel.riskfree_annual[end_index], n);
    let samples: Vec<Vec<f64>> = compound_returns(&daily, n)
        .into_iter()
        .map(|x| x.into_iter().map(|v| v - r_fn).collect())
        .collect();
    let support = BoxSupport::fitted(samples.iter().map(|s| s.as_slice()), inflation)?;
    Ok(WindowSamples { horizon: n, samples, r_fn, support })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const GOOD: &str = "date,AAA,BBB,RF_ANNUAL\n\
        2024-01-02,100,50,0.05\n\
        2024-01-03,110,51,0.05\n\
        2024-01-04,104.5,49,0.05\n";

    #[test]
    fn loads_well_formed_file() {
        let p = read_csv(GOOD.as_bytes()).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p.tickers, vec!["AAA", "BBB"]);
        assert_eq!(p.riskfree_annual, vec![0.05; 3]);
    }

    #[test]
    fn sorts_rows_by_date() {
        let s = "date,AAA,RF_ANNUAL\n2024-01-03,2,0\n2024-01-02,1,0\n";
        let p = read_csv(s.as_bytes()).unwrap();
        assert_eq!(p.prices, vec![vec![1.0], vec![2.0]]);
    }

    #[test]
    fn rejects_duplicate_date() {
        let s = "date,AAA,RF_ANNUAL\n2024-01-02,1,0\n2024-01-02,2,0\n";
        let err = read_csv(s.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("duplicate date"), "{err}");
    }

    #[test]
    fn rejects_negative_price() {
        let s = "date,AAA,RF_ANNUAL\n2024-01-02,-1,0\n";
        assert!(matches!(read_csv(s.as_bytes()), Err(DataError::NonPositivePrice { .. })));
    }

    #[test]
    fn distinct_errors_for_malformed_inputs() {
        let s = "date,AAA,RF_ANNUAL\n2024-01-02,abc,0\n";
        assert!(matches!(read_csv(s.as_bytes()), Err(DataError::MalformedNumber { .. })));
        let s = "date,AAA\n2024-01-02,1\n";
        assert!(matches!(read_csv(s.as_bytes()), Err(DataError::MissingColumn(c)) if c == RISKFREE_COLUMN));
        let s = "date,AAA,RF_ANNUAL\n2024-01-02,,0\n";
        assert!(matches!(read_csv(s.as_bytes()), Err(DataError::MissingCell { .. })));
        let s = "date,AAA,RF_ANNUAL\n01/02/2024,1,0\n";
        assert!(matches!(read_csv(s.as_bytes()), Err(DataError::MalformedDate { .. })));
    }

    #[test]
    fn riskfree_conversion() {
        assert_eq!(riskfree_n(0.0, 21), 0.0);
        // quoted values are rounded loosely; the closed form is authoritative
        assert_abs_diff_eq!(riskfree_n(0.0504, 21), 0.004209, epsilon = 2e-6);
        assert_abs_diff_eq!(riskfree_n(0.05, 252), 0.051267, epsilon = 2e-6);
        for &(r, n) in &[(0.0504, 21), (0.05, 252), (0.031, 5)] {
            let direct = (n as f64 * (r / 252.0_f64).ln_1p()).exp_m1();
            assert_abs_diff_eq!(riskfree_n(r, n), direct, epsilon = 1e-15);
        }
    }

    fn panel(prices: Vec<Vec<f64>>, rf: f64) -> PricePanel {
        let start = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
        let dates = (0..prices.len()).map(|k| start + chrono::Days::new(k as u64)).collect();
        let d = prices[0].len();
        let tickers = (0..d).map(|i| format!("A{i}")).collect();
        let t = prices.len();
        PricePanel::new(dates, tickers, prices, vec![rf; t]).unwrap()
    }

    #[test]
    fn two_day_compound_excess() {
        let p = panel(vec![vec![100.0], vec![110.0], vec![104.5]], 0.0);
        let w = compound_windows(&p, 2, 2, 2, 0.0).unwrap();
        assert_eq!(w.len(), 1);
        assert_abs_diff_eq!(w.samples[0][0], 0.045, epsilon = 1e-14);
    }

    #[test]
    fn constant_prices_give_minus_riskfree() {
        let p = panel(vec![vec![10.0, 20.0]; 30], 0.03);
        let w = compound_windows(&p, 29, 20, 5, 0.0).unwrap();
        let rf = riskfree_n(0.03, 5);
        assert_eq!(w.len(), 16);
        for x in &w.samples {
            assert_abs_diff_eq!(x[0], -rf, epsilon = 1e-15);
            assert_abs_diff_eq!(x[1], -rf, epsilon = 1e-15);
        }
    }

    #[test]
    fn sample_count_and_support() {
        let prices: Vec<Vec<f64>> =
            (0..300).map(|k| vec![100.0 + (k as f64 * 0.7).sin() * 5.0 + k as f64 * 0.1]).collect();
        let p = panel(prices, 0.02);
        let w = compound_windows(&p, 299, 252, 21, 0.0).unwrap();
        assert_eq!(w.len(), 232);
        assert!(w.samples.iter().all(|x| w.support.contains(x, 0.0)));
        assert!(matches!(
            compound_windows(&p, 100, 252, 21, 0.0),
            Err(DataError::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn unit_horizon_reproduces_daily_excess() {
        let prices: Vec<Vec<f64>> =
            (0..40).map(|k| vec![50.0 * (1.0 + 0.01 * (k as f64).cos()), 30.0 + k as f64]).collect();
        let p = panel(prices, 0.04);
        let w = compound_windows(&p, 39, 30, 1, 0.0).unwrap();
        let daily = p.returns_window(39, 30).unwrap();
        let rf = riskfree_n(0.04, 1);
        for (x, r) in w.samples.iter().zip(&daily) {
            for (a, b) in x.iter().zip(r) {
                assert_eq!(*a, *b - rf);
            }
        }
    }

    #[test]
    fn window_csv_round_trip_is_exact() {
        let prices: Vec<Vec<f64>> =
            (0..80).map(|k| vec![1.0 + (k as f64 * 0.37).sin().abs(), 2.0 + 1e-3 * k as f64]).collect();
        let p = panel(prices, 0.0313);
        let w = compound_windows(&p, 79, 60, 7, 0.1).unwrap();
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        let support: BoxSupport =
            serde_json::from_str(&serde_json::to_string(&w.support).unwrap()).unwrap();
        let back = WindowSamples::read_csv(buf.as_slice(), support).unwrap();
        assert_eq!(back, w);
    }
}
