//! Synthetic-stream checks of the viability and long-run guarantees.
//!
//! Streams are i.i.d. draws from a discrete law or from independent
//! Gaussians truncated to the support box. Draw `k` of replication `r` comes
//! from [`crate::rng::stream`]`(seed, r)`: discrete atoms by inverse CDF on
//! one uniform, Gaussian coordinates by Box-Muller pairs with rejection
//! outside `[lo_i, hi_i]`.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dro::{RelaxationProblem, RelaxationSolution};
use crate::model::{AffineGrowthModel, BoxSupport};
use crate::rng;
use crate::transport::{wasserstein_distance, EmpiricalDistribution, TransportError};

/// Draws used to estimate the distance of a continuous stream to the
/// empirical distribution.
pub const COVERAGE_DRAWS: usize = 2000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonteCarloError {
    #[error("stream is at distance {distance} from the empirical distribution, above the radius {epsilon}")]
    CoverageViolated { distance: f64, epsilon: f64 },
    #[error("invalid stream: {0}")]
    InvalidStream(String),
    #[error("solution did not converge")]
    NotOptimal,
    #[error(transparent)]
    Transport(#[from] TransportError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StreamSpec {
    Discrete { atoms: Vec<Vec<f64>>, probs: Vec<f64> },
    TruncatedGaussian { mean: Vec<f64>, std: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticStream {
    pub spec: StreamSpec,
    pub support: BoxSupport,
    pub seed: u64,
}

impl SyntheticStream {
    pub fn new(spec: StreamSpec, support: BoxSupport, seed: u64) -> Result<Self, MonteCarloError> {
        let d = support.dim();
        match &spec {
            StreamSpec::Discrete { atoms, probs } => {
                if atoms.is_empty() || atoms.len() != probs.len() {
                    return Err(MonteCarloError::InvalidStream("atoms and probabilities must pair up".into()));
                }
                if probs.iter().any(|p| !(*p >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(MonteCarloError::InvalidStream("probabilities must be >= 0 and sum to 1".into()));
                }
                if let Some(k) = atoms.iter().position(|a| a.len() != d || !support.contains(a, 0.0)) {
                    return Err(MonteCarloError::InvalidStream(format!("atom {k} lies outside the support")));
                }
            }
            StreamSpec::TruncatedGaussian { mean, std } => {
                if mean.len() != d || std.len() != d || std.iter().any(|s| !(*s > 0.0)) {
                    return Err(MonteCarloError::InvalidStream("need d means and positive deviations".into()));
                }
            }
        }
        Ok(Self { spec, support, seed })
    }

    /// Stream with the empirical distribution itself as the true law.
    pub fn from_empirical(empirical: &EmpiricalDistribution, support: BoxSupport, seed: u64) -> Result<Self, MonteCarloError> {
        let spec = StreamSpec::Discrete { atoms: empirical.samples().to_vec(), probs: empirical.weights().to_vec() };
        Self::new(spec, support, seed)
    }

    pub fn sampler(&self, replication: u64) -> Sampler<'_> {
        Sampler { stream: self, rng: rng::stream(self.seed, replication), spare: None }
    }

    /// Exact distance for discrete laws; for continuous laws the distance of
    /// a [`COVERAGE_DRAWS`]-point sample, drawn from replication `u64::MAX`.
    pub fn distance_to(&self, empirical: &EmpiricalDistribution, p: f64) -> Result<f64, MonteCarloError> {
        let law = match &self.spec {
            StreamSpec::Discrete { atoms, probs } => EmpiricalDistribution::weighted(atoms.clone(), probs.clone())?,
            StreamSpec::TruncatedGaussian { .. } => {
                let mut s = self.sampler(u64::MAX);
                EmpiricalDistribution::uniform((0..COVERAGE_DRAWS).map(|_| s.draw()).collect())?
            }
        };
        Ok(wasserstein_distance(&law, empirical, p)?)
    }
}

pub struct Sampler<'a> {
    stream: &'a SyntheticStream,
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Sampler<'_> {
    pub fn draw(&mut self) -> Vec<f64> {
        match &self.stream.spec {
            StreamSpec::Discrete { atoms, probs } => {
                let t = rng::unit_f64(&mut self.rng);
                let mut acc = 0.0;
                for (a, p) in atoms.iter().zip(probs) {
                    acc += p;
                    if t < acc {
                        return a.clone();
                    }
                }
                atoms.last().expect("nonempty").clone()
            }
            StreamSpec::TruncatedGaussian { mean, std } => {
                let (lo, hi) = (self.stream.support.lo(), self.stream.support.hi());
                (0..mean.len())
                    .map(|i| loop {
                        let x = mean[i] + std[i] * self.normal();
                        if x >= lo[i] && x <= hi[i] {
                            break x;
                        }
                    })
                    .collect()
            }
        }
    }

    fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - rng::unit_f64(&mut self.rng);
        let u2 = rng::unit_f64(&mut self.rng);
        let r = (-2.0 * u1.ln()).sqrt();
        let a = std::f64::consts::TAU * u2;
        self.spare = Some(r * a.sin());
        r * a.cos()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRunReport {
    #[serde(rename = "J_cvx")]
    pub j_cvx: f64,
    /// Mean of `U(Phi_n(u*, X_k)) / n`.
    pub realized_rate: f64,
    /// `log(V_K / V_0) / (K n)`.
    pub log_wealth_rate: f64,
    pub stderr: f64,
    pub pass: bool,
    #[serde(rename = "K")]
    pub k: usize,
    pub distance_to_empirical: f64,
}

/// Running mean and variance; the mean of a constant sequence is exact.
#[derive(Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn stderr(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
    }
}

/// Long-run average utility rate under the certified control. Refuses when
/// the stream's law lies outside the ambiguity ball.
pub fn verify_long_run(
    problem: &RelaxationProblem,
    solution: &RelaxationSolution,
    stream: &SyntheticStream,
    k: usize,
) -> Result<LongRunReport, MonteCarloError> {
    if solution.status != crate::dro::SolveStatus::Optimal {
        return Err(MonteCarloError::NotOptimal);
    }
    let distance = stream.distance_to(&problem.empirical, problem.p)?;
    if distance > problem.epsilon + 1e-12 {
        return Err(MonteCarloError::CoverageViolated { distance, epsilon: problem.epsilon });
    }
    let n = problem.horizon() as f64;
    let mut sampler = stream.sampler(0);
    let mut rate = Welford::default();
    let mut log_wealth = Welford::default();
    for _ in 0..k {
        let x = sampler.draw();
        let growth = problem.model.growth_factor_unchecked(&solution.u_star, &x);
        rate.push(problem.utility.value(growth) / n);
        log_wealth.push(growth.ln() / n);
    }
    Ok(LongRunReport {
        j_cvx: solution.value,
        realized_rate: rate.mean,
        log_wealth_rate: log_wealth.mean,
        stderr: rate.stderr(),
        pass: rate.mean >= solution.value - 3.0 * rate.stderr(),
        k,
        distance_to_empirical: distance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub step: usize,
    pub draw: Vec<f64>,
    pub growth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViabilityReport {
    #[serde(rename = "K")]
    pub k: usize,
    pub violations: usize,
    pub first_violation: Option<Violation>,
    pub min_growth: f64,
    /// `log(V_K / V_0)`; wealth itself would under- or overflow.
    pub log_wealth: f64,
}

/// Simulates `V_{k+1} = Phi_n(u, X_k) V_k` and counts steps where
/// `V_{k+1} < eta V_k` or `V_{k+1} <= 0`.
pub fn verify_viability(
    model: &AffineGrowthModel,
    u: &[f64],
    eta: f64,
    stream: &SyntheticStream,
    k: usize,
) -> ViabilityReport {
    let mut sampler = stream.sampler(0);
    let mut report =
        ViabilityReport { k, violations: 0, first_violation: None, min_growth: f64::INFINITY, log_wealth: 0.0 };
    for step in 0..k {
        let x = sampler.draw();
        let growth = model.growth_factor_unchecked(u, &x);
        report.min_growth = report.min_growth.min(growth);
        if !(growth >= eta && growth > 0.0) {
            report.violations += 1;
            if report.first_violation.is_none() {
                report.first_violation = Some(Violation { step, draw: x, growth });
            }
        } else {
            report.log_wealth += growth.ln();
        }
    }
    report
}
