//! Tractable convex relaxation of the Wasserstein-robust control problem and
//! its cutting-plane solution.
//!
//! For a fixed sampling period `n` the relaxation is
//!
//! ```text
//! max_{u, lambda, s, z}  (1/n) (-lambda eps^p + sum_j w_j s_j)
//!   s.t. min_{v in V_j} [ U(Phi_n(u, v)) + z_j'(v - xhat_j) ] - Omega_p(z_j, lambda) >= s_j
//!        lambda >= 0,  u viable
//! ```
//!
//! with `V_j` the vertices of the box support. The optimal value is a lower
//! bound on the worst-case expected utility rate over the Wasserstein ball;
//! it is exact when the utility is affine.
//!
//! [`cutting_plane`] grows per-sample active vertex sets, calling the
//! interior-point [`master_solve`] and the enumeration
//! [`separation_oracle`] until no vertex is violated.

mod cutting_plane;
mod master;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AffineGrowthModel, BoxSupport, ControlSet, ModelError, Utility};
use crate::transport::{EmpiricalDistribution, TransportError};

pub use cutting_plane::{cutting_plane, solve_with_active_sets};
pub use master::{master_solve, MasterPoint};

/// Largest disturbance dimension for which the separation oracle enumerates
/// the `2^d` vertices.
pub const MAX_ENUMERATION_DIM: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("disturbance dimension {0} exceeds the enumeration limit of {MAX_ENUMERATION_DIM}")]
    DimensionGuard(usize),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("horizon {horizon}: {source}")]
    Horizon { horizon: usize, source: Box<SolveError> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Constraint residual accepted by the convergence test.
    pub feas: f64,
    /// Suboptimality of each master solve, on the per-day scale.
    pub opt: f64,
    /// Outer cutting-plane iterations.
    pub iter_cap: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { feas: 1e-7, opt: 1e-7, iter_cap: 200 }
    }
}

/// One instance of the relaxation for a fixed sampling period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaxationProblem {
    pub model: AffineGrowthModel,
    #[serde(default)]
    pub utility: Utility,
    pub support: BoxSupport,
    pub empirical: EmpiricalDistribution,
    pub epsilon: f64,
    #[serde(default = "one")]
    pub p: f64,
    pub control_set: ControlSet,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn one() -> f64 {
    1.0
}

impl RelaxationProblem {
    pub fn horizon(&self) -> usize {
        self.model.period()
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        let d = self.support.dim();
        if self.model.dim() != d || self.control_set.dim() != d || self.empirical.dim() != d {
            return Err(SolveError::InvalidProblem(format!(
                "dimensions disagree: model {}, support {}, controls {}, samples {}",
                self.model.dim(),
                d,
                self.control_set.dim(),
                self.empirical.dim()
            )));
        }
        if d > MAX_ENUMERATION_DIM {
            return Err(SolveError::DimensionGuard(d));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(SolveError::InvalidProblem(format!("radius {} must be >= 0", self.epsilon)));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(SolveError::InvalidProblem(format!("order p = {} must be in [1, inf)", self.p)));
        }
        self.utility.validate()?;
        self.control_set.validate()?;
        self.empirical.check_support(&self.support)?;
        let t = &self.tolerances;
        if !(t.feas > 0.0 && t.opt > 0.0 && t.iter_cap > 0) {
            return Err(SolveError::InvalidProblem("tolerances must be positive".into()));
        }
        Ok(())
    }

    /// Stage reward `U(Phi_n(u, x))`.
    pub fn reward(&self, u: &[f64], x: &[f64]) -> f64 {
        self.utility.value(self.model.growth_factor_unchecked(u, x))
    }

    /// Sample-average utility rate `(1/n) E_Fhat[U(Phi_n(u, X))]`.
    pub fn saa_rate(&self, u: &[f64]) -> f64 {
        self.empirical.expectation(|x| self.reward(u, x)) / self.horizon() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    IterationCap,
    Infeasible,
}

/// Per-sample sets of enforced support vertices, as bit masks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveSets {
    pub sets: Vec<Vec<usize>>,
}

impl ActiveSets {
    /// Every set starts with the vertex `lo`, where the unpenalized reward of
    /// any long-only control is smallest.
    pub fn initial(samples: usize) -> Self {
        Self { sets: vec![vec![0]; samples] }
    }

    /// All `2^d` vertices for every sample.
    pub fn full(samples: usize, d: usize) -> Self {
        Self { sets: vec![(0..1usize << d).collect(); samples] }
    }

    /// Adds `mask` to set `j`; false when already present.
    pub fn insert(&mut self, j: usize, mask: usize) -> bool {
        if self.sets[j].contains(&mask) {
            false
        } else {
            self.sets[j].push(mask);
            true
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.sets.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }
}

/// Solution of the relaxation for one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxationSolution {
    pub horizon: usize,
    pub epsilon: f64,
    pub u_star: Vec<f64>,
    pub lambda_star: f64,
    pub s: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    /// `J*_cvx(n)`, already divided by `n`.
    pub value: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub active_set_sizes: Vec<usize>,
    /// Largest `s_j - (min over all vertices - Omega_p)`; nonpositive means
    /// every relaxed constraint holds exactly.
    pub max_residual: f64,
    /// Duality-gap bound of the last master solve, per-day scale.
    pub master_gap: f64,
    /// Master objective of the last solve, per-day scale.
    pub master_value: f64,
    /// True when `lambda` finished at the solver's internal upper bound.
    pub lambda_at_cap: bool,
}

/// `Omega_p(z, lambda)`, the conjugate penalty of `lambda ||.||_1^p` under
/// the dual (l-infinity) norm. Extended values are returned as `+inf`.
pub fn omega_p(z: &[f64], lambda: f64, p: f64) -> f64 {
    let dual = z.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if p == 1.0 {
        return if dual <= lambda { 0.0 } else { f64::INFINITY };
    }
    if lambda <= 0.0 {
        return if dual == 0.0 { 0.0 } else { f64::INFINITY };
    }
    let q = p / (p - 1.0);
    (p * lambda).powf(1.0 - q) * dual.powf(q) / q
}

/// Exact separation by vertex enumeration: the vertex minimizing
/// `psi(x) = U(Phi_n(u, x)) + z'(x - sample)` and the minimum.
pub fn separation_oracle(
    u: &[f64],
    z: &[f64],
    sample: &[f64],
    support: &BoxSupport,
    model: &AffineGrowthModel,
    utility: &Utility,
) -> Result<(Vec<f64>, f64), SolveError> {
    let d = support.dim();
    if d > MAX_ENUMERATION_DIM {
        return Err(SolveError::DimensionGuard(d));
    }
    if u.len() != d || z.len() != d || sample.len() != d || model.dim() != d {
        return Err(SolveError::InvalidProblem("separation oracle dimension mismatch".into()));
    }
    let (mask, value) = separate(u, z, sample, support, model, utility);
    Ok((support.vertex(mask), value))
}

pub(crate) fn separate(
    u: &[f64],
    z: &[f64],
    sample: &[f64],
    support: &BoxSupport,
    model: &AffineGrowthModel,
    utility: &Utility,
) -> (usize, f64) {
    let offset: f64 = z.iter().zip(sample).map(|(a, b)| a * b).sum();
    let drift = model.drift(u);
    let mut v = vec![0.0; support.dim()];
    let mut best = (0, f64::INFINITY);
    for mask in 0..support.vertex_count() {
        support.write_vertex(mask, &mut v);
        let mut ux = 0.0;
        let mut zx = 0.0;
        for i in 0..v.len() {
            ux += u[i] * v[i];
            zx += z[i] * v[i];
        }
        let psi = utility.value(ux + drift) + zx - offset;
        if psi < best.1 {
            best = (mask, psi);
        }
    }
    best
}

/// Rates closer than this are tied. All-cash solutions reach
/// `log(1 + r_daily)` at every horizon up to rounding.
pub const HORIZON_TIE: f64 = 1e-12;

/// Index of the best value; ties within [`HORIZON_TIE`] go to the smaller
/// horizon.
pub fn argmax_horizon(values: &[(usize, f64)]) -> Option<usize> {
    let mut sorted: Vec<(usize, f64)> = values.to_vec();
    sorted.sort_by_key(|(n, _)| *n);
    sorted
        .into_iter()
        .fold(None, |best: Option<(usize, f64)>, (n, v)| match best {
            Some((_, bv)) if v <= bv + HORIZON_TIE => best,
            _ => Some((n, v)),
        })
        .map(|(n, _)| n)
}

/// Solves each horizon independently and selects the one with the largest
/// certified rate.
pub fn select_horizon(
    problems: &[RelaxationProblem],
) -> Result<(usize, BTreeMap<usize, RelaxationSolution>), SolveError> {
    if problems.is_empty() {
        return Err(SolveError::InvalidProblem("no candidate horizons".into()));
    }
    let solved: Vec<(usize, RelaxationSolution)> = problems
        .par_iter()
        .map(|p| {
            let n = p.horizon();
            cutting_plane(p)
                .map(|s| (n, s))
                .map_err(|e| SolveError::Horizon { horizon: n, source: Box::new(e) })
        })
        .collect::<Result<_, _>>()?;
    let values: Vec<(usize, f64)> = solved.iter().map(|(n, s)| (*n, s.value)).collect();
    let best = argmax_horizon(&values).expect("nonempty");
    Ok((best, solved.into_iter().collect()))
}
