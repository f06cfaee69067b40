//! Exact p-Wasserstein distance between finitely supported distributions
//! under the l1 ground norm.
//!
//! Two exact solvers back [`wasserstein_p`]:
//!
//! * equal-size uniform empiricals reduce to an assignment problem, solved by
//!   the O(N^3) Hungarian method with potentials;
//! * everything else goes through successive shortest paths on the dense
//!   bipartite transportation network (Dijkstra with reduced costs).
//!
//! Both return an optimal vertex of the transport polytope.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("empty distribution")]
    Empty,
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("Wasserstein order must be finite and >= 1, got {0}")]
    InvalidOrder(f64),
    #[error("sample {index} lies outside the declared support")]
    OutsideSupport { index: usize },
}

const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Weighted point cloud `sum_j w_j delta_{x_j}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EmpiricalRepr", into = "EmpiricalRepr")]
pub struct EmpiricalDistribution {
    samples: Vec<Vec<f64>>,
    weights: Vec<f64>,
    uniform: bool,
}

/// Wire form; omitted weights mean uniform.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmpiricalRepr {
    samples: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
}

impl TryFrom<EmpiricalRepr> for EmpiricalDistribution {
    type Error = TransportError;

    fn try_from(r: EmpiricalRepr) -> Result<Self, Self::Error> {
        match r.weights {
            None => Self::uniform(r.samples),
            Some(w) => Self::weighted(r.samples, w),
        }
    }
}

impl From<EmpiricalDistribution> for EmpiricalRepr {
    fn from(e: EmpiricalDistribution) -> Self {
        let weights = if e.uniform { None } else { Some(e.weights) };
        Self { samples: e.samples, weights }
    }
}

impl EmpiricalDistribution {
    pub fn uniform(samples: Vec<Vec<f64>>) -> Result<Self, TransportError> {
        let n = samples.len();
        if n == 0 {
            return Err(TransportError::Empty);
        }
        check_rows(&samples)?;
        Ok(Self { samples, weights: vec![1.0 / n as f64; n], uniform: true })
    }

    /// Weights must be nonnegative and sum to one within 1e-9; they are
    /// renormalized exactly.
    pub fn weighted(samples: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self, TransportError> {
        if samples.is_empty() {
            return Err(TransportError::Empty);
        }
        if samples.len() != weights.len() {
            return Err(TransportError::InvalidWeights(format!(
                "{} samples but {} weights",
                samples.len(),
                weights.len()
            )));
        }
        check_rows(&samples)?;
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(TransportError::InvalidWeights("weights must be finite and >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(TransportError::InvalidWeights(format!("weights sum to {total}, not 1")));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { samples, weights, uniform: false })
    }

    /// Checks every sample against a box support.
    pub fn check_support(&self, support: &crate::model::BoxSupport) -> Result<(), TransportError> {
        if support.dim() != self.dim() {
            return Err(TransportError::DimensionMismatch(support.dim(), self.dim()));
        }
        match self.samples.iter().position(|x| !support.contains(x, 1e-12)) {
            Some(index) => Err(TransportError::OutsideSupport { index }),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Weighted mean of `f` over the atoms.
    pub fn expectation(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        self.samples.iter().zip(&self.weights).map(|(x, w)| w * f(x)).sum()
    }
}

fn check_rows(samples: &[Vec<f64>]) -> Result<(), TransportError> {
    let d = samples[0].len();
    if d == 0 {
        return Err(TransportError::Empty);
    }
    for row in samples {
        if row.len() != d {
            return Err(TransportError::DimensionMismatch(d, row.len()));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(TransportError::InvalidWeights("non-finite sample coordinate".into()));
        }
    }
    Ok(())
}

/// Coupling matrix, row-major `rows x cols`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub rows: usize,
    pub cols: usize,
    pub mass: Vec<f64>,
    /// `sum_ij mass_ij * ||a_i - b_j||_1^p`
    pub cost: f64,
}

impl TransportPlan {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mass[i * self.cols + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.mass.chunks(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.mass.chunks(self.cols) {
            for (o, m) in out.iter_mut().zip(row) {
                *o += m;
            }
        }
        out
    }
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Ground cost matrix `||a_i - b_j||_1^p`, row-major.
pub fn cost_matrix(a: &EmpiricalDistribution, b: &EmpiricalDistribution, p: f64) -> Vec<f64> {
    let mut c = Vec::with_capacity(a.len() * b.len());
    for x in a.samples() {
        for y in b.samples() {
            let d = l1_distance(x, y);
            c.push(if p == 1.0 { d } else { d.powf(p) });
        }
    }
    c
}

/// Exact p-Wasserstein distance and an optimal coupling.
pub fn wasserstein_p(
    a: &EmpiricalDistribution,
    b: &EmpiricalDistribution,
    p: f64,
) -> Result<(f64, TransportPlan), TransportError> {
    if !(p.is_finite() && p >= 1.0) {
        return Err(TransportError::InvalidOrder(p));
    }
    if a.is_empty() || b.is_empty() {
        return Err(TransportError::Empty);
    }
    if a.dim() != b.dim() {
        return Err(TransportError::DimensionMismatch(a.dim(), b.dim()));
    }
    let cost = cost_matrix(a, b, p);
    let (rows, cols) = (a.len(), b.len());
    let mass = if a.is_uniform() && b.is_uniform() && rows == cols {
        let assignment = hungarian(&cost, rows);
        let mut mass = vec![0.0; rows * cols];
        let w = 1.0 / rows as f64;
        for (i, &j) in assignment.iter().enumerate() {
            mass[i * cols + j] = w;
        }
        mass
    } else {
        min_cost_transport(&cost, a.weights(), b.weights())
    };
    let total: f64 = mass.iter().zip(&cost).map(|(m, c)| m * c).sum::<f64>().max(0.0);
    let distance = if p == 1.0 { total } else { total.powf(1.0 / p) };
    Ok((distance, TransportPlan { rows, cols, mass, cost: total }))
}

/// Distance only.
pub fn wasserstein_distance(
    a: &EmpiricalDistribution,
    b: &EmpiricalDistribution,
    p: f64,
) -> Result<f64, TransportError> {
    wasserstein_p(a, b, p).map(|(d, _)| d)
}

/// Minimum-cost perfect matching on a dense `n x n` cost matrix. Returns the
/// column assigned to each row.
fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-based potentials; column 0 is a virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    assignment
}

const FLOW_EPS: f64 = 1e-15;

/// Successive shortest paths on the complete bipartite network from rows
/// (supplies) to columns (demands). Row-major mass matrix.
fn min_cost_transport(cost: &[f64], supply: &[f64], demand: &[f64]) -> Vec<f64> {
    let (m, n) = (supply.len(), demand.len());
    let mut flow = vec![0.0; m * n];
    let mut supply = supply.to_vec();
    let mut demand = demand.to_vec();
    // potentials: rows 0..m, columns m..m+n
    let mut pot = vec![0.0; m + n];
    // rows carrying flow into each column, for backward residual arcs
    let mut col_rows: Vec<Vec<usize>> = vec![Vec::new(); n];

    let mut dist = vec![0.0; m + n];
    let mut prev = vec![usize::MAX; m + n];
    let mut done = vec![false; m + n];

    let total = demand.iter().sum::<f64>().min(supply.iter().sum());
    let mut shipped = 0.0;
    let mut guard = 0usize;
    while shipped < total - 1e-13 {
        guard += 1;
        if guard > 50 * (m + n) * (m + n) {
            break;
        }
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        prev.iter_mut().for_each(|p| *p = usize::MAX);
        done.iter_mut().for_each(|d| *d = false);
        for i in 0..m {
            if supply[i] > FLOW_EPS {
                dist[i] = 0.0;
            }
        }
        let mut target = usize::MAX;
        loop {
            let mut best = f64::INFINITY;
            let mut node = usize::MAX;
            for (k, &dk) in dist.iter().enumerate() {
                if !done[k] && dk < best {
                    best = dk;
                    node = k;
                }
            }
            if node == usize::MAX {
                break;
            }
            done[node] = true;
            if node >= m {
                let j = node - m;
                if demand[j] > FLOW_EPS {
                    target = node;
                    break;
                }
                for &i in &col_rows[j] {
                    if flow[i * n + j] > FLOW_EPS && !done[i] {
                        let rc = (-cost[i * n + j] + pot[node] - pot[i]).max(0.0);
                        if best + rc < dist[i] {
                            dist[i] = best + rc;
                            prev[i] = node;
                        }
                    }
                }
            } else {
                let i = node;
                let row = &cost[i * n..(i + 1) * n];
                for j in 0..n {
                    let k = m + j;
                    if !done[k] {
                        let rc = (row[j] + pot[i] - pot[k]).max(0.0);
                        if best + rc < dist[k] {
                            dist[k] = best + rc;
                            prev[k] = i;
                        }
                    }
                }
            }
        }
        if target == usize::MAX {
            break;
        }
        let reach = dist[target];
        for k in 0..m + n {
            pot[k] += dist[k].min(reach);
        }
        // bottleneck along the path
        let mut amount = demand[target - m];
        let mut k = target;
        while prev[k] != usize::MAX {
            let p = prev[k];
            if p >= m {
                // backward arc column p -> row k
                amount = amount.min(flow[k * n + (p - m)]);
            }
            k = p;
        }
        amount = amount.min(supply[k]);
        let source = k;
        let mut k = target;
        while prev[k] != usize::MAX {
            let p = prev[k];
            if p < m {
                let j = k - m;
                if flow[p * n + j] <= FLOW_EPS {
                    col_rows[j].push(p);
                }
                flow[p * n + j] += amount;
            } else {
                let j = p - m;
                flow[k * n + j] -= amount;
                if flow[k * n + j] <= FLOW_EPS {
                    flow[k * n + j] = 0.0;
                    col_rows[j].retain(|&r| r != k);
                }
            }
            k = p;
        }
        supply[source] -= amount;
        demand[target - m] -= amount;
        shipped += amount;
    }
    flow
}
