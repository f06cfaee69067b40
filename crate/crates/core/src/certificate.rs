//! Duality-gap certificates for the relaxation.
//!
//! For each sample the relaxation replaces the inner primal
//! `P_j = inf_x U(Phi_n(u, x)) + lambda ||x - xhat_j||_1^p` by a dual value
//! `D_j <= P_j`. The interchange error `P_j - D_j` is bounded by
//! `B = L_n(u) D^2 / 2`, with `L_n` the smoothness constant and `D` the
//! support diameter; it vanishes for affine utilities.

use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dro::{omega_p, separation_oracle, RelaxationProblem, RelaxationSolution, SolveError};
use crate::model::{smoothness_constant, AffineGrowthModel, BoxSupport, ModelError, Utility};

/// Slack on `delta_max <= B` absorbing solver noise.
pub const TAU_GAP: f64 = 1e-6;

/// Per-axis grid size of the multistart search in [`primal_value`].
pub const GRID_POINTS: usize = 33;

/// Largest dimension for which the `3^d` cell vertices are enumerated.
const MAX_CELL_DIM: usize = 12;

#[derive(Debug, Error)]
pub enum CertificateError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub horizon: usize,
    pub gaps: Vec<f64>,
    pub delta_max: f64,
    pub bound: f64,
    /// `delta_max / bound`; zero when both vanish, `+inf` (serialized as
    /// null) when only the bound does.
    pub utilization: f64,
    pub satisfied: bool,
}

/// A-posteriori bound `L_n(u) D^2 / 2` for a viable control.
pub fn theoretical_bound(
    model: &AffineGrowthModel,
    utility: &Utility,
    u: &[f64],
    support: &BoxSupport,
) -> Result<f64, ModelError> {
    let l = smoothness_constant(model, utility, u, support)?;
    let diam = support.diameter();
    Ok(0.5 * l * diam * diam)
}

/// A-priori bound `(sup ||u||_inf)^2 / eta^2 * D^2 / 2` over the whole
/// viable set, given the largest attainable `||u||_inf`.
pub fn a_priori_bound(utility: &Utility, sup_norm: f64, eta: f64, support: &BoxSupport) -> Result<f64, ModelError> {
    if utility.is_affine() {
        return Ok(0.0);
    }
    if !(eta > 0.0) {
        return Err(ModelError::InvalidControlSet(format!("eta must be positive, got {eta}")));
    }
    let diam = support.diameter();
    Ok(0.5 * (sup_norm / eta).powi(2) * diam * diam)
}

/// Upper estimate of `P_j = inf_x U(Phi_n(u, x)) + lambda ||x - xhat_j||_1^p`.
///
/// Exact for `p = 1`: the objective is concave on each cell of the grid cut
/// by `xhat_j`, so the minimum sits at a cell vertex (coordinates in
/// `{lo_i, xhat_ji, hi_i}`); affine utilities separate per coordinate.
/// Otherwise a multistart over vertices, the sample and per-axis grids is
/// refined by coordinate descent.
pub fn primal_value(u: &[f64], lambda: f64, sample: &[f64], problem: &RelaxationProblem) -> f64 {
    let d = sample.len();
    let p = problem.p;
    if p == 1.0 {
        if let Utility::Affine { slope, intercept } = problem.utility {
            return affine_separable(u, lambda, sample, problem, slope, intercept);
        }
        if d <= MAX_CELL_DIM {
            return cell_vertices(u, lambda, sample, problem);
        }
    }
    multistart(u, lambda, sample, problem)
}

fn objective(u: &[f64], lambda: f64, sample: &[f64], problem: &RelaxationProblem, x: &[f64]) -> f64 {
    let dist: f64 = x.iter().zip(sample).map(|(a, b)| (a - b).abs()).sum();
    let penalty = if lambda == 0.0 { 0.0 } else { lambda * dist.powf(problem.p) };
    problem.reward(u, x) + penalty
}

fn affine_separable(
    u: &[f64],
    lambda: f64,
    sample: &[f64],
    problem: &RelaxationProblem,
    slope: f64,
    intercept: f64,
) -> f64 {
    let (lo, hi) = (problem.support.lo(), problem.support.hi());
    let linear: f64 = (0..sample.len())
        .map(|i| {
            [lo[i], sample[i], hi[i]]
                .iter()
                .map(|&x| slope * u[i] * x + lambda * (x - sample[i]).abs())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    linear + slope * problem.model.drift(u) + intercept
}

fn cell_vertices(u: &[f64], lambda: f64, sample: &[f64], problem: &RelaxationProblem) -> f64 {
    let d = sample.len();
    let (lo, hi) = (problem.support.lo(), problem.support.hi());
    let total = 3usize.pow(d as u32);
    let mut x = vec![0.0; d];
    let mut best = f64::INFINITY;
    for code in 0..total {
        let mut c = code;
        for i in 0..d {
            x[i] = match c % 3 {
                0 => lo[i],
                1 => sample[i],
                _ => hi[i],
            };
            c /= 3;
        }
        best = best.min(objective(u, lambda, sample, problem, &x));
    }
    best
}

fn multistart(u: &[f64], lambda: f64, sample: &[f64], problem: &RelaxationProblem) -> f64 {
    let d = sample.len();
    let (lo, hi) = (problem.support.lo(), problem.support.hi());
    let f = |x: &[f64]| objective(u, lambda, sample, problem, x);
    let mut starts: Vec<Vec<f64>> = vec![sample.to_vec()];
    if d <= MAX_CELL_DIM {
        starts.extend((0..problem.support.vertex_count()).map(|m| problem.support.vertex(m)));
    }
    for i in 0..d {
        for k in 0..GRID_POINTS {
            let mut x = sample.to_vec();
            x[i] = lo[i] + (hi[i] - lo[i]) * k as f64 / (GRID_POINTS - 1) as f64;
            starts.push(x);
        }
    }
    let mut scored: Vec<(f64, Vec<f64>)> = starts.into_iter().map(|x| (f(&x), x)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    scored.truncate(8);
    scored
        .into_iter()
        .map(|(mut fx, mut x)| {
            for _ in 0..50 {
                let before = fx;
                for i in 0..d {
                    let (xi, fi) = line_min(|t| {
                        let mut y = x.clone();
                        y[i] = t;
                        f(&y)
                    }, lo[i], hi[i]);
                    if fi < fx {
                        x[i] = xi;
                        fx = fi;
                    }
                }
                if before - fx <= 1e-15 * before.abs().max(1.0) {
                    break;
                }
            }
            fx
        })
        .fold(f64::INFINITY, f64::min)
}

/// Grid scan followed by golden-section refinement around the best cell.
fn line_min(g: impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    if b <= a {
        return (a, g(a));
    }
    let h = (b - a) / (GRID_POINTS - 1) as f64;
    let (k, _) = (0..GRID_POINTS)
        .map(|k| (k, g(a + h * k as f64)))
        .fold((0, f64::INFINITY), |acc, (k, v)| if v < acc.1 { (k, v) } else { acc });
    let mut lo = (a + h * (k as f64 - 1.0)).max(a);
    let mut hi = (a + h * (k as f64 + 1.0)).min(b);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut e) = (hi - r * (hi - lo), lo + r * (hi - lo));
    let (mut gc, mut ge) = (g(c), g(e));
    for _ in 0..80 {
        if gc < ge {
            hi = e;
            e = c;
            ge = gc;
            c = hi - r * (hi - lo);
            gc = g(c);
        } else {
            lo = c;
            c = e;
            gc = ge;
            e = lo + r * (hi - lo);
            ge = g(e);
        }
    }
    let grid_best = a + h * k as f64;
    [(grid_best, g(grid_best)), (c, gc), (e, ge), (a, g(a)), (b, g(b))]
        .into_iter()
        .fold((a, f64::INFINITY), |acc, cand| if cand.1 < acc.1 { cand } else { acc })
}

/// Per-sample gaps `P_j(u*, lambda*) - D_j(z*_j)` and the bound check.
pub fn empirical_gap(solution: &RelaxationSolution, problem: &RelaxationProblem) -> Result<GapReport, CertificateError> {
    let u = &solution.u_star;
    let lambda = solution.lambda_star;
    let gaps = problem
        .empirical
        .samples()
        .par_iter()
        .zip(solution.z.par_iter())
        .map(|(x, z)| {
            let (_, dual) =
                separation_oracle(u, z, x, &problem.support, &problem.model, &problem.utility)?;
            let dual = dual - omega_p(z, lambda, problem.p);
            Ok(primal_value(u, lambda, x, problem) - dual)
        })
        .collect::<Result<Vec<f64>, SolveError>>()?;
    let delta_max = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bound = theoretical_bound(&problem.model, &problem.utility, u, &problem.support)?;
    let utilization = if bound > 0.0 {
        delta_max.max(0.0) / bound
    } else if delta_max <= TAU_GAP {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(GapReport {
        horizon: problem.horizon(),
        gaps,
        delta_max,
        bound,
        utilization,
        satisfied: delta_max <= bound + TAU_GAP,
    })
}

/// One row of the gap time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub date: NaiveDate,
    pub n: usize,
    pub delta_max: f64,
    pub bound: f64,
    pub utilization: f64,
}

impl GapRow {
    pub fn new(date: NaiveDate, report: &GapReport) -> Self {
        Self {
            date,
            n: report.horizon,
            delta_max: report.delta_max,
            bound: report.bound,
            utilization: report.utilization,
        }
    }
}

/// Writes `date,n,delta_max,bound,utilization`.
pub fn write_gap_csv(rows: &[GapRow], writer: impl Write) -> Result<(), CertificateError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dro::Tolerances;
    use crate::model::ControlSet;
    use crate::transport::EmpiricalDistribution;
    use approx::assert_abs_diff_eq;

    fn affine_problem(lo: f64, hi: f64) -> RelaxationProblem {
        RelaxationProblem {
            model: AffineGrowthModel::frictionless(1, 0.0, 1).unwrap(),
            utility: Utility::Affine { slope: 1.0, intercept: 0.0 },
            support: BoxSupport::new(vec![lo], vec![hi]).unwrap(),
            empirical: EmpiricalDistribution::uniform(vec![vec![0.0]]).unwrap(),
            epsilon: 0.0,
            p: 1.0,
            control_set: ControlSet::long_only(1, 1.0, 0.5),
            tolerances: Tolerances::default(),
        }
    }

    #[test]
    fn bound_examples() {
        let s = BoxSupport::new(vec![-0.1, -0.1], vec![0.1, 0.1]).unwrap();
        let m = AffineGrowthModel::frictionless(2, 0.0, 1).unwrap();
        let aff = Utility::Affine { slope: 2.0, intercept: 1.0 };
        assert_eq!(theoretical_bound(&m, &aff, &[0.5, 0.2], &s).unwrap(), 0.0);
        assert_eq!(a_priori_bound(&aff, 1.0, 0.5, &s).unwrap(), 0.0);
        assert_eq!(theoretical_bound(&m, &Utility::Log, &[0.0, 0.0], &s).unwrap(), 0.0);
        assert_abs_diff_eq!(a_priori_bound(&Utility::Log, 1.0, 0.5, &s).unwrap(), 0.32, epsilon = 1e-15);
    }

    #[test]
    fn bound_rejects_non_viable_control() {
        let s = BoxSupport::new(vec![-2.0], vec![1.0]).unwrap();
        let m = AffineGrowthModel::frictionless(1, 0.0, 1).unwrap();
        assert!(theoretical_bound(&m, &Utility::Log, &[1.0], &s).is_err());
    }

    #[test]
    fn primal_affine_examples() {
        let p = affine_problem(-0.1, 0.1);
        // lambda = 2 > |u|: moving away from the sample never pays
        assert_abs_diff_eq!(primal_value(&[1.0], 2.0, &[0.0], &p), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(primal_value(&[1.0], 0.5, &[0.0], &p), 0.95, epsilon = 1e-15);
    }

    #[test]
    fn primal_without_penalty_is_vertex_minimum() {
        let mut p = affine_problem(-0.2, 0.3);
        p.utility = Utility::Log;
        let u = [0.8];
        assert_abs_diff_eq!(primal_value(&u, 0.0, &[0.1], &p), (1.0 - 0.8 * 0.2f64).ln(), epsilon = 1e-15);
        p.p = 2.0;
        assert_abs_diff_eq!(primal_value(&u, 0.0, &[0.1], &p), (1.0 - 0.8 * 0.2f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn line_search_finds_interior_minimum() {
        let (x, v) = line_min(|t| (t - 0.3217).powi(2), -1.0, 1.0);
        assert_abs_diff_eq!(x, 0.3217, epsilon = 1e-7);
        assert!(v < 1e-13);
    }

    #[test]
    fn gap_csv_columns() {
        let report = GapReport {
            horizon: 21,
            gaps: vec![0.0],
            delta_max: 1e-4,
            bound: 2e-4,
            utilization: 0.5,
            satisfied: true,
        };
        let date = NaiveDate::from_ymd_opt(2024, 3, 1).unwrap();
        let mut buf = Vec::new();
        write_gap_csv(&[GapRow::new(date, &report)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "date,n,delta_max,bound,utilization\n2024-03-01,21,0.0001,0.0002,0.5\n");
    }
}
