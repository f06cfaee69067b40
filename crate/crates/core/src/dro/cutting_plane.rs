use rayon::prelude::*;

use super::master::{master_solve, MasterPoint};
use super::{omega_p, separate, ActiveSets, RelaxationProblem, RelaxationSolution, SolveError, SolveStatus};

/// Coordinates this close to their lower bound are tried at the bound.
const SNAP: f64 = 1e-3;
/// Certified value a snap may give up.
const SNAP_LOSS: f64 = 1e-12;
/// Leverage this close to the cap is tried at the cap.
const CAP_SNAP: f64 = 1e-6;

/// Solves the relaxation by adding the most violated vertex per sample until
/// every relaxed constraint holds within `tolerances.feas`.
pub fn cutting_plane(problem: &RelaxationProblem) -> Result<RelaxationSolution, SolveError> {
    problem.validate()?;
    let tol = problem.tolerances;
    let mut sets = ActiveSets::initial(problem.empirical.len());
    let mut iterations = 0;
    loop {
        iterations += 1;
        let point = master_solve(problem, &sets)?;
        let found = separate_all(problem, &point);
        let mut added = 0;
        for (j, (mask, phi)) in found.into_iter().enumerate() {
            let om = omega_p(&point.z[j], point.lambda, problem.p);
            if phi - om < point.s[j] - tol.feas && sets.insert(j, mask) {
                added += 1;
            }
        }
        if added == 0 {
            return Ok(finish(problem, point, &sets, SolveStatus::Optimal, iterations));
        }
        if iterations >= tol.iter_cap {
            return Ok(finish(problem, point, &sets, SolveStatus::IterationCap, iterations));
        }
    }
}

/// One master solve over fixed vertex sets, with the same post-processing as
/// [`cutting_plane`]. With [`ActiveSets::full`] this is the exact one-shot
/// solution.
pub fn solve_with_active_sets(
    problem: &RelaxationProblem,
    sets: &ActiveSets,
) -> Result<RelaxationSolution, SolveError> {
    let point = master_solve(problem, sets)?;
    Ok(finish(problem, point, sets, SolveStatus::Optimal, 1))
}

fn separate_all(problem: &RelaxationProblem, point: &MasterPoint) -> Vec<(usize, f64)> {
    problem
        .empirical
        .samples()
        .par_iter()
        .zip(point.z.par_iter())
        .map(|(x, z)| separate(&point.u, z, x, &problem.support, &problem.model, &problem.utility))
        .collect()
}

/// Exact `s_j` over all vertices for fixed `(u, lambda, z)` and the
/// resulting objective.
fn tighten(problem: &RelaxationProblem, u: &[f64], lambda: f64, z: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let s: Vec<f64> = problem
        .empirical
        .samples()
        .par_iter()
        .zip(z.par_iter())
        .map(|(x, zj)| {
            separate(u, zj, x, &problem.support, &problem.model, &problem.utility).1
                - omega_p(zj, lambda, problem.p)
        })
        .collect();
    let mean: f64 = s.iter().zip(problem.empirical.weights()).map(|(a, w)| a * w).sum();
    let value = (mean - lambda * problem.epsilon.powf(problem.p)) / problem.horizon() as f64;
    (s, value)
}

fn finish(
    problem: &RelaxationProblem,
    point: MasterPoint,
    sets: &ActiveSets,
    status: SolveStatus,
    iterations: usize,
) -> RelaxationSolution {
    let lambda = if problem.p == 1.0 {
        point.z.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()))
    } else {
        point.lambda
    };
    let found = separate_all(problem, &point);
    let max_residual = found
        .iter()
        .enumerate()
        .map(|(j, (_, phi))| point.s[j] - (phi - omega_p(&point.z[j], point.lambda, problem.p)))
        .fold(f64::NEG_INFINITY, f64::max);

    let (mut s, mut value) = tighten(problem, &point.u, lambda, &point.z);
    let mut u = point.u.clone();
    let lower = &problem.control_set.lower;
    let snapped: Vec<f64> =
        u.iter().zip(lower).map(|(&ui, &l)| if ui - l < SNAP { l } else { ui }).collect();
    let cap = problem.control_set.leverage_cap;
    let total: f64 = snapped.iter().sum();
    let scaled: Vec<f64> = if total > 0.0 && total < cap && cap - total < CAP_SNAP {
        snapped.iter().map(|v| v * cap / total).collect()
    } else {
        snapped.clone()
    };
    for candidate in [snapped, scaled] {
        if candidate != u && problem.control_set.is_viable(&problem.model, &candidate, &problem.support) {
            let (s2, v2) = tighten(problem, &candidate, lambda, &point.z);
            if v2 >= value - SNAP_LOSS {
                u = candidate;
                s = s2;
                value = v2;
            }
        }
    }

    RelaxationSolution {
        horizon: problem.horizon(),
        epsilon: problem.epsilon,
        u_star: u,
        lambda_star: lambda,
        s,
        z: point.z,
        value,
        status,
        iterations,
        active_set_sizes: sets.sizes(),
        max_residual,
        master_gap: point.gap,
        master_value: point.value,
        lambda_at_cap: point.lambda > 0.99 * point.lambda_max,
    }
}
