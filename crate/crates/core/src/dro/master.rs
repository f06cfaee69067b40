//! Log-barrier interior-point solver for the master problem over finite
//! vertex sets.
//!
//! Variables split into a global block `(u, lambda)` and one block
//! `(s_j, z_j, w_j)` per sample, where `w_j` bounds `||z_j||_inf`. The
//! Hessian is block-arrow shaped, so each Newton step eliminates the sample
//! blocks and solves a `(d+1)`-dimensional Schur complement.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ActiveSets, RelaxationProblem, SolveError};
use crate::model::Utility;

/// Optimizer of the master problem for fixed active sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasterPoint {
    pub u: Vec<f64>,
    pub lambda: f64,
    pub s: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    /// Master objective divided by the horizon.
    pub value: f64,
    /// Duality-gap bound `m / t` divided by the horizon.
    pub gap: f64,
    pub newton_steps: usize,
    pub lambda_max: f64,
}

const MU: f64 = 20.0;
const CENTER_TOL: f64 = 1e-10;
const MAX_CENTER_STEPS: usize = 200;
const ARMIJO: f64 = 0.01;

/// Solves the master problem restricted to `sets`.
pub fn master_solve(problem: &RelaxationProblem, sets: &ActiveSets) -> Result<MasterPoint, SolveError> {
    problem.validate()?;
    if sets.sets.len() != problem.empirical.len() || sets.sets.iter().any(Vec::is_empty) {
        return Err(SolveError::InvalidProblem("one nonempty active set per sample is required".into()));
    }
    let nv = problem.support.vertex_count();
    if sets.sets.iter().flatten().any(|&m| m >= nv) {
        return Err(SolveError::InvalidProblem("active vertex mask out of range".into()));
    }
    Master::new(problem, sets).solve()
}

struct Cut {
    a: Vec<f64>,
    diff: Vec<f64>,
}

#[derive(Clone)]
struct State {
    u: Vec<f64>,
    lambda: f64,
    s: Vec<f64>,
    z: Vec<Vec<f64>>,
    w: Vec<f64>,
}

struct Direction {
    global: DVector<f64>,
    blocks: Vec<DVector<f64>>,
}

struct Master<'a> {
    p: &'a RelaxationProblem,
    d: usize,
    weights: &'a [f64],
    cuts: Vec<Vec<Cut>>,
    c0: f64,
    viab: Vec<f64>,
    eps_p: f64,
    lambda_max: f64,
}

/// `Omega` written through `w >= ||z||_inf` and its derivatives in `(w, lambda)`.
#[derive(Default, Clone, Copy)]
struct OmegaParts {
    val: f64,
    w: f64,
    l: f64,
    ww: f64,
    wl: f64,
    ll: f64,
}

impl<'a> Master<'a> {
    fn new(p: &'a RelaxationProblem, sets: &ActiveSets) -> Self {
        let d = p.dim();
        let kappa = p.model.friction();
        let mut v = vec![0.0; d];
        let cuts = sets
            .sets
            .iter()
            .zip(p.empirical.samples())
            .map(|(set, x)| {
                set.iter()
                    .map(|&mask| {
                        p.support.write_vertex(mask, &mut v);
                        Cut {
                            a: v.iter().zip(kappa).map(|(vi, k)| vi - k).collect(),
                            diff: v.iter().zip(x).map(|(vi, xi)| vi - xi).collect(),
                        }
                    })
                    .collect()
            })
            .collect();
        let viab = p.support.lo().iter().zip(kappa).map(|(l, k)| l - k).collect();
        let eps_p = p.epsilon.powf(p.p);
        Self {
            p,
            d,
            weights: p.empirical.weights(),
            cuts,
            c0: 1.0 + p.model.riskfree(),
            viab,
            eps_p,
            lambda_max: lambda_bound(p),
        }
    }

    fn omega(&self, w: f64, lambda: f64) -> OmegaParts {
        let p = self.p.p;
        if p == 1.0 {
            return OmegaParts::default();
        }
        let q = p / (p - 1.0);
        let c = p.powf(1.0 - q) / q;
        let wq = w.powf(q);
        let lq = lambda.powf(1.0 - q);
        OmegaParts {
            val: c * wq * lq,
            w: c * q * w.powf(q - 1.0) * lq,
            l: c * (1.0 - q) * wq * lambda.powf(-q),
            ww: c * q * (q - 1.0) * w.powf(q - 2.0) * lq,
            wl: c * q * (1.0 - q) * w.powf(q - 1.0) * lambda.powf(-q),
            ll: c * q * (q - 1.0) * wq * lambda.powf(-q - 1.0),
        }
    }

    fn growth(&self, u: &[f64], a: &[f64]) -> f64 {
        self.c0 + dot(u, a)
    }

    fn objective(&self, x: &State) -> f64 {
        x.lambda * self.eps_p - dot(self.weights, &x.s)
    }

    /// Writes every barrier constraint value; false if any is not positive.
    fn values(&self, x: &State, out: &mut Vec<f64>) -> bool {
        out.clear();
        let util = &self.p.utility;
        for (j, cuts) in self.cuts.iter().enumerate() {
            let om = self.omega(x.w[j], x.lambda).val;
            for c in cuts {
                let g = util.value(self.growth(&x.u, &c.a)) + dot(&x.z[j], &c.diff) - om - x.s[j];
                out.push(g);
            }
            for zi in &x.z[j] {
                out.push(x.w[j] - zi);
                out.push(x.w[j] + zi);
            }
            if self.p.p == 1.0 {
                out.push(x.lambda - x.w[j]);
            }
        }
        out.push(self.lambda_max - x.lambda);
        if self.p.p > 1.0 {
            out.push(x.lambda);
        }
        let lower = &self.p.control_set.lower;
        for i in 0..self.d {
            out.push(x.u[i] - lower[i]);
        }
        out.push(self.p.control_set.leverage_cap - x.u.iter().sum::<f64>());
        out.push(dot(&x.u, &self.viab) + self.c0 - self.p.control_set.eta);
        out.iter().all(|g| *g > 0.0 && g.is_finite())
    }

    fn start(&self) -> Result<State, SolveError> {
        let d = self.d;
        let cs = &self.p.control_set;
        let slack = cs.leverage_cap - cs.lower.iter().sum::<f64>();
        if slack <= 1e-12 {
            return Err(SolveError::InvalidProblem("control set has an empty interior".into()));
        }
        let margin = |u: &[f64]| dot(u, &self.viab) + self.c0;
        let center: Vec<f64> = cs.lower.iter().map(|l| l + slack / (d as f64 + 1.0)).collect();
        let mut best = cs.lower.clone();
        let (k, ck) = self
            .viab
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &c)| if c > acc.1 { (i, c) } else { acc });
        if ck > 0.0 {
            best[k] += slack;
        }
        let (m_best, m_center) = (margin(&best), margin(&center));
        if m_best <= cs.eta {
            return Err(SolveError::Infeasible(format!(
                "no control is strictly viable: best worst-case margin {m_best} <= eta {}",
                cs.eta
            )));
        }
        let target = cs.eta + 0.5 * (m_best - cs.eta);
        let u = if m_center >= target {
            center
        } else {
            let theta = (target - m_center) / (m_best - m_center);
            center.iter().zip(&best).map(|(c, b)| theta * b + (1.0 - theta) * c).collect()
        };
        let lambda = (self.lambda_max / 2.0).min(1.0);
        let w0 = if self.p.p == 1.0 { lambda / 2.0 } else { 0.5 };
        let om = self.omega(w0, lambda).val;
        let s = self
            .cuts
            .iter()
            .map(|cuts| {
                cuts.iter()
                    .map(|c| self.p.utility.value(self.growth(&u, &c.a)))
                    .fold(f64::INFINITY, f64::min)
                    - om
                    - 1.0
            })
            .collect();
        let n = self.cuts.len();
        Ok(State { u, lambda, s, z: vec![vec![0.0; d]; n], w: vec![w0; n] })
    }

    /// Newton direction for `t * F - sum log g` and the squared decrement.
    fn newton(&self, x: &State, t: f64) -> Result<(Direction, f64), SolveError> {
        let d = self.d;
        let gd = d + 1;
        let kd = d + 2;
        let li = d;
        let wi = d + 1;
        let util = &self.p.utility;

        let mut hgg = DMatrix::<f64>::zeros(gd, gd);
        let mut rg = DVector::<f64>::zeros(gd);
        rg[li] += t * self.eps_p;

        let mut xs = Vec::with_capacity(self.cuts.len());
        let mut ys = Vec::with_capacity(self.cuts.len());
        let mut bs = Vec::with_capacity(self.cuts.len());
        let mut rjs = Vec::with_capacity(self.cuts.len());

        let mut gg = vec![0.0; gd];
        let mut gb = vec![0.0; kd];
        for (j, cuts) in self.cuts.iter().enumerate() {
            let mut hjj = DMatrix::<f64>::zeros(kd, kd);
            let mut bj = DMatrix::<f64>::zeros(kd, gd);
            let mut rj = DVector::<f64>::zeros(kd);
            rj[0] -= t * self.weights[j];
            let om = self.omega(x.w[j], x.lambda);

            for c in cuts {
                let phi = self.growth(&x.u, &c.a);
                let g = util.value(phi) + dot(&x.z[j], &c.diff) - om.val - x.s[j];
                let (u1, u2) = (util.derivative(phi), util.second_derivative(phi));
                for i in 0..d {
                    gg[i] = u1 * c.a[i];
                    gb[1 + i] = c.diff[i];
                }
                gg[li] = -om.l;
                gb[0] = -1.0;
                gb[wi] = -om.w;
                let inv = 1.0 / g;
                let inv2 = inv * inv;
                for r in 0..gd {
                    rg[r] -= gg[r] * inv;
                    for k in 0..gd {
                        hgg[(r, k)] += inv2 * gg[r] * gg[k];
                    }
                }
                for r in 0..kd {
                    rj[r] -= gb[r] * inv;
                    for k in 0..kd {
                        hjj[(r, k)] += inv2 * gb[r] * gb[k];
                    }
                    for k in 0..gd {
                        bj[(r, k)] += inv2 * gb[r] * gg[k];
                    }
                }
                let curv = -u2 * inv;
                if curv != 0.0 {
                    for r in 0..d {
                        for k in 0..d {
                            hgg[(r, k)] += curv * c.a[r] * c.a[k];
                        }
                    }
                }
                hjj[(wi, wi)] += om.ww * inv;
                hgg[(li, li)] += om.ll * inv;
                bj[(wi, li)] += om.wl * inv;
            }

            for i in 0..d {
                for sign in [1.0, -1.0] {
                    // w - sign * z_i
                    let inv = 1.0 / (x.w[j] - sign * x.z[j][i]);
                    let inv2 = inv * inv;
                    rj[wi] -= inv;
                    rj[1 + i] += sign * inv;
                    hjj[(wi, wi)] += inv2;
                    hjj[(1 + i, 1 + i)] += inv2;
                    hjj[(wi, 1 + i)] -= sign * inv2;
                    hjj[(1 + i, wi)] -= sign * inv2;
                }
            }
            if self.p.p == 1.0 {
                let inv = 1.0 / (x.lambda - x.w[j]);
                let inv2 = inv * inv;
                rg[li] -= inv;
                rj[wi] += inv;
                hgg[(li, li)] += inv2;
                hjj[(wi, wi)] += inv2;
                bj[(wi, li)] -= inv2;
            }

            let chol = cholesky(hjj)?;
            xs.push(chol.solve(&bj));
            ys.push(chol.solve(&rj));
            bs.push(bj);
            rjs.push(rj);
        }

        let inv = 1.0 / (self.lambda_max - x.lambda);
        rg[li] += inv;
        hgg[(li, li)] += inv * inv;
        if self.p.p > 1.0 {
            let inv = 1.0 / x.lambda;
            rg[li] -= inv;
            hgg[(li, li)] += inv * inv;
        }
        let cs = &self.p.control_set;
        for i in 0..d {
            let inv = 1.0 / (x.u[i] - cs.lower[i]);
            rg[i] -= inv;
            hgg[(i, i)] += inv * inv;
        }
        let inv = 1.0 / (cs.leverage_cap - x.u.iter().sum::<f64>());
        for r in 0..d {
            rg[r] += inv;
            for k in 0..d {
                hgg[(r, k)] += inv * inv;
            }
        }
        let inv = 1.0 / (dot(&x.u, &self.viab) + self.c0 - cs.eta);
        for r in 0..d {
            rg[r] -= self.viab[r] * inv;
            for k in 0..d {
                hgg[(r, k)] += inv * inv * self.viab[r] * self.viab[k];
            }
        }

        let mut schur = hgg;
        let mut rhs = -&rg;
        for j in 0..self.cuts.len() {
            schur -= bs[j].transpose() * &xs[j];
            rhs += bs[j].transpose() * &ys[j];
        }
        let schur = (&schur + schur.transpose()) * 0.5;
        let global = cholesky(schur)?.solve(&rhs);
        let mut decrement = -rg.dot(&global);
        let blocks: Vec<DVector<f64>> = (0..self.cuts.len())
            .map(|j| {
                let dy = -&ys[j] - &xs[j] * &global;
                decrement -= rjs[j].dot(&dy);
                dy
            })
            .collect();
        Ok((Direction { global, blocks }, decrement.max(0.0)))
    }

    fn moved(&self, x: &State, dir: &Direction, step: f64) -> State {
        let d = self.d;
        let mut y = x.clone();
        for i in 0..d {
            y.u[i] += step * dir.global[i];
        }
        y.lambda += step * dir.global[d];
        for (j, b) in dir.blocks.iter().enumerate() {
            y.s[j] += step * b[0];
            for i in 0..d {
                y.z[j][i] += step * b[1 + i];
            }
            y.w[j] += step * b[d + 1];
        }
        y
    }

    fn solve(&self) -> Result<MasterPoint, SolveError> {
        let mut x = self.start()?;
        let mut cur = Vec::new();
        if !self.values(&x, &mut cur) {
            return Err(SolveError::Numerical("starting point is not strictly feasible".into()));
        }
        let m = cur.len() as f64;
        let horizon = self.p.horizon() as f64;
        let target = 0.01 * self.p.tolerances.opt * horizon;
        let mut trial = Vec::with_capacity(cur.len());
        let mut t = 1.0;
        let mut steps = 0;
        loop {
            for _ in 0..MAX_CENTER_STEPS {
                let (dir, dec2) = self.newton(&x, t)?;
                steps += 1;
                if dec2 / 2.0 <= CENTER_TOL {
                    break;
                }
                let slope = -dec2;
                let df = dir.global[self.d] * self.eps_p
                    - dir.blocks.iter().zip(self.weights).map(|(b, w)| w * b[0]).sum::<f64>();
                let mut step = 1.0;
                let mut accepted = None;
                while step > 1e-14 {
                    let y = self.moved(&x, &dir, step);
                    if self.values(&y, &mut trial) {
                        let change = t * step * df
                            - trial.iter().zip(&cur).map(|(a, b)| (a / b).ln()).sum::<f64>();
                        if change <= ARMIJO * step * slope {
                            accepted = Some(y);
                            break;
                        }
                    }
                    step *= 0.5;
                }
                match accepted {
                    Some(y) => {
                        x = y;
                        std::mem::swap(&mut cur, &mut trial);
                    }
                    None => break,
                }
            }
            if m / t <= target {
                break;
            }
            t *= MU;
        }
        Ok(MasterPoint {
            value: -self.objective(&x) / horizon,
            gap: m / t / horizon,
            u: x.u,
            lambda: x.lambda,
            s: x.s,
            z: x.z,
            newton_steps: steps,
            lambda_max: self.lambda_max,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cholesky(mut m: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>, SolveError> {
    let scale = (0..m.nrows()).map(|i| m[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut shift = 0.0;
    for _ in 0..12 {
        if let Some(c) = m.clone().cholesky() {
            return Ok(c);
        }
        let next = if shift == 0.0 { scale * 1e-14 } else { shift * 100.0 };
        for i in 0..m.nrows() {
            m[(i, i)] += next - shift;
        }
        shift = next;
    }
    Err(SolveError::Numerical("Newton system is not positive definite".into()))
}

/// Upper bound on `lambda` keeping the master bounded while few vertices
/// are active. It sits far above the multiplier of any optimal solution.
fn lambda_bound(p: &RelaxationProblem) -> f64 {
    let d = p.dim() as f64;
    let cap = p.control_set.leverage_cap.max(1e-6);
    let lip = match p.utility {
        Utility::Log => cap / p.control_set.eta,
        Utility::Affine { slope, .. } => slope.max(1e-3) * cap,
    };
    let zmax = 100.0 * (d + 1.0) * lip.max(1e-3);
    if p.p == 1.0 {
        zmax + 1.0
    } else {
        let floor = (1e-3 * p.support.diameter()).max(1e-9);
        let eps = p.epsilon.max(floor);
        zmax * (2.0 / (p.p * eps.powf(p.p - 1.0))).max(1.0) + 1.0
    }
}
