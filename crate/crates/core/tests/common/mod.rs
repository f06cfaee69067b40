//! Instance generators and independent reference solvers shared by the
//! integration tests.
#![allow(dead_code)]

use mdro::dro::{RelaxationProblem, Tolerances};
use mdro::model::{AffineGrowthModel, BoxSupport, ControlSet, Utility};
use mdro::transport::EmpiricalDistribution;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random long-only instance with samples strictly inside a box.
pub fn random_problem(seed: u64, d: usize, samples: usize, utility: Utility, epsilon: f64) -> RelaxationProblem {
    let mut r = rng(seed);
    let lo: Vec<f64> = (0..d).map(|_| -r.random_range(0.05..0.3)).collect();
    let hi: Vec<f64> = (0..d).map(|_| r.random_range(0.05..0.3)).collect();
    let xs: Vec<Vec<f64>> = (0..samples)
        .map(|_| (0..d).map(|i| lo[i] + (hi[i] - lo[i]) * r.random_range(0.02..0.98)).collect())
        .collect();
    let friction: Vec<f64> = (0..d).map(|_| r.random_range(0.0..0.004)).collect();
    let rf = r.random_range(0.0..0.01);
    let period = r.random_range(1..=5);
    let cap = r.random_range(0.5..1.5);
    let eta = r.random_range(0.5..0.9);
    RelaxationProblem {
        model: AffineGrowthModel::new(friction, rf, period).unwrap(),
        utility,
        support: BoxSupport::new(lo, hi).unwrap(),
        empirical: EmpiricalDistribution::uniform(xs).unwrap(),
        epsilon,
        p: 1.0,
        control_set: ControlSet::long_only(d, cap, eta),
        tolerances: Tolerances::default(),
    }
}

/// Linear constraints `A u <= b` of the viable long-only polytope.
fn polytope(p: &RelaxationProblem) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = p.dim();
    let cs = &p.control_set;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for i in 0..d {
        let mut row = vec![0.0; d];
        row[i] = -1.0;
        a.push(row);
        b.push(-cs.lower[i]);
    }
    a.push(vec![1.0; d]);
    b.push(cs.leverage_cap);
    let c0 = 1.0 + p.model.riskfree();
    a.push(p.support.lo().iter().zip(p.model.friction()).map(|(l, k)| k - l).collect());
    b.push(c0 - cs.eta);
    (a, b)
}

/// `max_u (1/n) mean_j U(Phi_n(u, xhat_j))` over the viable set, by
/// enumerating active constraint subsets and running Newton's method on
/// each face.
pub fn saa_optimum(p: &RelaxationProblem) -> (Vec<f64>, f64) {
    let d = p.dim();
    let (a, b) = polytope(p);
    let m = a.len();
    let c0 = 1.0 + p.model.riskfree();
    let rows: Vec<Vec<f64>> = p
        .empirical
        .samples()
        .iter()
        .map(|x| x.iter().zip(p.model.friction()).map(|(xi, k)| xi - k).collect())
        .collect();
    let w = p.empirical.weights();
    let eval = |u: &DVector<f64>| -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let mut f = 0.0;
        let mut g = DVector::zeros(d);
        let mut h = DMatrix::zeros(d, d);
        for (row, wj) in rows.iter().zip(w) {
            let r = DVector::from_column_slice(row);
            let phi = c0 + r.dot(u);
            if phi <= 0.0 {
                return None;
            }
            f += wj * p.utility.value(phi);
            g += &r * (wj * p.utility.derivative(phi));
            h += &r * r.transpose() * (wj * p.utility.second_derivative(phi));
        }
        Some((f, g, h))
    };
    let feasible = |u: &DVector<f64>| (0..m).all(|k| dot(&a[k], u.as_slice()) <= b[k] + 1e-10);

    let mut best = (vec![0.0; d], f64::NEG_INFINITY);
    for subset in 0..(1usize << m) {
        let idx: Vec<usize> = (0..m).filter(|k| subset >> k & 1 == 1).collect();
        if idx.len() > d {
            continue;
        }
        let (u0, basis) = if idx.is_empty() {
            (DVector::zeros(d), DMatrix::identity(d, d))
        } else {
            let am = DMatrix::from_fn(idx.len(), d, |r, c| a[idx[r]][c]);
            let bm = DVector::from_fn(idx.len(), |r, _| b[idx[r]]);
            let svd = am.clone().svd(true, true);
            if svd.singular_values.iter().any(|s| *s < 1e-12) {
                continue;
            }
            let u0 = svd.solve(&bm, 1e-14).unwrap();
            let vt = am.svd(false, true).v_t.unwrap();
            let full = vt.transpose();
            // complete the row space to an orthonormal basis of R^d
            let q = DMatrix::<f64>::identity(d, d) - &full * full.transpose();
            let qsvd = q.svd(true, false);
            let cols: Vec<DVector<f64>> = (0..d)
                .filter(|&k| qsvd.singular_values[k] > 0.5)
                .map(|k| qsvd.u.as_ref().unwrap().column(k).into_owned())
                .collect();
            let basis = if cols.is_empty() { DMatrix::zeros(d, 0) } else { DMatrix::from_columns(&cols) };
            (u0, basis)
        };
        let k = basis.ncols();
        let mut y = DVector::zeros(k);
        let point = |y: &DVector<f64>| &u0 + &basis * y;
        let Some(mut cur) = eval(&point(&y)) else { continue };
        let mut ok = true;
        for _ in 0..200 {
            if k == 0 {
                break;
            }
            let g = basis.transpose() * &cur.1;
            if g.norm() < 1e-13 {
                break;
            }
            let h = basis.transpose() * &cur.2 * &basis;
            let Some(step) = (-h).cholesky().map(|c| c.solve(&g)) else {
                ok = false;
                break;
            };
            let mut t = 1.0;
            loop {
                let cand = &y + &step * t;
                if let Some(next) = eval(&point(&cand)) {
                    if next.0 >= cur.0 + 1e-4 * t * g.dot(&step) || t < 1e-12 {
                        y = cand;
                        cur = next;
                        break;
                    }
                }
                t *= 0.5;
                if t < 1e-14 {
                    break;
                }
            }
            if point(&y).norm() > 1e4 {
                ok = false;
                break;
            }
        }
        let u = point(&y);
        if ok && feasible(&u) && cur.0 > best.1 {
            best = (u.as_slice().to_vec(), cur.0);
        }
    }
    (best.0, best.1 / p.horizon() as f64)
}

/// Exact worst-case rate `max_u inf_{Q in ball} E_Q[U(Phi_n)] / n` for
/// affine utility, `p = 1` and long-only controls.
pub fn affine_worst_case_optimum(p: &RelaxationProblem) -> f64 {
    let Utility::Affine { slope, intercept } = p.utility else { panic!("affine utility expected") };
    let d = p.dim();
    let lo = p.support.lo();
    let w = p.empirical.weights();
    let mean: Vec<f64> = (0..d)
        .map(|i| p.empirical.samples().iter().zip(w).map(|(x, wj)| wj * x[i]).sum())
        .collect();
    let room: Vec<f64> = (0..d).map(|i| mean[i] - lo[i]).collect();
    // vertices of {0 <= T <= room, sum T <= eps}
    let mut verts = Vec::new();
    for code in 0..3usize.pow(d as u32) {
        let mut t = vec![0.0; d];
        let mut free = None;
        let mut c = code;
        let mut valid = true;
        for i in 0..d {
            match c % 3 {
                0 => {}
                1 => t[i] = room[i],
                _ => {
                    if free.is_some() {
                        valid = false;
                    }
                    free = Some(i);
                }
            }
            c /= 3;
        }
        if !valid {
            continue;
        }
        let used: f64 = t.iter().sum();
        if let Some(i) = free {
            let v = p.epsilon - used;
            if v <= 0.0 || v >= room[i] {
                continue;
            }
            t[i] = v;
        } else if used > p.epsilon + 1e-15 {
            continue;
        }
        verts.push(t);
    }
    // LP in (u, t): maximize t
    let c0 = 1.0 + p.model.riskfree();
    let kappa = p.model.friction();
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for t in &verts {
        // t_var - slope * u.(mean - kappa - T) <= slope * c0 + intercept
        let mut row: Vec<f64> = (0..d).map(|i| -slope * (mean[i] - kappa[i] - t[i])).collect();
        row.push(1.0);
        rows.push((row, slope * c0 + intercept));
    }
    let (a, b) = polytope(p);
    for (ra, rb) in a.into_iter().zip(b) {
        let mut row = ra;
        row.push(0.0);
        rows.push((row, rb));
    }
    let dim = d + 1;
    let m = rows.len();
    let mut best = f64::NEG_INFINITY;
    let mut pick = vec![0usize; dim];
    fn next(pick: &mut [usize], m: usize, first: bool) -> bool {
        let k = pick.len();
        if first {
            for (i, v) in pick.iter_mut().enumerate() {
                *v = i;
            }
            return k <= m;
        }
        let mut i = k;
        while i > 0 {
            i -= 1;
            if pick[i] < m - k + i {
                pick[i] += 1;
                for j in i + 1..k {
                    pick[j] = pick[j - 1] + 1;
                }
                return true;
            }
        }
        false
    }
    let mut first = true;
    while next(&mut pick, m, first) {
        first = false;
        let am = DMatrix::from_fn(dim, dim, |r, c| rows[pick[r]].0[c]);
        let bm = DVector::from_fn(dim, |r, _| rows[pick[r]].1);
        let Some(x) = am.lu().solve(&bm) else { continue };
        if rows.iter().all(|(r, rb)| dot(r, x.as_slice()) <= rb + 1e-10) {
            best = best.max(x[d]);
        }
    }
    best / p.horizon() as f64
}

/// Transport cost by enumerating basic feasible solutions of the
/// transportation polytope.
pub fn transport_by_enumeration(a: &EmpiricalDistribution, b: &EmpiricalDistribution, p: f64) -> f64 {
    let (na, nb) = (a.len(), b.len());
    let cells = na * nb;
    let basis = na + nb - 1;
    let cost: Vec<f64> = (0..cells)
        .map(|c| {
            let d: f64 = a.samples()[c / nb].iter().zip(&b.samples()[c % nb]).map(|(x, y)| (x - y).abs()).sum();
            d.powf(p)
        })
        .collect();
    let rhs = DVector::from_iterator(na + nb, a.weights().iter().chain(b.weights()).copied());
    let mut best = f64::INFINITY;
    for mask in 0..(1usize << cells) {
        if mask.count_ones() as usize != basis {
            continue;
        }
        let chosen: Vec<usize> = (0..cells).filter(|c| mask >> c & 1 == 1).collect();
        let m = DMatrix::from_fn(na + nb, basis, |r, k| {
            let c = chosen[k];
            let hit = if r < na { c / nb == r } else { c % nb == r - na };
            if hit { 1.0 } else { 0.0 }
        });
        let svd = m.clone().svd(true, true);
        if svd.singular_values.iter().any(|s| *s < 1e-10) {
            continue;
        }
        let x = svd.solve(&rhs, 1e-12).unwrap();
        if (&m * &x - &rhs).norm() > 1e-10 || x.iter().any(|v| *v < -1e-12) {
            continue;
        }
        best = best.min(chosen.iter().zip(x.iter()).map(|(c, v)| cost[*c] * v.max(0.0)).sum());
    }
    if p == 1.0 { best } else { best.powf(1.0 / p) }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Seeded geometric-random-walk panel with persistent positive drift.
pub fn synthetic_panel(seed: u64, rows: usize, d: usize) -> mdro::data::PricePanel {
    let drift: Vec<f64> = (0..d).map(|i| 0.0004 + 0.0002 * i as f64).collect();
    let vol: Vec<f64> = (0..d).map(|i| 0.008 + 0.004 * i as f64).collect();
    synthetic_panel_with(seed, rows, &drift, &vol)
}

/// Geometric random walk with per-asset daily log drift and volatility.
pub fn synthetic_panel_with(seed: u64, rows: usize, drift: &[f64], vol: &[f64]) -> mdro::data::PricePanel {
    let d = drift.len();
    let mut r = rng(seed);
    let start = chrono::NaiveDate::from_ymd_opt(2021, 1, 4).unwrap();
    let mut prices = vec![vec![100.0; d]];
    for _ in 1..rows {
        let last = prices.last().unwrap();
        let next = (0..d)
            .map(|i| {
                let (a, b): (f64, f64) = (r.random(), r.random());
                let z = (-2.0 * (1.0 - a).ln()).sqrt() * (std::f64::consts::TAU * b).cos();
                last[i] * (drift[i] + vol[i] * z.clamp(-3.0, 3.0)).exp()
            })
            .collect();
        prices.push(next);
    }
    let dates = (0..rows).map(|k| start + chrono::Days::new(k as u64)).collect();
    let tickers = (0..d).map(|i| format!("S{i}")).collect();
    mdro::data::PricePanel::new(dates, tickers, prices, vec![0.02; rows]).unwrap()
}
