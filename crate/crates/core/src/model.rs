//! Multiplicative growth model, utilities, control sets and the box support
//! geometry of the aggregated disturbance.
//!
//! The inter-sample growth factor is affine in the disturbance:
//!
//! ```text
//! Phi_n(u, x) = u'x + (1 + r_fn) - sum_i kappa_i |u_i|
//! ```
//!
//! where `x` is the vector of n-period excess returns. A control is viable
//! for margin `eta` when `Phi_n(u, x) >= eta` for every `x` in the support.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid support: lo[{index}] = {lo} exceeds hi[{index}] = {hi}")]
    InvalidSupport { index: usize, lo: f64, hi: f64 },
    #[error("friction kappa[{index}] = {value} is outside [0, 1)")]
    InvalidFriction { index: usize, value: f64 },
    #[error("sampling period must be at least 1")]
    InvalidPeriod,
    #[error("control set: {0}")]
    InvalidControlSet(String),
    #[error("invalid utility: {0}")]
    InvalidUtility(String),
    #[error("non-viable control: worst-case growth factor {margin} is not positive")]
    NonViable { margin: f64 },
}

fn check_dim(expected: usize, actual: usize) -> Result<(), ModelError> {
    if expected == actual {
        Ok(())
    } else {
        Err(ModelError::DimensionMismatch { expected, actual })
    }
}

/// Axis-aligned box `[lo, hi]` holding the aggregated disturbance.
///
/// Vertices are indexed by bit masks: bit `i` set selects `hi[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxSupportRepr", into = "BoxSupportRepr")]
pub struct BoxSupport {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BoxSupportRepr {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl TryFrom<BoxSupportRepr> for BoxSupport {
    type Error = ModelError;
    fn try_from(r: BoxSupportRepr) -> Result<Self, ModelError> {
        BoxSupport::new(r.lo, r.hi)
    }
}

impl From<BoxSupport> for BoxSupportRepr {
    fn from(b: BoxSupport) -> Self {
        BoxSupportRepr { lo: b.lo, hi: b.hi }
    }
}

impl BoxSupport {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, ModelError> {
        check_dim(lo.len(), hi.len())?;
        for (i, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l <= h) {
                return Err(ModelError::InvalidSupport { index: i, lo: l, hi: h });
            }
        }
        Ok(Self { lo, hi })
    }

    /// Smallest box containing every point, widened by `inflation` times the
    /// per-coordinate range on each side of the midpoint.
    pub fn fitted<'a, I>(points: I, inflation: f64) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut iter = points.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| ModelError::InvalidControlSet("no points to fit a support".into()))?;
        let mut lo = first.to_vec();
        let mut hi = first.to_vec();
        for p in iter {
            check_dim(lo.len(), p.len())?;
            for i in 0..p.len() {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        if inflation > 0.0 {
            for i in 0..lo.len() {
                let mid = 0.5 * (lo[i] + hi[i]);
                let half = 0.5 * (hi[i] - lo[i]) * (1.0 + inflation);
                lo[i] = lo[i].min(mid - half);
                hi[i] = hi[i].max(mid + half);
            }
        }
        Self::new(lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    /// Number of extreme points, `2^d`.
    pub fn vertex_count(&self) -> usize {
        1usize << self.dim()
    }

    pub fn vertex(&self, mask: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.write_vertex(mask, &mut v);
        v
    }

    pub fn write_vertex(&self, mask: usize, out: &mut [f64]) {
        for i in 0..self.dim() {
            out[i] = if mask >> i & 1 == 1 { self.hi[i] } else { self.lo[i] };
        }
    }

    /// Bit mask of the vertex at which the linear form `c'x` is smallest.
    pub fn minimizing_vertex(&self, c: &[f64]) -> usize {
        c.iter()
            .enumerate()
            .filter(|(_, &ci)| ci < 0.0)
            .fold(0, |mask, (i, _)| mask | 1 << i)
    }

    /// Diameter under the l1 ground norm.
    pub fn diameter(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).sum()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&xi, (&l, &h))| xi >= l - tol && xi <= h + tol)
    }
}

/// Diameter of the support under the l1 ground norm.
pub fn diameter(support: &BoxSupport) -> f64 {
    support.diameter()
}

/// Affine growth factor with proportional friction on gross weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct AffineGrowthModel {
    friction: Vec<f64>,
    riskfree: f64,
    period: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelRepr {
    friction: Vec<f64>,
    riskfree: f64,
    period: usize,
}

impl TryFrom<ModelRepr> for AffineGrowthModel {
    type Error = ModelError;
    fn try_from(r: ModelRepr) -> Result<Self, ModelError> {
        AffineGrowthModel::new(r.friction, r.riskfree, r.period)
    }
}

impl From<AffineGrowthModel> for ModelRepr {
    fn from(m: AffineGrowthModel) -> Self {
        ModelRepr { friction: m.friction, riskfree: m.riskfree, period: m.period }
    }
}

impl AffineGrowthModel {
    pub fn new(friction: Vec<f64>, riskfree: f64, period: usize) -> Result<Self, ModelError> {
        for (i, &k) in friction.iter().enumerate() {
            if !(0.0..1.0).contains(&k) {
                return Err(ModelError::InvalidFriction { index: i, value: k });
            }
        }
        if period == 0 {
            return Err(ModelError::InvalidPeriod);
        }
        Ok(Self { friction, riskfree, period })
    }

    /// Frictionless model with `d` assets.
    pub fn frictionless(d: usize, riskfree: f64, period: usize) -> Result<Self, ModelError> {
        Self::new(vec![0.0; d], riskfree, period)
    }

    pub fn dim(&self) -> usize {
        self.friction.len()
    }

    pub fn friction(&self) -> &[f64] {
        &self.friction
    }

    /// The n-period risk-free return `r_fn`.
    pub fn riskfree(&self) -> f64 {
        self.riskfree
    }

    pub fn period(&self) -> usize {
        self.period
    }

    /// Risk-free growth net of transaction costs, `c_n(u)`.
    pub fn drift(&self, u: &[f64]) -> f64 {
        1.0 + self.riskfree
            - u.iter().zip(&self.friction).map(|(ui, k)| k * ui.abs()).sum::<f64>()
    }

    /// `Phi_n(u, x)`. Not clamped: non-viable controls may produce values <= 0.
    pub fn growth_factor(&self, u: &[f64], x: &[f64]) -> Result<f64, ModelError> {
        check_dim(self.dim(), u.len())?;
        check_dim(self.dim(), x.len())?;
        Ok(self.growth_factor_unchecked(u, x))
    }

    pub(crate) fn growth_factor_unchecked(&self, u: &[f64], x: &[f64]) -> f64 {
        u.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.drift(u)
    }

    /// Minimum of `Phi_n(u, .)` over the support, attained at the
    /// sign-selected vertex.
    pub fn worst_margin(&self, u: &[f64], support: &BoxSupport) -> f64 {
        let linear: f64 = u
            .iter()
            .zip(support.lo().iter().zip(support.hi()))
            .map(|(&ui, (&l, &h))| if ui >= 0.0 { ui * l } else { ui * h })
            .sum();
        linear + self.drift(u)
    }
}

/// Concave, nondecreasing utility of the growth factor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Utility {
    #[default]
    Log,
    Affine { slope: f64, intercept: f64 },
}

impl Utility {
    pub fn validate(&self) -> Result<(), ModelError> {
        match *self {
            Utility::Log => Ok(()),
            Utility::Affine { slope, intercept } => {
                if slope >= 0.0 && slope.is_finite() && intercept.is_finite() {
                    Ok(())
                } else {
                    Err(ModelError::InvalidUtility(format!(
                        "affine utility needs a finite slope >= 0, got {slope}"
                    )))
                }
            }
        }
    }

    /// Lower end of the domain: utilities are only evaluated above it.
    pub fn domain_lower_bound(&self) -> f64 {
        match self {
            Utility::Log => 0.0,
            Utility::Affine { .. } => f64::NEG_INFINITY,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Utility::Log if t > 0.0 => t.ln(),
            Utility::Log => f64::NEG_INFINITY,
            Utility::Affine { slope, intercept } => slope * t + intercept,
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            Utility::Log => 1.0 / t,
            Utility::Affine { slope, .. } => slope,
        }
    }

    pub fn second_derivative(&self, t: f64) -> f64 {
        match *self {
            Utility::Log => -1.0 / (t * t),
            Utility::Affine { .. } => 0.0,
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, Utility::Affine { .. })
    }
}

/// Long-only polytope `{u : lower <= u, sum(u) <= leverage_cap}` plus the
/// viability margin `eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSet {
    pub lower: Vec<f64>,
    pub leverage_cap: f64,
    pub eta: f64,
}

impl ControlSet {
    pub fn long_only(d: usize, leverage_cap: f64, eta: f64) -> Self {
        Self { lower: vec![0.0; d], leverage_cap, eta }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(ModelError::InvalidControlSet(format!(
                "viability margin eta must be positive, got {}",
                self.eta
            )));
        }
        if self.lower.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(ModelError::InvalidControlSet(
                "lower bounds must be finite and nonnegative (long-only)".into(),
            ));
        }
        let floor: f64 = self.lower.iter().sum();
        if !(self.leverage_cap.is_finite() && floor <= self.leverage_cap) {
            return Err(ModelError::InvalidControlSet(format!(
                "empty control set: sum of lower bounds {floor} exceeds leverage cap {}",
                self.leverage_cap
            )));
        }
        Ok(())
    }

    /// Membership in the polytope, ignoring viability.
    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        u.len() == self.dim()
            && u.iter().zip(&self.lower).all(|(ui, l)| *ui >= l - tol)
            && u.iter().sum::<f64>() <= self.leverage_cap + tol
    }

    /// Polytope membership plus `worst_margin(u) >= eta`.
    pub fn is_viable(&self, model: &AffineGrowthModel, u: &[f64], support: &BoxSupport) -> bool {
        self.contains(u, 0.0) && is_viable(model, u, support, self.eta)
    }
}

/// `worst_margin(u) >= eta`; the inequality is inclusive.
pub fn is_viable(model: &AffineGrowthModel, u: &[f64], support: &BoxSupport, eta: f64) -> bool {
    u.len() == model.dim() && model.worst_margin(u, support) >= eta
}

/// Lipschitz constant of `x -> grad_x U(Phi_n(u, x))` under the l1 ground
/// norm: `||u||_inf^2 / worst_margin(u)^2` for log utility, zero for affine.
pub fn smoothness_constant(
    model: &AffineGrowthModel,
    utility: &Utility,
    u: &[f64],
    support: &BoxSupport,
) -> Result<f64, ModelError> {
    match utility {
        Utility::Affine { .. } => Ok(0.0),
        Utility::Log => {
            let sup = u.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if sup == 0.0 {
                return Ok(0.0);
            }
            let margin = model.worst_margin(u, support);
            if margin <= 0.0 {
                return Err(ModelError::NonViable { margin });
            }
            Ok(sup * sup / (margin * margin))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sym_box() -> BoxSupport {
        BoxSupport::new(vec![-0.1, -0.2], vec![0.1, 0.2]).unwrap()
    }

    #[test]
    fn growth_factor_examples() {
        let m = AffineGrowthModel::new(vec![0.001, 0.001], 0.01, 5).unwrap();
        assert_abs_diff_eq!(m.growth_factor(&[0.0, 0.0], &[0.3, -0.7]).unwrap(), 1.01);
        assert_abs_diff_eq!(
            m.growth_factor(&[1.0, 0.0], &[0.05, 0.0]).unwrap(),
            1.059,
            epsilon = 1e-15
        );
        let m0 = AffineGrowthModel::new(vec![0.001, 0.001], 0.0, 5).unwrap();
        assert_abs_diff_eq!(
            m0.growth_factor(&[0.5, 0.5], &[0.02, -0.04]).unwrap(),
            0.989,
            epsilon = 1e-15
        );
    }

    #[test]
    fn growth_factor_rejects_bad_dims() {
        let m = AffineGrowthModel::frictionless(2, 0.0, 1).unwrap();
        assert!(matches!(
            m.growth_factor(&[1.0], &[0.0, 0.0]),
            Err(ModelError::DimensionMismatch { expected: 2, actual: 1 })
        ));
    }

    #[test]
    fn growth_factor_is_not_clamped() {
        let m = AffineGrowthModel::frictionless(1, 0.0, 1).unwrap();
        assert!(m.growth_factor(&[2.0], &[-0.9]).unwrap() < 0.0);
    }

    #[test]
    fn worst_margin_examples() {
        let m = AffineGrowthModel::frictionless(2, 0.0, 1).unwrap();
        let s = sym_box();
        assert_abs_diff_eq!(m.worst_margin(&[1.0, 0.0], &s), 0.9, epsilon = 1e-15);
        let brute = (0..4)
            .map(|k| m.growth_factor(&[1.0, 0.0], &s.vertex(k)).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(brute, 0.9, epsilon = 1e-15);
        let s2 = BoxSupport::new(vec![-0.1, -0.1], vec![0.1, 0.1]).unwrap();
        assert_abs_diff_eq!(m.worst_margin(&[0.3, 0.2], &s2), 0.95, epsilon = 1e-15);
        let mr = AffineGrowthModel::frictionless(2, 0.02, 1).unwrap();
        assert_abs_diff_eq!(mr.worst_margin(&[0.0, 0.0], &s), 1.02);
    }

    #[test]
    fn viability_boundary_is_inclusive() {
        let m = AffineGrowthModel::frictionless(2, 0.0, 1).unwrap();
        let s = sym_box();
        assert!(is_viable(&m, &[0.0, 0.0], &s, 0.9));
        assert!(!is_viable(&m, &[1.0, 0.0], &s, 0.95));
        assert!(is_viable(&m, &[1.0, 0.0], &s, 0.9));
        let cs = ControlSet::long_only(2, 1.0, 0.9);
        assert!(cs.is_viable(&m, &[1.0, 0.0], &s));
        assert!(!cs.is_viable(&m, &[0.6, 0.6], &s));
    }

    #[test]
    fn smoothness_examples() {
        let m = AffineGrowthModel::frictionless(1, 0.0, 1).unwrap();
        let aff = Utility::Affine { slope: 2.0, intercept: 1.0 };
        let s = BoxSupport::new(vec![-0.5], vec![0.5]).unwrap();
        assert_eq!(smoothness_constant(&m, &aff, &[1.0], &s).unwrap(), 0.0);
        // ||u||_inf = 1 and worst margin 0.5
        assert_abs_diff_eq!(smoothness_constant(&m, &Utility::Log, &[1.0], &s).unwrap(), 4.0);
        assert_eq!(smoothness_constant(&m, &Utility::Log, &[0.0], &s).unwrap(), 0.0);
        let wide = BoxSupport::new(vec![-1.5], vec![0.5]).unwrap();
        assert!(matches!(
            smoothness_constant(&m, &Utility::Log, &[1.0], &wide),
            Err(ModelError::NonViable { .. })
        ));
    }

    #[test]
    fn diameter_examples() {
        let s = BoxSupport::new(vec![0.3, 0.3], vec![0.3, 0.3]).unwrap();
        assert_eq!(diameter(&s), 0.0);
        let s = BoxSupport::new(vec![-0.1, -0.1], vec![0.1, 0.1]).unwrap();
        assert_abs_diff_eq!(diameter(&s), 0.4, epsilon = 1e-15);
        let s = BoxSupport::new(vec![-1.0], vec![1.0]).unwrap();
        assert_eq!(diameter(&s), 2.0);
    }

    #[test]
    fn support_rejects_inverted_bounds() {
        assert!(matches!(
            BoxSupport::new(vec![0.0, 1.0], vec![1.0, 0.5]),
            Err(ModelError::InvalidSupport { index: 1, .. })
        ));
    }

    #[test]
    fn fitted_support_contains_points() {
        let pts = [vec![0.1, -0.2], vec![-0.3, 0.4], vec![0.0, 0.0]];
        let s = BoxSupport::fitted(pts.iter().map(|p| p.as_slice()), 0.0).unwrap();
        assert_eq!(s.lo(), &[-0.3, -0.2]);
        assert_eq!(s.hi(), &[0.1, 0.4]);
        let inflated = BoxSupport::fitted(pts.iter().map(|p| p.as_slice()), 0.5).unwrap();
        assert_abs_diff_eq!(inflated.diameter(), 1.5 * s.diameter(), epsilon = 1e-12);
    }

    #[test]
    fn minimizing_vertex_selects_signs() {
        let s = sym_box();
        assert_eq!(s.minimizing_vertex(&[1.0, -1.0]), 0b10);
        assert_eq!(s.vertex(0b10), vec![-0.1, 0.2]);
    }
}
