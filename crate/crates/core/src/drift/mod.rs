//! Nonlinear drifts `F: X → H_α` with their declared Lipschitz data.

mod grid;
mod spectral;

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{ensure_dim, Error, Result};
use crate::quadrature::adaptive_simpson;
use crate::scalar::Real;
use crate::spectral::SpectrumQ;
use crate::vector::HVector;

pub use grid::{
    CompositionLeftDrift, CompositionRightDrift, FiniteRankDrift, FnProfile, ProfileBounds, RankProfile, XiTanhProfile,
};
pub use spectral::{
    CahnHilliardDrift, FnPotential, GradientDrift, LogCoshPotential, Potential, ProjectionDrift, QuadraticPotential,
};

/// Shared, thread-safe handle to a drift.
pub type DriftSpec<S> = Arc<dyn Drift<S>>;

/// Which branch of a branching drift a state falls in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Membership {
    InHAlpha,
    NotInHAlpha,
}

pub type MembershipOracle = Arc<dyn Fn(&[f64]) -> Membership + Send + Sync>;

/// How a branching drift decides `x ∈ H_α` at finite truncation.
#[derive(Clone)]
pub enum MembershipPolicy {
    /// `x ∉ H_α` when `‖x‖_α` over all `N` modes exceeds `ratio` times the
    /// same norm over the first `N/2` modes.
    Heuristic {
        ratio: f64,
    },
    Fixed(Membership),
    /// Caller-supplied oracle on the coefficient vector.
    Custom(MembershipOracle),
}

impl Default for MembershipPolicy {
    fn default() -> Self {
        MembershipPolicy::Heuristic { ratio: 2.0 }
    }
}

impl fmt::Debug for MembershipPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MembershipPolicy::Heuristic { ratio } => write!(f, "Heuristic {{ ratio: {ratio} }}"),
            MembershipPolicy::Fixed(m) => write!(f, "Fixed({m:?})"),
            MembershipPolicy::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl MembershipPolicy {
    pub fn decide<S: Real>(&self, spectrum: &SpectrumQ<S>, x: &HVector<S>) -> Result<Membership> {
        match self {
            MembershipPolicy::Fixed(m) => Ok(*m),
            MembershipPolicy::Custom(f) => Ok(f(&x.to_f64())),
            MembershipPolicy::Heuristic { ratio } => {
                spectrum.check_dim(x)?;
                let n = x.dim();
                if n < 2 {
                    return Err(Error::MembershipUndecided("the norm-ratio heuristic needs at least 2 modes".into()));
                }
                let w = spectrum.h_alpha_weights();
                let sq =
                    |range: std::ops::Range<usize>| -> f64 { range.map(|k| (w[k] * x[k] * x[k]).to_f64_lossy()).sum() };
                let half = sq(0..n / 2);
                let full = half + sq(n / 2..n);
                if full == 0.0 {
                    return Ok(Membership::InHAlpha);
                }
                if half == 0.0 || (full / half).sqrt() > *ratio {
                    Ok(Membership::NotInHAlpha)
                } else {
                    Ok(Membership::InHAlpha)
                }
            }
        }
    }

    pub fn is_heuristic(&self) -> bool {
        matches!(self, MembershipPolicy::Heuristic { .. })
    }
}

/// Whether the declared `H_α`-Lipschitz constant depends on the base point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum LipschitzKind {
    Global,
    PointDependent,
}

/// A drift `F` on the truncated space.
///
/// Implementations must be reentrant: trajectories evaluate the same drift
/// concurrently.
pub trait Drift<S: Real>: Send + Sync {
    fn label(&self) -> &str;

    fn dim(&self) -> usize;

    /// `F(x)`, with any branch already resolved.
    fn evaluate(&self, x: &HVector<S>) -> Result<HVector<S>>;

    fn has_differential(&self) -> bool {
        false
    }

    /// Gateaux derivative `DF(x) h`.
    fn differential(&self, _x: &HVector<S>, _h: &HVector<S>) -> Result<HVector<S>> {
        Err(Error::MissingDifferential(self.label().to_string()))
    }

    /// `L_{F,α}` at `x`; equal for every `x` when [`Drift::lipschitz_kind`] is global.
    fn lip_alpha(&self, x: &HVector<S>) -> S;

    fn lipschitz_kind(&self) -> LipschitzKind {
        LipschitzKind::Global
    }

    /// Branch of `x`; non-branching drifts report `InHAlpha`.
    fn membership(&self, _x: &HVector<S>) -> Result<Membership> {
        Ok(Membership::InHAlpha)
    }

    fn is_branching(&self) -> bool {
        false
    }

    /// `K_{F,α}` with `‖Q^{-α}(F(x) - F(y))‖ ≤ K ‖x - y‖`, when declared.
    fn q_inv_alpha_lipschitz(&self) -> Option<S> {
        None
    }

    /// Lipschitz constant of `F` on `X`, when declared.
    fn x_lipschitz(&self) -> Option<S> {
        None
    }
}

/// `F ≡ 0`.
#[derive(Clone, Debug)]
pub struct ZeroDrift {
    dim: usize,
}

impl ZeroDrift {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl<S: Real> Drift<S> for ZeroDrift {
    fn label(&self) -> &str {
        "zero"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn evaluate(&self, x: &HVector<S>) -> Result<HVector<S>> {
        ensure_dim(self.dim, x.dim())?;
        Ok(HVector::zeros(self.dim))
    }
    fn has_differential(&self) -> bool {
        true
    }
    fn differential(&self, x: &HVector<S>, h: &HVector<S>) -> Result<HVector<S>> {
        ensure_dim(self.dim, x.dim())?;
        ensure_dim(self.dim, h.dim())?;
        Ok(HVector::zeros(self.dim))
    }
    fn lip_alpha(&self, _x: &HVector<S>) -> S {
        S::zero()
    }
    fn q_inv_alpha_lipschitz(&self) -> Option<S> {
        Some(S::zero())
    }
    fn x_lipschitz(&self) -> Option<S> {
        Some(S::zero())
    }
}

type VecFn<S> = Arc<dyn Fn(&HVector<S>) -> HVector<S> + Send + Sync>;
type DiffFn<S> = Arc<dyn Fn(&HVector<S>, &HVector<S>) -> HVector<S> + Send + Sync>;

/// Drift from closures, with caller-declared constants.
#[derive(Clone)]
pub struct FnDrift<S> {
    label: String,
    dim: usize,
    f: VecFn<S>,
    df: Option<DiffFn<S>>,
    lip_alpha: S,
    q_inv_lip: Option<S>,
    x_lip: Option<S>,
}

impl<S: Real> FnDrift<S> {
    pub fn new(
        label: impl Into<String>,
        dim: usize,
        lip_alpha: S,
        f: impl Fn(&HVector<S>) -> HVector<S> + Send + Sync + 'static,
    ) -> Self {
        Self { label: label.into(), dim, f: Arc::new(f), df: None, lip_alpha, q_inv_lip: None, x_lip: None }
    }

    pub fn with_differential(
        mut self,
        df: impl Fn(&HVector<S>, &HVector<S>) -> HVector<S> + Send + Sync + 'static,
    ) -> Self {
        self.df = Some(Arc::new(df));
        self
    }

    pub fn with_q_inv_alpha_lipschitz(mut self, k: S) -> Self {
        self.q_inv_lip = Some(k);
        self
    }

    pub fn with_x_lipschitz(mut self, l: S) -> Self {
        self.x_lip = Some(l);
        self
    }
}

impl<S: Real> Drift<S> for FnDrift<S> {
    fn label(&self) -> &str {
        &self.label
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn evaluate(&self, x: &HVector<S>) -> Result<HVector<S>> {
        ensure_dim(self.dim, x.dim())?;
        let y = (self.f)(x);
        ensure_dim(self.dim, y.dim())?;
        Ok(y)
    }
    fn has_differential(&self) -> bool {
        self.df.is_some()
    }
    fn differential(&self, x: &HVector<S>, h: &HVector<S>) -> Result<HVector<S>> {
        let df = self.df.as_ref().ok_or_else(|| Error::MissingDifferential(self.label.clone()))?;
        ensure_dim(self.dim, x.dim())?;
        ensure_dim(self.dim, h.dim())?;
        Ok(df(x, h))
    }
    fn lip_alpha(&self, _x: &HVector<S>) -> S {
        self.lip_alpha
    }
    fn q_inv_alpha_lipschitz(&self) -> Option<S> {
        self.q_inv_lip
    }
    fn x_lipschitz(&self) -> Option<S> {
        self.x_lip
    }
}

/// `F_{x,t}(h) = F(h + e^{tA} x)`.
#[derive(Clone)]
pub struct ShiftedDrift<S: Real> {
    base: DriftSpec<S>,
    anchor: HVector<S>,
    spectrum: Arc<SpectrumQ<S>>,
}

impl<S: Real> ShiftedDrift<S> {
    pub fn new(base: DriftSpec<S>, anchor: HVector<S>, spectrum: Arc<SpectrumQ<S>>) -> Result<Self> {
        spectrum.check_dim(&anchor)?;
        ensure_dim(spectrum.dim(), base.dim())?;
        Ok(Self { base, anchor, spectrum })
    }

    pub fn base(&self) -> &DriftSpec<S> {
        &self.base
    }

    pub fn anchor(&self) -> &HVector<S> {
        &self.anchor
    }

    /// `h + e^{tA} x`: the argument handed to the base drift.
    pub fn shifted_argument(&self, t: S, h: &HVector<S>) -> Result<HVector<S>> {
        let ex = self.spectrum.apply_semigroup(t, &self.anchor)?;
        h.checked_add(&ex)
    }

    pub fn eval(&self, t: S, h: &HVector<S>) -> Result<HVector<S>> {
        self.base.evaluate(&self.shifted_argument(t, h)?)
    }

    pub fn differential(&self, t: S, h: &HVector<S>, k: &HVector<S>) -> Result<HVector<S>> {
        self.base.differential(&self.shifted_argument(t, h)?, k)
    }

    /// The Lipschitz constant in `h`, identical to the base constant.
    pub fn lip_alpha(&self, t: S, h: &HVector<S>) -> Result<S> {
        Ok(self.base.lip_alpha(&self.shifted_argument(t, h)?))
    }

    /// `∫_0^T ‖F_{x,s}(0)‖_α² ds` over dyadic panels shrinking towards `s = 0`.
    pub fn integrability_report(&self, horizon: S) -> Result<IntegrabilityReport> {
        let horizon_f = horizon.to_f64_lossy();
        if !(horizon_f > 0.0) {
            return Err(Error::invalid("horizon", "must be positive"));
        }
        let zero = HVector::zeros(self.spectrum.dim());
        let integrand = |s: f64| -> f64 {
            match self.eval(S::lit(s), &zero).and_then(|v| self.spectrum.h_alpha_inner(&v, &v)) {
                Ok(v) => v.to_f64_lossy(),
                Err(_) => f64::NAN,
            }
        };
        let mut total = 0.0;
        let mut b = horizon_f;
        let mut converged = false;
        let mut panels = 0;
        for _ in 0..60 {
            let a = 0.5 * b;
            let scale = (b - a) * integrand(b).abs();
            let piece = adaptive_simpson(&integrand, a, b, 1e-10 * scale + 1e-300)?;
            total += piece;
            panels += 1;
            b = a;
            if piece.abs() <= 1e-10 * total.abs() {
                converged = true;
                break;
            }
        }
        Ok(IntegrabilityReport { value: total, panels, converged })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntegrabilityReport {
    pub value: f64,
    pub panels: usize,
    pub converged: bool,
}

/// Outcome of a sampled Lipschitz audit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LipschitzAudit {
    pub pairs: usize,
    pub max_ratio: f64,
    pub violations: usize,
}

/// Checks `‖F(x+h) - F(x)‖_α ≤ lip_alpha(x) ‖h‖_α (1 + slack)` over the
/// supplied pairs.
pub fn audit_lipschitz<S: Real>(
    drift: &dyn Drift<S>,
    spectrum: &SpectrumQ<S>,
    pairs: &[(HVector<S>, HVector<S>)],
    slack: f64,
) -> Result<LipschitzAudit> {
    let mut max_ratio = 0.0f64;
    let mut violations = 0;
    for (x, h) in pairs {
        let hn = spectrum.h_alpha_norm(h)?.to_f64_lossy();
        if hn == 0.0 {
            continue;
        }
        let d = drift.evaluate(&x.checked_add(h)?)?.checked_sub(&drift.evaluate(x)?)?;
        let dn = spectrum.h_alpha_norm(&d)?.to_f64_lossy();
        let l = drift.lip_alpha(x).to_f64_lossy();
        let ratio = dn / hn;
        if ratio > l * (1.0 + slack) + 1e-12 {
            violations += 1;
        }
        max_ratio = max_ratio.max(if l > 0.0 { ratio / l } else { ratio });
    }
    Ok(LipschitzAudit { pairs: pairs.len(), max_ratio, violations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(eig: &[f64], alpha: f64) -> Arc<SpectrumQ<f64>> {
        Arc::new(SpectrumQ::new(eig.to_vec(), alpha).unwrap())
    }

    #[test]
    fn zero_drift_shifted_is_zero() {
        let s = spec(&[1.0, 0.5], 0.3);
        let z: DriftSpec<f64> = Arc::new(ZeroDrift::new(2));
        let sd = ShiftedDrift::new(z, HVector::from_f64(&[1.0, 2.0]), s).unwrap();
        for t in [0.0, 0.7, 3.0] {
            assert!(sd.eval(t, &HVector::from_f64(&[0.3, -0.1])).unwrap().is_zero());
        }
    }

    #[test]
    fn shifted_at_zero_time_adds_anchor() {
        let s = spec(&[1.0, 0.5], 0.3);
        let f: DriftSpec<f64> = Arc::new(FnDrift::new("square", 2, 0.0, |x: &HVector<f64>| {
            HVector::new(x.coeffs().iter().map(|c| c * c).collect())
        }));
        let sd = ShiftedDrift::new(f.clone(), HVector::from_f64(&[1.0, 2.0]), s).unwrap();
        let h = HVector::from_f64(&[0.5, -1.0]);
        assert_eq!(sd.eval(0.0, &h).unwrap(), f.evaluate(&HVector::from_f64(&[1.5, 1.0])).unwrap());
    }

    #[test]
    fn heuristic_membership() {
        let s = SpectrumQ::<f64>::power_family(1.0, 2.0, 16, 0.5).unwrap();
        let p = MembershipPolicy::default();
        // smooth: coefficients decaying faster than λ^{1/2}
        let smooth = HVector::new(s.eigenvalues().to_vec());
        assert_eq!(p.decide(&s, &smooth).unwrap(), Membership::InHAlpha);
        // rough: flat coefficients, ‖·‖_{1/2}² = Σ k²
        let rough = HVector::new(vec![1.0; 16]);
        assert_eq!(p.decide(&s, &rough).unwrap(), Membership::NotInHAlpha);
        assert_eq!(p.decide(&s, &HVector::zeros(16)).unwrap(), Membership::InHAlpha);
        let one = SpectrumQ::<f64>::new(vec![1.0], 0.5).unwrap();
        assert!(matches!(p.decide(&one, &HVector::zeros(1)), Err(Error::MembershipUndecided(_))));
    }

    #[test]
    fn integrability_of_smooth_shift() {
        let s = spec(&[1.0, 0.25], 0.0);
        let f: DriftSpec<f64> = Arc::new(FnDrift::new("id", 2, 1.0, |x: &HVector<f64>| x.clone()));
        let x = HVector::from_f64(&[1.0, 0.0]);
        let sd = ShiftedDrift::new(f, x, s).unwrap();
        // ‖e^{sA}x‖² = e^{-s} for λ = 1, α = 0
        let r = sd.integrability_report(2.0).unwrap();
        assert!(r.converged);
        assert!((r.value - (1.0 - (-2f64).exp())).abs() < 1e-8, "{}", r.value);
    }
}
