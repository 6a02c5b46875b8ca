//! Drifts defined pointwise on grid functions through a spectral frame.
//!
//! All three drifts live in the `α = 1/2` setting of a Wiener-type frame,
//! where the frame's `H_{1/2}` norm equals the `W^{1,2}_0` seminorm of the
//! piecewise-linear interpolant pinned to `0` at `ξ = 0`. Interpolation of
//! states therefore pins `f(0) = 0` and holds the last value constant on
//! `[ξ_M, 1]`.

use std::sync::Arc;

use super::{Drift, LipschitzKind, Membership, MembershipPolicy};
use crate::covariance::{GridFunction, SpectralFrame};
use crate::error::{ensure_dim, Error, Result};
use crate::scalar::Real;
use crate::spectral::SpectrumQ;
use crate::vector::HVector;

fn require_half(frame: &SpectralFrame) -> Result<()> {
    let a = frame.spectrum().alpha();
    if a == 0.5 {
        Ok(())
    } else {
        Err(Error::AlphaNotHalf(a))
    }
}

/// Pinned interpolant of state samples: `0` at `ξ = 0`, linear between
/// nodes, constant after the last node.
fn pinned_interp(values: &[f64], y: f64) -> f64 {
    let m = values.len();
    let pos = y * m as f64 - 0.5;
    if pos <= -0.5 {
        return 0.0;
    }
    if pos < 0.0 {
        return values[0] * (pos + 0.5) * 2.0;
    }
    if pos >= (m - 1) as f64 {
        return values[m - 1];
    }
    let i = pos.floor() as usize;
    let w = pos - i as f64;
    values[i] + w * (values[i + 1] - values[i])
}

/// Largest slope of the pinned interpolant.
fn pinned_max_slope(values: &[f64]) -> f64 {
    let m = values.len() as f64;
    values.windows(2).map(|w| (m * (w[1] - w[0])).abs()).fold(2.0 * m * values[0].abs(), f64::max)
}

/// `F(f) = f∘g - f(g(0))` on `W^{1,2}_0`, `0` elsewhere.
#[derive(Clone, Debug)]
pub struct CompositionRightDrift<S: Real> {
    frame: Arc<SpectralFrame>,
    spectrum: Arc<SpectrumQ<S>>,
    g: GridFunction,
    g_at_zero: f64,
    lip_g: f64,
    policy: MembershipPolicy,
}

impl<S: Real> CompositionRightDrift<S> {
    pub fn new(frame: Arc<SpectralFrame>, g: GridFunction, policy: MembershipPolicy) -> Result<Self> {
        require_half(&frame)?;
        ensure_dim(frame.grid_size(), g.grid_size())?;
        for (i, &v) in g.values().iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::RangeViolation { index: i, value: v });
            }
        }
        if let Some(i) = g.values().windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::NotMonotone(i + 1));
        }
        let g_at_zero = g.value_at_zero().clamp(0.0, 1.0);
        let m = g.grid_size() as f64;
        let lip_g = g.slopes().into_iter().fold(2.0 * m * (g.values()[0] - g_at_zero), f64::max);
        let spectrum = Arc::new(frame.spectrum_as()?);
        Ok(Self { frame, spectrum, g, g_at_zero, lip_g, policy })
    }

    /// Largest slope of `g`, including the half cell next to `ξ = 0`.
    pub fn lip_g(&self) -> f64 {
        self.lip_g
    }

    /// `f∘g - f(g(0))` on the grid, with `f` interpolated as a pinned state.
    pub fn apply_grid(&self, f: &GridFunction) -> Result<GridFunction> {
        ensure_dim(self.g.grid_size(), f.grid_size())?;
        let fv = f.values();
        let base = pinned_interp(fv, self.g_at_zero);
        GridFunction::new(self.g.values().iter().map(|&gi| pinned_interp(fv, gi) - base).collect())
    }

    fn apply_coeffs(&self, x: &HVector<S>) -> Result<HVector<S>> {
        let f = self.frame.from_coeffs(x)?;
        self.frame.to_coeffs(&self.apply_grid(&f)?)
    }
}

impl<S: Real> Drift<S> for CompositionRightDrift<S> {
    fn label(&self) -> &str {
        "composition-right"
    }
    fn dim(&self) -> usize {
        self.frame.modes()
    }
    fn evaluate(&self, x: &HVector<S>) -> Result<HVector<S>> {
        match self.membership(x)? {
            Membership::InHAlpha => self.apply_coeffs(x),
            Membership::NotInHAlpha => Ok(HVector::zeros(self.dim())),
        }
    }
    fn has_differential(&self) -> bool {
        true
    }
    // F is linear on its branch.
    fn differential(&self, x: &HVector<S>, h: &HVector<S>) -> Result<HVector<S>> {
        match self.membership(x)? {
            Membership::InHAlpha => self.apply_coeffs(h),
            Membership::NotInHAlpha => Ok(HVector::zeros(self.dim())),
        }
    }
    fn lip_alpha(&self, _x: &HVector<S>) -> S {
        S::lit(self.lip_g.sqrt())
    }
    fn membership(&self, x: &HVector<S>) -> Result<Membership> {
        self.policy.decide(&self.spectrum, x)
    }
    fn is_branching(&self) -> bool {
        true
    }
}

/// `F(f) = g∘f - g(f(0))` on the branch of absolutely continuous `f` with
/// bounded derivative and `f(0) = 0`, `0` elsewhere.
///
/// `g` is tabulated on `[0, 1]` and extended linearly beyond the outer
/// nodes. The point-dependent constant is
/// `sqrt(2 L_g² + L_{g'}² ‖f'‖_∞²)`.
#[derive(Clone, Debug)]
pub struct CompositionLeftDrift<S: Real> {
    frame: Arc<SpectralFrame>,
    spectrum: Arc<SpectrumQ<S>>,
    g: GridFunction,
    g_at_zero: f64,
    lip_g: f64,
    lip_g_prime: f64,
    policy: MembershipPolicy,
}

impl<S: Real> CompositionLeftDrift<S> {
    pub fn new(frame: Arc<SpectralFrame>, g: GridFunction, g_prime_lip: f64, policy: MembershipPolicy) -> Result<Self> {
        require_half(&frame)?;
        ensure_dim(frame.grid_size(), g.grid_size())?;
        if !(g_prime_lip >= 0.0) || !g_prime_lip.is_finite() {
            return Err(Error::invalid("g_prime_lip", "must be finite and nonnegative"));
        }
        let m = g.grid_size() as f64;
        let slopes = g.slopes();
        let observed = slopes.windows(2).map(|w| m * (w[1] - w[0]).abs()).fold(0.0, f64::max);
        if observed > 1.05 * g_prime_lip + 1e-9 {
            return Err(Error::NotLipschitz { observed, declared: g_prime_lip });
        }
        let lip_g = g.max_abs_slope();
        let spectrum = Arc::new(frame.spectrum_as()?);
        Ok(Self { frame, spectrum, g_at_zero: g.value_at_zero(), g, lip_g, lip_g_prime: g_prime_lip, policy })
    }

    pub fn lip_g(&self) -> f64 {
        self.lip_g
    }

    /// `g∘f - g(0)` on the grid.
    pub fn apply_grid(&self, f: &GridFunction) -> Result<GridFunction> {
        ensure_dim(self.g.grid_size(), f.grid_size())?;
        f.map(|v| self.g.interpolate(v) - self.g_at_zero)
    }

    /// `sqrt(2 L_g² + L_{g'}² ‖f'‖_∞²)` for the state `f`.
    pub fn lip_at(&self, f: &GridFunction) -> f64 {
        let fp = pinned_max_slope(f.values());
        (2.0 * self.lip_g * self.lip_g + (self.lip_g_prime * fp).powi(2)).sqrt()
    }
}

impl<S: Real> Drift<S> for CompositionLeftDrift<S> {
    fn label(&self) -> &str {
        "composition-left"
    }
    fn dim(&self) -> usize {
        self.frame.modes()
    }
    fn evaluate(&self, x: &HVector<S>) -> Result<HVector<S>> {
        match self.membership(x)? {
            Membership::InHAlpha => {
                let f = self.frame.from_coeffs(x)?;
                self.frame.to_coeffs(&self.apply_grid(&f)?)
            }
            Membership::NotInHAlpha => Ok(HVector::zeros(self.dim())),
        }
    }
    fn lip_alpha(&self, x: &HVector<S>) -> S {
        match self.frame.from_coeffs(x) {
            Ok(f) => S::lit(self.lip_at(&f)),
            Err(_) => S::infinity(),
        }
    }
    fn lipschitz_kind(&self) -> LipschitzKind {
        LipschitzKind::PointDependent
    }
    fn membership(&self, x: &HVector<S>) -> Result<Membership> {
        self.policy.decide(&self.spectrum, x)
    }
    fn is_branching(&self) -> bool {
        true
    }
}

/// Bounds on a profile `f(ξ, y)` over `[0, 1] × ℝⁿ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfileBounds {
    pub d_xi: f64,
    /// `max_i sup |∂f/∂y_i|`.
    pub d_y: f64,
    /// `max_i sup |∂²f/∂ξ∂y_i|`.
    pub d_xi_dy: f64,
}

/// Profile of a finite-rank drift; must satisfy `f(0, y) = 0`.
pub trait RankProfile: Send + Sync {
    fn rank(&self) -> usize;
    fn value(&self, xi: f64, y: &[f64]) -> f64;
    fn grad_y(&self, xi: f64, y: &[f64], out: &mut [f64]);
    fn bounds(&self) -> ProfileBounds;
}

/// `f(ξ, y) = ξ · tanh(Σ w_i y_i)`.
#[derive(Clone, Debug)]
pub struct XiTanhProfile {
    weights: Vec<f64>,
}

impl XiTanhProfile {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("weights", "need at least one finite weight"));
        }
        Ok(Self { weights })
    }
}

impl RankProfile for XiTanhProfile {
    fn rank(&self) -> usize {
        self.weights.len()
    }
    fn value(&self, xi: f64, y: &[f64]) -> f64 {
        let s: f64 = self.weights.iter().zip(y).map(|(w, v)| w * v).sum();
        xi * s.tanh()
    }
    fn grad_y(&self, xi: f64, y: &[f64], out: &mut [f64]) {
        let s: f64 = self.weights.iter().zip(y).map(|(w, v)| w * v).sum();
        let sech2 = 1.0 / s.cosh().powi(2);
        for (o, w) in out.iter_mut().zip(&self.weights) {
            *o = xi * w * sech2;
        }
    }
    fn bounds(&self) -> ProfileBounds {
        let wmax = self.weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        ProfileBounds { d_xi: 1.0, d_y: wmax, d_xi_dy: wmax }
    }
}

type ProfileFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
type ProfileGradFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Profile from closures with caller-declared bounds.
#[derive(Clone)]
pub struct FnProfile {
    rank: usize,
    f: ProfileFn,
    grad: ProfileGradFn,
    bounds: ProfileBounds,
}

impl FnProfile {
    pub fn new(
        rank: usize,
        bounds: ProfileBounds,
        f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self { rank, f: Arc::new(f), grad: Arc::new(grad), bounds }
    }
}

impl RankProfile for FnProfile {
    fn rank(&self) -> usize {
        self.rank
    }
    fn value(&self, xi: f64, y: &[f64]) -> f64 {
        (self.f)(xi, y)
    }
    fn grad_y(&self, xi: f64, y: &[f64], out: &mut [f64]) {
        (self.grad)(xi, y, out)
    }
    fn bounds(&self) -> ProfileBounds {
        self.bounds
    }
}

/// `F(g)(ξ) = f(ξ, ⟨g, x_1⟩, …, ⟨g, x_n⟩)` for orthonormal `x_i`.
#[derive(Clone)]
pub struct FiniteRankDrift<S: Real> {
    frame: Arc<SpectralFrame>,
    spectrum: Arc<SpectrumQ<S>>,
    /// Coefficients of each direction in the frame basis.
    direction_coeffs: Vec<HVector<f64>>,
    profile: Arc<dyn RankProfile>,
}

impl<S: Real> FiniteRankDrift<S> {
    pub fn new(
        frame: Arc<SpectralFrame>,
        directions: Vec<GridFunction>,
        profile: Arc<dyn RankProfile>,
    ) -> Result<Self> {
        require_half(&frame)?;
        ensure_dim(profile.rank(), directions.len())?;
        let mut gram_defect = 0.0f64;
        for (i, a) in directions.iter().enumerate() {
            ensure_dim(frame.grid_size(), a.grid_size())?;
            for (j, b) in directions.iter().enumerate().skip(i) {
                let target = if i == j { 1.0 } else { 0.0 };
                gram_defect = gram_defect.max((a.inner(b)? - target).abs());
            }
        }
        if gram_defect > 1e-8 {
            return Err(Error::NotOrthonormal(gram_defect));
        }
        let direction_coeffs = directions.iter().map(|d| frame.to_coeffs(d)).collect::<Result<_>>()?;
        let spectrum = Arc::new(frame.spectrum_as()?);
        Ok(Self { frame, spectrum, direction_coeffs, profile })
    }

    /// The first `n` frame modes as directions.
    pub fn with_mode_directions(frame: Arc<SpectralFrame>, profile: Arc<dyn RankProfile>) -> Result<Self> {
        let n = profile.rank();
        if n > frame.modes() {
            return Err(Error::TooManyModes { requested: n, available: frame.modes() });
        }
        let dirs = (0..n).map(|k| frame.mode_function(k)).collect();
        Self::new(frame, dirs, profile)
    }

    fn projections(&self, x: &HVector<S>) -> Result<Vec<f64>> {
        ensure_dim(self.frame.modes(), x.dim())?;
        let xf = x.to_f64();
        Ok(self.direction_coeffs.iter().map(|d| d.coeffs().iter().zip(&xf).map(|(a, b)| a * b).sum()).collect())
    }

    /// `F` on the grid for a state given by its coefficients.
    pub fn apply_grid(&self, x: &HVector<S>) -> Result<GridFunction> {
        let y = self.projections(x)?;
        let m = self.frame.grid_size();
        GridFunction::from_fn(m, |xi| self.profile.value(xi, &y))
    }
}

impl<S: Real> Drift<S> for FiniteRankDrift<S> {
    fn label(&self) -> &str {
        "finite-rank"
    }
    fn dim(&self) -> usize {
        self.frame.modes()
    }
    fn evaluate(&self, x: &HVector<S>) -> Result<HVector<S>> {
        self.frame.to_coeffs(&self.apply_grid(x)?)
    }
    fn has_differential(&self) -> bool {
        true
    }
    fn differential(&self, x: &HVector<S>, h: &HVector<S>) -> Result<HVector<S>> {
        let y = self.projections(x)?;
        let dy = self.projections(h)?;
        let mut grad = vec![0.0; y.len()];
        let m = self.frame.grid_size();
        let g = GridFunction::from_fn(m, |xi| {
            self.profile.grad_y(xi, &y, &mut grad);
            grad.iter().zip(&dy).map(|(a, b)| a * b).sum()
        })?;
        self.frame.to_coeffs(&g)
    }
    /// `λ_1^{1/2} √n max_i ‖∂²f/∂ξ∂y_i‖_∞`.
    fn lip_alpha(&self, _x: &HVector<S>) -> S {
        let n = self.direction_coeffs.len() as f64;
        S::lit(self.frame.spectrum().eigenvalues()[0].sqrt() * n.sqrt() * self.profile.bounds().d_xi_dy)
    }
    fn q_inv_alpha_lipschitz(&self) -> Option<S> {
        let n = self.direction_coeffs.len() as f64;
        Some(S::lit(n.sqrt() * self.profile.bounds().d_xi_dy))
    }
    /// `n · max{‖∂f/∂ξ‖_∞, ‖∂f/∂y_i‖_∞}`.
    fn x_lipschitz(&self) -> Option<S> {
        let b = self.profile.bounds();
        Some(S::lit(self.direction_coeffs.len() as f64 * b.d_xi.max(b.d_y)))
    }
}

impl<S: Real> FiniteRankDrift<S> {
    #[doc(hidden)]
    pub fn spectrum(&self) -> &SpectrumQ<S> {
        &self.spectrum
    }
}
