//! Drifts defined directly on the spectral coefficients.

use std::sync::Arc;

use super::{Drift, Membership, MembershipPolicy};
use crate::error::{ensure_dim, Error, Result};
use crate::scalar::Real;
use crate::spectral::SpectrumQ;
use crate::vector::HVector;

/// `F(x) = Π Q^β x` on `H_α`, `0` elsewhere, with diagonal `Π`.
#[derive(Clone, Debug)]
pub struct ProjectionDrift<S: Real> {
    spectrum: Arc<SpectrumQ<S>>,
    factors: Vec<S>,
    lip: S,
    policy: MembershipPolicy,
}

impl<S: Real> ProjectionDrift<S> {
    pub fn new(spectrum: Arc<SpectrumQ<S>>, beta: S, pi_diag: Vec<S>, policy: MembershipPolicy) -> Result<Self> {
        if beta < spectrum.alpha() {
            return Err(Error::BetaTooSmall { beta: beta.to_f64_lossy(), alpha: spectrum.alpha().to_f64_lossy() });
        }
        ensure_dim(spectrum.dim(), pi_diag.len())?;
        if pi_diag.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("pi_diag", "entries must be finite"));
        }
        let pi_norm = pi_diag.iter().fold(S::zero(), |m, p| m.max(p.abs()));
        let lip = pi_norm * spectrum.q_pow_norm(beta);
        let factors = spectrum.q_pow(beta).into_iter().zip(&pi_diag).map(|(q, &p)| q * p).collect();
        Ok(Self { spectrum, factors, lip, policy })
    }

    /// Diagonal of `Π Q^β`.
    pub fn factors(&self) -> &[S] {
        &self.factors
    }
}

impl<S: Real> Drift<S> for ProjectionDrift<S> {
    fn label(&self) -> &str {
        "projection"
    }
    fn dim(&self) -> usize {
        self.factors.len()
    }
    fn evaluate(&self, x: &HVector<S>) -> Result<HVector<S>> {
        match self.membership(x)? {
            Membership::InHAlpha => x.hadamard(&self.factors),
            Membership::NotInHAlpha => Ok(HVector::zeros(self.dim())),
        }
    }
    fn has_differential(&self) -> bool {
        true
    }
    fn differential(&self, x: &HVector<S>, h: &HVector<S>) -> Result<HVector<S>> {
        ensure_dim(self.dim(), h.dim())?;
        match self.membership(x)? {
            Membership::InHAlpha => h.hadamard(&self.factors),
            Membership::NotInHAlpha => Ok(HVector::zeros(self.dim())),
        }
    }
    fn lip_alpha(&self, _x: &HVector<S>) -> S {
        self.lip
    }
    fn membership(&self, x: &HVector<S>) -> Result<Membership> {
        self.policy.decide(&self.spectrum, x)
    }
    fn is_branching(&self) -> bool {
        true
    }
}

/// Convex potential `U` with Lipschitz gradient.
pub trait Potential<S: Real>: Send + Sync {
    fn label(&self) -> &str;
    fn grad(&self, x: &HVector<S>) -> Result<HVector<S>>;
    /// `D²U(x) h`, when available.
    fn hess_apply(&self, _x: &HVector<S>, _h: &HVector<S>) -> Option<Result<HVector<S>>> {
        None
    }
    /// Lipschitz constant of `DU`.
    fn grad_lipschitz(&self) -> S;
}

/// `U(x) = (1/2) Σ a_k x_k²` with `a_k ≥ 0`.
#[derive(Clone, Debug)]
pub struct QuadraticPotential<S> {
    diag: Vec<S>,
}

impl<S: Real> QuadraticPotential<S> {
    pub fn new(diag: Vec<S>) -> Result<Self> {
        if diag.iter().any(|a| !(*a >= S::zero()) || !a.is_finite()) {
            return Err(Error::invalid("diag", "quadratic weights must be finite and nonnegative"));
        }
        Ok(Self { diag })
    }

    /// `U(x) = ‖x‖²/2`.
    pub fn identity(dim: usize) -> Self {
        Self { diag: vec![S::one(); dim] }
    }
}

impl<S: Real> Potential<S> for QuadraticPotential<S> {
    fn label(&self) -> &str {
        "quadratic"
    }
    fn grad(&self, x: &HVector<S>) -> Result<HVector<S>> {
        x.hadamard(&self.diag)
    }
    fn hess_apply(&self, _x: &HVector<S>, h: &HVector<S>) -> Option<Result<HVector<S>>> {
        Some(h.hadamard(&self.diag))
    }
    fn grad_lipschitz(&self) -> S {
        self.diag.iter().fold(S::zero(), |m, &a| m.max(a))
    }
}

/// `U(x) = Σ c_k log cosh(x_k)` with `c_k ≥ 0`.
#[derive(Clone, Debug)]
pub struct LogCoshPotential<S> {
    weights: Vec<S>,
}

impl<S: Real> LogCoshPotential<S> {
    pub fn new(weights: Vec<S>) -> Result<Self> {
        if weights.iter().any(|c| !(*c >= S::zero()) || !c.is_finite()) {
            return Err(Error::invalid("weights", "log-cosh weights must be finite and nonnegative"));
        }
        Ok(Self { weights })
    }
}

impl<S: Real> Potential<S> for LogCoshPotential<S> {
    fn label(&self) -> &str {
        "log-cosh"
    }
    fn grad(&self, x: &HVector<S>) -> Result<HVector<S>> {
        ensure_dim(self.weights.len(), x.dim())?;
        Ok(HVector::new(x.coeffs().iter().zip(&self.weights).map(|(&v, &c)| c * v.tanh()).collect()))
    }
    fn hess_apply(&self, x: &HVector<S>, h: &HVector<S>) -> Option<Result<HVector<S>>> {
        Some((|| {
            ensure_dim(self.weights.len(), x.dim())?;
            ensure_dim(self.weights.len(), h.dim())?;
            Ok(HVector::new(
                x.coeffs()
                    .iter()
                    .zip(h.coeffs())
                    .zip(&self.weights)
                    .map(|((&v, &d), &c)| {
                        let s = S::one() / v.cosh();
                        c * s * s * d
                    })
                    .collect(),
            ))
        })())
    }
    fn grad_lipschitz(&self) -> S {
        self.weights.iter().fold(S::zero(), |m, &a| m.max(a))
    }
}

type GradFn<S> = Arc<dyn Fn(&HVector<S>) -> HVector<S> + Send + Sync>;
type HessFn<S> = Arc<dyn Fn(&HVector<S>, &HVector<S>) -> HVector<S> + Send + Sync>;

/// Potential given by closures.
#[derive(Clone)]
pub struct FnPotential<S> {
    grad: GradFn<S>,
    hess: Option<HessFn<S>>,
    lip: S,
}

impl<S: Real> FnPotential<S> {
    pub fn new(lip_du: S, grad: impl Fn(&HVector<S>) -> HVector<S> + Send + Sync + 'static) -> Self {
        Self { grad: Arc::new(grad), hess: None, lip: lip_du }
    }

    pub fn with_hessian(
        mut self,
        hess: impl Fn(&HVector<S>, &HVector<S>) -> HVector<S> + Send + Sync + 'static,
    ) -> Self {
        self.hess = Some(Arc::new(hess));
        self
    }
}

impl<S: Real> Potential<S> for FnPotential<S> {
    fn label(&self) -> &str {
        "custom"
    }
    fn grad(&self, x: &HVector<S>) -> Result<HVector<S>> {
        let g = (self.grad)(x);
        ensure_dim(x.dim(), g.dim())?;
        Ok(g)
    }
    fn hess_apply(&self, x: &HVector<S>, h: &HVector<S>) -> Option<Result<HVector<S>>> {
        self.hess.as_ref().map(|f| Ok(f(x, h)))
    }
    fn grad_lipschitz(&self) -> S {
        self.lip
    }
}

/// `F(x) = Q^α DU(x)`.
#[derive(Clone)]
pub struct GradientDrift<S: Real> {
    spectrum: Arc<SpectrumQ<S>>,
    potential: Arc<dyn Potential<S>>,
    has_hessian: bool,
    label: String,
}

impl<S: Real> GradientDrift<S> {
    pub fn new(spectrum: Arc<SpectrumQ<S>>, potential: Arc<dyn Potential<S>>) -> Result<Self> {
        let probe = HVector::zeros(spectrum.dim());
        potential.grad(&probe)?;
        let has_hessian = potential.hess_apply(&probe, &probe).is_some();
        let label = format!("gradient({})", potential.label());
        Ok(Self { spectrum, potential, has_hessian, label })
    }
}

impl<S: Real> Drift<S> for GradientDrift<S> {
    fn label(&self) -> &str {
        &self.label
    }
    fn dim(&self) -> usize {
        self.spectrum.dim()
    }
    fn evaluate(&self, x: &HVector<S>) -> Result<HVector<S>> {
        self.spectrum.check_dim(x)?;
        self.potential.grad(x)?.hadamard(self.spectrum.q_alpha())
    }
    fn has_differential(&self) -> bool {
        self.has_hessian
    }
    fn differential(&self, x: &HVector<S>, h: &HVector<S>) -> Result<HVector<S>> {
        self.spectrum.check_dim(x)?;
        self.spectrum.check_dim(h)?;
        match self.potential.hess_apply(x, h) {
            Some(r) => r?.hadamard(self.spectrum.q_alpha()),
            None => Err(Error::MissingDifferential(self.label.clone())),
        }
    }
    fn lip_alpha(&self, _x: &HVector<S>) -> S {
        self.spectrum.q_pow_norm(self.spectrum.alpha()) * self.potential.grad_lipschitz()
    }
    fn q_inv_alpha_lipschitz(&self) -> Option<S> {
        Some(self.potential.grad_lipschitz())
    }
    fn x_lipschitz(&self) -> Option<S> {
        Some(self.spectrum.q_pow_norm(self.spectrum.alpha()) * self.potential.grad_lipschitz())
    }
}

/// `(-A)^{1/2} F_in(x)` at `α = 0`, where `F_in` maps `X` into `H_{1/2}`
/// Lipschitz-continuously: `‖F_in(x+k) - F_in(x)‖_{1/2} ≤ L_F ‖k‖`.
///
/// `L_F` is read from the inner drift's `q_inv_alpha_lipschitz`, which for an
/// inner drift built on the same eigenvalues with `α = 1/2` is exactly that
/// constant.
#[derive(Clone)]
pub struct CahnHilliardDrift<S: Real> {
    inner: Arc<dyn Drift<S>>,
    scale: Vec<S>,
    lip: S,
}

impl<S: Real> CahnHilliardDrift<S> {
    pub fn new(spectrum: Arc<SpectrumQ<S>>, inner: Arc<dyn Drift<S>>) -> Result<Self> {
        if !spectrum.alpha().is_zero() {
            return Err(Error::AlphaNotZero(spectrum.alpha().to_f64_lossy()));
        }
        ensure_dim(spectrum.dim(), inner.dim())?;
        let l_f = inner.q_inv_alpha_lipschitz().ok_or_else(|| {
            Error::invalid("inner_f", "the inner drift must declare its X → H_1/2 Lipschitz constant")
        })?;
        let half = S::lit(0.5);
        // (-A)^{1/2} = (λ^{-1}/2)^{1/2}
        let scale = spectrum.eigenvalues().iter().map(|&l| (half / l).sqrt()).collect();
        check_range_h12(&spectrum, inner.as_ref())?;
        Ok(Self { inner, scale, lip: l_f * half.sqrt() })
    }
}

/// Rejects inner drifts whose outputs on a few probe states have a
/// `‖·‖_{1/2}` norm that more than doubles from `N/2` to `N` modes.
fn check_range_h12<S: Real>(spectrum: &SpectrumQ<S>, inner: &dyn Drift<S>) -> Result<()> {
    let n = spectrum.dim();
    if n < 2 {
        return Ok(());
    }
    let inv_l: Vec<f64> = spectrum.eigenvalues().iter().map(|l| 1.0 / l.to_f64_lossy()).collect();
    let flat = HVector::new(vec![S::one() / S::from_count(n).sqrt(); n]);
    let typical = HVector::new(spectrum.eigenvalues().iter().map(|l| l.sqrt()).collect());
    for probe in [flat, typical, HVector::basis(n, 0)] {
        let y = inner.evaluate(&probe)?.to_f64();
        let part = |r: std::ops::Range<usize>| r.map(|k| inv_l[k] * y[k] * y[k]).sum::<f64>();
        let half = part(0..n / 2);
        let full = half + part(n / 2..n);
        if full == 0.0 {
            continue;
        }
        let ratio = if half == 0.0 { f64::INFINITY } else { (full / half).sqrt() };
        if ratio > 2.0 {
            return Err(Error::RangeNotH12(ratio));
        }
    }
    Ok(())
}

impl<S: Real> Drift<S> for CahnHilliardDrift<S> {
    fn label(&self) -> &str {
        "cahn-hilliard"
    }
    fn dim(&self) -> usize {
        self.scale.len()
    }
    fn evaluate(&self, x: &HVector<S>) -> Result<HVector<S>> {
        self.inner.evaluate(x)?.hadamard(&self.scale)
    }
    fn has_differential(&self) -> bool {
        self.inner.has_differential()
    }
    fn differential(&self, x: &HVector<S>, h: &HVector<S>) -> Result<HVector<S>> {
        self.inner.differential(x, h)?.hadamard(&self.scale)
    }
    fn lip_alpha(&self, _x: &HVector<S>) -> S {
        self.lip
    }
    fn q_inv_alpha_lipschitz(&self) -> Option<S> {
        Some(self.lip)
    }
    fn x_lipschitz(&self) -> Option<S> {
        Some(self.lip)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::{audit_lipschitz, FnDrift};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(eig: &[f64], alpha: f64) -> Arc<SpectrumQ<f64>> {
        Arc::new(SpectrumQ::new(eig.to_vec(), alpha).unwrap())
    }

    fn random_pairs(s: &SpectrumQ<f64>, n: usize, seed: u64) -> Vec<(HVector<f64>, HVector<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = s.q_alpha().to_vec();
        let mut draw = |scale: f64| HVector::new(q.iter().map(|&w| scale * w * rng.random_range(-1.0..1.0)).collect());
        (0..n).map(|_| (draw(3.0), draw(1.0))).collect()
    }

    #[test]
    fn projection_examples() {
        let s = spec(&[0.25], 0.5);
        let d = ProjectionDrift::new(s.clone(), 0.5, vec![1.0], MembershipPolicy::Fixed(Membership::InHAlpha)).unwrap();
        assert_relative_eq!(d.evaluate(&HVector::from_f64(&[1.0])).unwrap()[0], 0.5);
        let d =
            ProjectionDrift::new(s.clone(), 0.5, vec![1.0], MembershipPolicy::Fixed(Membership::NotInHAlpha)).unwrap();
        let y = d.evaluate(&HVector::from_f64(&[1.0])).unwrap();
        assert_eq!(y.coeffs(), &[0.0]);
        assert!(matches!(
            ProjectionDrift::new(s, 0.2, vec![1.0], MembershipPolicy::default()),
            Err(Error::BetaTooSmall { .. })
        ));
    }

    #[test]
    fn projection_lipschitz_audit() {
        let s = Arc::new(SpectrumQ::<f64>::power_family(1.0, 2.0, 24, 0.25).unwrap());
        let pi: Vec<f64> = (0..24).map(|k| if k % 2 == 0 { 0.8 } else { -0.5 }).collect();
        let d = ProjectionDrift::new(s.clone(), 0.5, pi, MembershipPolicy::Fixed(Membership::InHAlpha)).unwrap();
        let a = audit_lipschitz(&d, &s, &random_pairs(&s, 1000, 3), 0.01).unwrap();
        assert_eq!(a.violations, 0);
        assert!(a.max_ratio <= 1.0 + 1e-12);
    }

    #[test]
    fn shifted_projection_example() {
        use crate::drift::ShiftedDrift;
        let s = spec(&[0.25], 0.5);
        let d: Arc<dyn Drift<f64>> = Arc::new(
            ProjectionDrift::new(s.clone(), 0.5, vec![1.0], MembershipPolicy::Fixed(Membership::InHAlpha)).unwrap(),
        );
        let sd = ShiftedDrift::new(d.clone(), HVector::from_f64(&[1.0]), s).unwrap();
        let y = sd.eval(2.0, &HVector::from_f64(&[1.0])).unwrap();
        let expect = d.evaluate(&HVector::from_f64(&[1.0 + (-1f64).exp()])).unwrap();
        assert_eq!(y, expect);
    }

    #[test]
    fn gradient_examples() {
        let s = spec(&[0.25], 0.5);
        let d = GradientDrift::new(s.clone(), Arc::new(QuadraticPotential::identity(1))).unwrap();
        assert_relative_eq!(d.evaluate(&HVector::from_f64(&[2.0])).unwrap()[0], 1.0);
        let zero = GradientDrift::new(s, Arc::new(QuadraticPotential::new(vec![0.0]).unwrap())).unwrap();
        assert!(zero.evaluate(&HVector::from_f64(&[2.0])).unwrap().is_zero());
    }

    #[test]
    fn gradient_lipschitz_audit_and_differential() {
        for alpha in [0.0, 0.25, 0.5] {
            let s = Arc::new(SpectrumQ::<f64>::power_family(2.0, 2.0, 16, alpha).unwrap());
            let w: Vec<f64> = (0..16).map(|k| 1.0 / (1.0 + k as f64)).collect();
            let d = GradientDrift::new(s.clone(), Arc::new(LogCoshPotential::new(w).unwrap())).unwrap();
            let a = audit_lipschitz(&d, &s, &random_pairs(&s, 1000, 7), 0.01).unwrap();
            assert_eq!(a.violations, 0, "alpha {alpha}");
            let x = HVector::from_f64(&[0.3; 16]);
            let h = HVector::from_f64(&(0..16).map(|k| (k as f64).sin()).collect::<Vec<_>>());
            let eps = 1e-6;
            let fd = (&d.evaluate(&(&x + &(&h * eps))).unwrap() - &d.evaluate(&x).unwrap()) * (1.0 / eps);
            let an = d.differential(&x, &h).unwrap();
            assert!((&fd - &an).norm() < 1e-5);
        }
    }

    #[test]
    fn cahn_hilliard_examples() {
        let s = spec(&[2.0], 0.0);
        let c = 3.0;
        let inner: Arc<dyn Drift<f64>> =
            Arc::new(FnDrift::new("lin", 1, 0.0, move |x: &HVector<f64>| x.scaled(c)).with_q_inv_alpha_lipschitz(c));
        let d = CahnHilliardDrift::new(s.clone(), inner).unwrap();
        assert_relative_eq!(d.evaluate(&HVector::from_f64(&[1.4])).unwrap()[0], c * 1.4 / 2.0, max_relative = 1e-15);

        let zero: Arc<dyn Drift<f64>> =
            Arc::new(FnDrift::new("zero", 1, 0.0, |x: &HVector<f64>| x.scaled(0.0)).with_q_inv_alpha_lipschitz(0.0));
        assert!(CahnHilliardDrift::new(s, zero).unwrap().evaluate(&HVector::from_f64(&[5.0])).unwrap().is_zero());

        let s_half = spec(&[2.0], 0.5);
        let inner: Arc<dyn Drift<f64>> = Arc::new(ZeroLike(1));
        assert_eq!(CahnHilliardDrift::new(s_half, inner).err(), Some(Error::AlphaNotZero(0.5)));
    }

    struct ZeroLike(usize);
    impl Drift<f64> for ZeroLike {
        fn label(&self) -> &str {
            "z"
        }
        fn dim(&self) -> usize {
            self.0
        }
        fn evaluate(&self, x: &HVector<f64>) -> Result<HVector<f64>> {
            Ok(x.scaled(0.0))
        }
        fn lip_alpha(&self, _x: &HVector<f64>) -> f64 {
            0.0
        }
        fn q_inv_alpha_lipschitz(&self) -> Option<f64> {
            Some(0.0)
        }
    }

    #[test]
    fn cahn_hilliard_rejects_rough_range_and_is_x_lipschitz() {
        let n = 64;
        let s0 = Arc::new(SpectrumQ::<f64>::power_family(1.0, 2.0, n, 0.0).unwrap());
        let rough: Arc<dyn Drift<f64>> =
            Arc::new(FnDrift::new("id", n, 1.0, |x: &HVector<f64>| x.clone()).with_q_inv_alpha_lipschitz(1.0));
        assert!(matches!(CahnHilliardDrift::new(s0.clone(), rough), Err(Error::RangeNotH12(_))));

        let s_half = Arc::new(s0.with_alpha(0.5).unwrap());
        let w: Vec<f64> = vec![1.5; n];
        let inner: Arc<dyn Drift<f64>> =
            Arc::new(GradientDrift::new(s_half, Arc::new(LogCoshPotential::new(w).unwrap())).unwrap());
        let d = CahnHilliardDrift::new(s0.clone(), inner).unwrap();
        let a = audit_lipschitz(&d, &s0, &random_pairs(&s0, 1000, 11), 0.01).unwrap();
        assert_eq!(a.violations, 0);
        assert_relative_eq!(d.x_lipschitz().unwrap(), 1.5 / 2f64.sqrt(), max_relative = 1e-15);
    }
}
