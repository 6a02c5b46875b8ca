//! Truncated spectral representation of the state space.
//!
//! Everything is diagonal in the eigenbasis of the covariance `Q`: the
//! generator `A = -(1/2) Q^{2α-1}`, the semigroup `e^{tA}`, the covariance
//! `Q_t = Q(Id - e^{2tA})` of the stochastic convolution and the
//! Cameron–Martin-type space `H_α = Q^α(X)` with
//! `⟨h, k⟩_α = ⟨Q^{-α} h, Q^{-α} k⟩`.
//!
//! Mode rates `λ_k^{2α-1}` are evaluated in log space; very stiff modes simply
//! have propagator factors that underflow to zero.

use serde::Serialize;

use crate::error::{ensure_dim, Error, Result};
use crate::quadrature::adaptive_simpson;
use crate::scalar::{one_minus_exp_neg, Real};
use crate::vector::HVector;

/// Eigenvalues of `Q` (sorted nonincreasing) together with the exponent `α`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumQ<S> {
    eigenvalues: Vec<S>,
    alpha: S,
    declared_tail_trace: Option<S>,
    // λ_k^{2α-1}
    rates: Vec<S>,
    // λ_k^{α}
    pow_alpha: Vec<S>,
    // λ_k^{-2α}
    h_alpha_weights: Vec<S>,
}

impl<S: Real> SpectrumQ<S> {
    /// Validates and sorts the eigenvalues.
    pub fn new(eigenvalues: Vec<S>, alpha: S) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::invalid("eigenvalues", "at least one eigenvalue is required"));
        }
        if !(alpha >= S::zero() && alpha <= S::lit(0.5)) {
            return Err(Error::AlphaOutOfRange(alpha.to_f64_lossy()));
        }
        for (index, &v) in eigenvalues.iter().enumerate() {
            if !(v > S::zero()) || !v.is_finite() {
                return Err(Error::NonPositiveEigenvalue { index, value: v.to_f64_lossy() });
            }
        }
        let mut eigenvalues = eigenvalues;
        eigenvalues.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
        let two = S::lit(2.0);
        let rate_exp = two * alpha - S::one();
        let rates = eigenvalues.iter().map(|&l| (rate_exp * l.ln()).exp()).collect();
        let pow_alpha = eigenvalues.iter().map(|&l| (alpha * l.ln()).exp()).collect();
        let h_alpha_weights = eigenvalues.iter().map(|&l| (-two * alpha * l.ln()).exp()).collect();
        Ok(Self { eigenvalues, alpha, declared_tail_trace: None, rates, pow_alpha, h_alpha_weights })
    }

    /// `λ_k = c·k^{-p}` for `k = 1..=n`, with the tail `Σ_{k>n} λ_k` estimated
    /// by the midpoint integral `c (n + 1/2)^{1-p} / (p - 1)`.
    pub fn power_family(c: S, p: S, n: usize, alpha: S) -> Result<Self> {
        if !(c > S::zero()) {
            return Err(Error::invalid("c", "power family scale must be positive"));
        }
        if !(p > S::one()) {
            return Err(Error::invalid("p", "power family exponent must exceed 1"));
        }
        if n == 0 {
            return Err(Error::invalid("n", "truncation dimension must be positive"));
        }
        let eig = (1..=n).map(|k| c * S::from_count(k).powf(-p)).collect();
        let half = S::lit(0.5);
        let tail = c * (S::from_count(n) + half).powf(S::one() - p) / (p - S::one());
        Ok(Self::new(eig, alpha)?.with_tail_trace(tail))
    }

    pub fn with_tail_trace(mut self, tail: S) -> Self {
        self.declared_tail_trace = Some(tail.max(S::zero()));
        self
    }

    /// Same eigenvalues, different exponent.
    pub fn with_alpha(&self, alpha: S) -> Result<Self> {
        let mut s = Self::new(self.eigenvalues.clone(), alpha)?;
        s.declared_tail_trace = self.declared_tail_trace;
        Ok(s)
    }

    /// First `n` modes.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.dim() {
            return Err(Error::TooManyModes { requested: n, available: self.dim() });
        }
        Self::new(self.eigenvalues[..n].to_vec(), self.alpha)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    #[inline]
    pub fn alpha(&self) -> S {
        self.alpha
    }

    #[inline]
    pub fn eigenvalues(&self) -> &[S] {
        &self.eigenvalues
    }

    /// `λ_k^{2α-1}`; the generator acts on mode `k` as multiplication by `-rate_k / 2`.
    #[inline]
    pub fn rates(&self) -> &[S] {
        &self.rates
    }

    /// `λ_k^α`, the diagonal of `Q^α`.
    #[inline]
    pub fn q_alpha(&self) -> &[S] {
        &self.pow_alpha
    }

    /// `λ_k^{-2α}`, the weights of the `H_α` inner product.
    #[inline]
    pub fn h_alpha_weights(&self) -> &[S] {
        &self.h_alpha_weights
    }

    /// `λ_k^β` for arbitrary real `β`.
    pub fn q_pow(&self, beta: S) -> Vec<S> {
        self.eigenvalues.iter().map(|&l| (beta * l.ln()).exp()).collect()
    }

    /// `‖Q^β‖ = λ_1^β` for `β ≥ 0`.
    pub fn q_pow_norm(&self, beta: S) -> S {
        (beta * self.eigenvalues[0].ln()).exp()
    }

    pub fn trace(&self) -> S {
        self.eigenvalues.iter().copied().sum()
    }

    pub fn declared_tail_trace(&self) -> Option<S> {
        self.declared_tail_trace
    }

    /// Partial trace plus the declared tail, when present.
    pub fn full_trace_estimate(&self) -> S {
        self.trace() + self.declared_tail_trace.unwrap_or_else(S::zero)
    }

    pub fn check_dim(&self, x: &HVector<S>) -> Result<()> {
        ensure_dim(self.dim(), x.dim())
    }

    /// The diagonal of `e^{tA}`.
    pub fn propagator(&self, t: S) -> Result<DiagonalPropagator<S>> {
        if !(t >= S::zero()) {
            return Err(Error::invalid("t", "time must be nonnegative"));
        }
        let half_t = t * S::lit(0.5);
        let mode_factors = self.rates.iter().map(|&r| (-half_t * r).exp()).collect();
        Ok(DiagonalPropagator { mode_factors, time: t })
    }

    pub fn apply_semigroup(&self, t: S, x: &HVector<S>) -> Result<HVector<S>> {
        self.check_dim(x)?;
        self.propagator(t)?.apply(x)
    }

    pub fn h_alpha_inner(&self, h: &HVector<S>, k: &HVector<S>) -> Result<S> {
        self.check_dim(h)?;
        self.check_dim(k)?;
        Ok(h.coeffs().iter().zip(k.coeffs()).zip(&self.h_alpha_weights).map(|((&a, &b), &w)| w * a * b).sum())
    }

    pub fn h_alpha_norm(&self, h: &HVector<S>) -> Result<S> {
        Ok(self.h_alpha_inner(h, h)?.sqrt())
    }

    /// `‖Q^{-β} v‖` for arbitrary `β`; `β = α` gives the `H_α` norm.
    pub fn weighted_norm(&self, beta: S, v: &HVector<S>) -> Result<S> {
        self.check_dim(v)?;
        let two = S::lit(2.0);
        Ok(v.coeffs()
            .iter()
            .zip(&self.eigenvalues)
            .map(|(&c, &l)| (-two * beta * l.ln()).exp() * c * c)
            .sum::<S>()
            .sqrt())
    }

    /// Mode variances of `Q_t = Q(Id - e^{2tA})`: `λ_k (1 - e^{-t λ_k^{2α-1}})`.
    pub fn q_t_covariance(&self, t: S) -> Result<CovarianceDiagonal<S>> {
        if !(t >= S::zero()) {
            return Err(Error::invalid("t", "time must be nonnegative"));
        }
        let variances = self.eigenvalues.iter().zip(&self.rates).map(|(&l, &r)| l * one_minus_exp_neg(t * r)).collect();
        Ok(CovarianceDiagonal { variances, time: t })
    }

    /// Constant `c(t)` with `‖e^{tA} x‖_α ≤ c(t) ‖x‖` for `α < 1/2`:
    /// `sup_r r^a e^{-tr/2} = (2a / (e t))^a` with `a = α / (1 - 2α)`.
    /// Returns `None` at `α = 1/2`, where `e^{tA}` does not smooth.
    pub fn smoothing_bound(&self, t: S) -> Option<S> {
        let half = S::lit(0.5);
        if self.alpha >= half || !(t > S::zero()) {
            return None;
        }
        let a = self.alpha / (S::one() - S::lit(2.0) * self.alpha);
        if a.is_zero() {
            return Some(S::one());
        }
        Some((S::lit(2.0) * a / (S::E() * t)).powf(a))
    }

    /// Evaluates `∫_0^t s^{-γ} Tr[e^{2sA} Q^{2α}] ds` at truncation `N` and at
    /// `N/2`, reporting whether the relative change is below `tol`.
    pub fn check_hypothesis_pd(&self, gamma: S, t: S, tol: S) -> Result<PdReport> {
        let gamma = gamma.to_f64_lossy();
        let t = t.to_f64_lossy();
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::GammaOutOfRange(gamma));
        }
        if !(t >= 0.0) {
            return Err(Error::invalid("t", "time must be nonnegative"));
        }
        let n = self.dim();
        if t == 0.0 {
            return Ok(PdReport {
                integral_value: 0.0,
                half_truncation_value: 0.0,
                relative_change: 0.0,
                truncation_dim: n,
                converged: true,
            });
        }
        let alpha = self.alpha.to_f64_lossy();
        let modes: Vec<(f64, f64)> = self
            .eigenvalues
            .iter()
            .zip(&self.rates)
            .map(|(&l, &r)| {
                let l = l.to_f64_lossy();
                (l.powf(2.0 * alpha), r.to_f64_lossy())
            })
            .collect();
        let full = pd_integral(&modes, gamma, t)?;
        let half = pd_integral(&modes[..(n / 2).max(1)], gamma, t)?;
        let relative_change = if full == 0.0 { 0.0 } else { (full - half).abs() / full.abs() };
        Ok(PdReport {
            integral_value: full,
            half_truncation_value: half,
            relative_change,
            truncation_dim: n,
            converged: relative_change <= tol.to_f64_lossy(),
        })
    }
}

/// `∫_0^t s^{-γ} Σ_k w_k e^{-s r_k} ds`.
///
/// The first panel `[0, h]` is integrated analytically against `s^{-γ}` with
/// the trace frozen at `h/2`; the rest is split into dyadic panels and
/// integrated with adaptive Simpson. `h` is halved until the total settles.
fn pd_integral(modes: &[(f64, f64)], gamma: f64, t: f64) -> Result<f64> {
    let trace = |s: f64| modes.iter().map(|&(w, r)| w * (-s * r).exp()).sum::<f64>();
    let integrand = |s: f64| s.powf(-gamma) * trace(s);
    let r_max = modes.iter().fold(0.0f64, |m, &(_, r)| m.max(r));
    let first_panel = |h: f64| h.powf(1.0 - gamma) / (1.0 - gamma) * trace(0.5 * h);

    let mut h = if r_max > 0.0 { t.min(1.0 / r_max) } else { t };
    // Dyadic panels on [h, t].
    let mut rest = 0.0;
    let mut a = h;
    while a < t {
        let b = (2.0 * a).min(t);
        let scale = (b - a) * integrand(a).abs();
        rest += adaptive_simpson(&integrand, a, b, 1e-11 * scale + f64::MIN_POSITIVE)?;
        a = b;
    }
    let mut value = first_panel(h) + rest;
    for _ in 0..200 {
        let h_new = 0.5 * h;
        let scale = (h - h_new) * integrand(h_new).abs();
        rest += adaptive_simpson(&integrand, h_new, h, 1e-11 * scale + f64::MIN_POSITIVE)?;
        h = h_new;
        let next = first_panel(h) + rest;
        if !next.is_finite() {
            return Err(Error::QuadratureFailure("non-finite first panel".into()));
        }
        if (next - value).abs() <= 1e-10 * next.abs() {
            return Ok(next);
        }
        value = next;
    }
    Err(Error::QuadratureFailure("first-panel refinement stalled".into()))
}

/// Diagonal of `e^{tA}`: `exp(-(t/2) λ_k^{2α-1}) ∈ (0, 1]` (possibly underflowing to 0).
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalPropagator<S> {
    mode_factors: Vec<S>,
    time: S,
}

impl<S: Real> DiagonalPropagator<S> {
    pub fn mode_factors(&self) -> &[S] {
        &self.mode_factors
    }

    pub fn time(&self) -> S {
        self.time
    }

    pub fn apply(&self, x: &HVector<S>) -> Result<HVector<S>> {
        x.hadamard(&self.mode_factors)
    }

    /// In-place application.
    pub fn apply_mut(&self, x: &mut HVector<S>) -> Result<()> {
        ensure_dim(self.mode_factors.len(), x.dim())?;
        for (c, &f) in x.coeffs_mut().iter_mut().zip(&self.mode_factors) {
            *c = *c * f;
        }
        Ok(())
    }
}

/// Mode variances of a diagonal Gaussian covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceDiagonal<S> {
    variances: Vec<S>,
    time: S,
}

impl<S: Real> CovarianceDiagonal<S> {
    pub fn variances(&self) -> &[S] {
        &self.variances
    }

    pub fn time(&self) -> S {
        self.time
    }

    pub fn trace(&self) -> S {
        self.variances.iter().copied().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PdReport {
    pub integral_value: f64,
    pub half_truncation_value: f64,
    pub relative_change: f64,
    pub truncation_dim: usize,
    pub converged: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec(eig: &[f64], alpha: f64) -> SpectrumQ<f64> {
        SpectrumQ::new(eig.to_vec(), alpha).unwrap()
    }

    #[test]
    fn make_spectrum_examples() {
        let s = spec(&[1.0, 0.25, 1.0 / 9.0], 0.5);
        assert_relative_eq!(s.trace(), 49.0 / 36.0, max_relative = 1e-15);

        let s = spec(&[0.25, 1.0], 0.0);
        assert_eq!(s.eigenvalues(), &[1.0, 0.25]);

        assert_eq!(SpectrumQ::new(vec![1.0, -1.0], 0.3), Err(Error::NonPositiveEigenvalue { index: 1, value: -1.0 }));
        assert_eq!(SpectrumQ::new(vec![1.0], 0.6), Err(Error::AlphaOutOfRange(0.6)));
        assert!(SpectrumQ::new(vec![1.0], -0.1).is_err());
        assert!(SpectrumQ::new(vec![1.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn basel_partial_sums_approach_pi_squared_over_six() {
        let target = std::f64::consts::PI.powi(2) / 6.0;
        let mut last_gap = f64::INFINITY;
        for n in [10usize, 100, 1000, 10000] {
            let s = SpectrumQ::<f64>::power_family(1.0, 2.0, n, 0.0).unwrap();
            let gap = target - s.trace();
            assert!(gap > 0.0 && gap < last_gap);
            // Σ_{k>n} k^{-2} ≈ 1/(n + 1/2)
            assert_relative_eq!(s.full_trace_estimate(), target, max_relative = 1e-3 / n as f64 + 1e-7);
            last_gap = gap;
        }
    }

    #[test]
    fn semigroup_examples() {
        let s = spec(&[1.0, 0.3], 0.5);
        let x = HVector::from_f64(&[1.0, 3.0]);
        let y = s.apply_semigroup(2.0, &x).unwrap();
        let e = (-1f64).exp();
        assert_relative_eq!(y[0], e, max_relative = 1e-15);
        assert_relative_eq!(y[1], 3.0 * e, max_relative = 1e-15);

        assert_eq!(s.apply_semigroup(0.0, &x).unwrap(), x);

        // α = 0, λ = 2: rate λ^{-1}/2 = 1/4 over t = 1.
        let s = spec(&[2.0], 0.0);
        let y = s.apply_semigroup(1.0, &HVector::from_f64(&[4.0])).unwrap();
        assert_relative_eq!(y[0], 4.0 * (-0.25f64).exp(), max_relative = 1e-15);

        assert!(s.apply_semigroup(1.0, &HVector::from_f64(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn h_alpha_examples() {
        let s = spec(&[4.0], 0.5);
        let h = HVector::from_f64(&[2.0]);
        assert_relative_eq!(s.h_alpha_inner(&h, &h).unwrap(), 1.0, max_relative = 1e-15);

        let s = spec(&[1.0, 0.25], 0.5);
        let h = HVector::from_f64(&[1.0, 1.0]);
        let k = HVector::from_f64(&[1.0, -1.0]);
        assert_relative_eq!(s.h_alpha_inner(&h, &k).unwrap(), -3.0, max_relative = 1e-14);

        let s = spec(&[3.0, 0.7, 0.01], 0.0);
        let h = HVector::from_f64(&[0.3, -2.0, 5.0]);
        let k = HVector::from_f64(&[1.5, 0.5, -0.2]);
        assert_relative_eq!(s.h_alpha_inner(&h, &k).unwrap(), h.dot(&k).unwrap(), max_relative = 1e-15);
    }

    #[test]
    fn q_t_examples() {
        for alpha in [0.0, 0.25, 0.5] {
            let s = spec(&[1.0], alpha);
            let q = s.q_t_covariance(0.7).unwrap();
            assert_relative_eq!(q.variances()[0], 1.0 - (-0.7f64).exp(), max_relative = 1e-15);
        }
        let s = spec(&[1.0, 0.1, 0.01], 0.25);
        let q = s.q_t_covariance(1e-12).unwrap();
        assert!(q.variances().iter().all(|&v| v < 1e-9));
        let s = spec(&[1.0, 0.1, 0.01], 0.0);
        let q = s.q_t_covariance(1e4).unwrap();
        for (v, l) in q.variances().iter().zip(s.eigenvalues()) {
            assert_relative_eq!(*v, *l, max_relative = 1e-12);
        }
    }

    #[test]
    fn stiff_modes_underflow_without_nan() {
        let s = spec(&[1.0, 1e-8, 1e-300], 0.0);
        let p = s.propagator(1.0).unwrap();
        assert!(p.mode_factors().iter().all(|f| f.is_finite() && *f >= 0.0 && *f <= 1.0));
        assert_eq!(p.mode_factors()[2], 0.0);
    }

    #[test]
    fn pd_factorizes_at_half() {
        // At α = 1/2 all rates equal 1 and the integral factorizes.
        let s = SpectrumQ::<f64>::power_family(1.0, 2.0, 64, 0.5).unwrap();
        let r = s.check_hypothesis_pd(0.5, 1.0, 0.01).unwrap();
        let one_d = crate::quadrature::adaptive_simpson(
            &|u: f64| 2.0 * (-(u * u)).exp(), // s = u², ds = 2u du
            0.0,
            1.0,
            1e-14,
        )
        .unwrap();
        assert_relative_eq!(r.integral_value, s.trace() * one_d, max_relative = 1e-7);
    }

    #[test]
    fn pd_single_mode_matches_brute_quadrature() {
        for gamma in [0.1, 0.5, 0.9] {
            let s = spec(&[1.0], 0.3);
            let r = s.check_hypothesis_pd(gamma, 2.0, 0.01).unwrap();
            // substitution s = u^{1/(1-γ)} removes the singularity
            let p = 1.0 / (1.0 - gamma);
            let oracle = crate::quadrature::adaptive_simpson(
                &|u: f64| p * (-(u.powf(p))).exp(),
                0.0,
                2f64.powf(1.0 - gamma),
                1e-14,
            )
            .unwrap();
            assert_relative_eq!(r.integral_value, oracle, max_relative = 1e-7);
        }
    }

    #[test]
    fn pd_zero_time_and_bad_gamma() {
        let s = spec(&[1.0, 0.5], 0.2);
        let r = s.check_hypothesis_pd(0.5, 0.0, 0.01).unwrap();
        assert_eq!(r.integral_value, 0.0);
        assert!(r.converged);
        assert_eq!(s.check_hypothesis_pd(1.0, 1.0, 0.01), Err(Error::GammaOutOfRange(1.0)));
        assert_eq!(s.check_hypothesis_pd(0.0, 1.0, 0.01), Err(Error::GammaOutOfRange(0.0)));
    }

    #[test]
    fn generic_over_f32() {
        let s = SpectrumQ::<f32>::new(vec![1.0, 0.25], 0.5).unwrap();
        let y = s.apply_semigroup(2.0, &HVector::new(vec![1.0f32, 3.0])).unwrap();
        assert!((y[0] - (-1f32).exp()).abs() < 1e-6);
    }
}
