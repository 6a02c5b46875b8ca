//! Trajectory solvers for the mild equation, the shifted equation and the
//! variational process.
//!
//! Exponential Euler on the grid `t_m = mΔ`:
//! `X_{m+1} = e^{ΔA}(X_m + Δ F(X_m)) + η_m`, with `η_m` the exact
//! stochastic convolution over one step. The linear part is exact per mode,
//! so stiffness never restricts `Δ`.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::drift::{Drift, Membership, ShiftedDrift};
use crate::error::{ensure_dim, Error, Result};
use crate::rng::StreamId;
use crate::scalar::{one_minus_exp_neg, Real};
use crate::spectral::SpectrumQ;
use crate::vector::HVector;

/// Deliberate defects used to check that the verification suite notices them.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// The gradient-estimator integrand is built from `(X_{m+1}, Y_{m+1})`.
    BelRightEndpoint,
    /// Convolution increments use the stationary variance `λ_k`.
    StationaryVariance,
}

/// Discretization of the stochastic integral in the gradient estimator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BelWeighting {
    /// `Δ Σ_k u_k η_k / q_k` with the adapted one-step tangent
    /// `u_m = e^{ΔA}(I + Δ DF(X_m)) Y_m`; unbiased for the discrete chain.
    #[default]
    ExactStep,
    /// `Σ_k λ_k^{-2α} Y_{m,k} ΔW^{(α)}_{m,k}` with left-endpoint `Y_m`.
    ItoIncrement,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ExpEuler,
    Picard,
}

/// Per-mode coefficients of one time step of length `Δ`.
#[derive(Clone, Debug)]
pub struct StepKernel<S> {
    dt: S,
    prop: Vec<S>,
    q: Vec<S>,
    inv_q: Vec<S>,
    sd_eta: Vec<S>,
    dw_z1: Vec<S>,
    dw_z2: Vec<S>,
    phi: Vec<S>,
    h_alpha_w: Vec<S>,
}

impl<S: Real> StepKernel<S> {
    pub fn new(spectrum: &SpectrumQ<S>, dt: S, fault: Option<Fault>) -> Result<Self> {
        if !(dt > S::zero()) || !dt.is_finite() {
            return Err(Error::invalid("dt", "time step must be positive and finite"));
        }
        let half = S::lit(0.5);
        let two = S::lit(2.0);
        let n = spectrum.dim();
        let mut k = Self {
            dt,
            prop: Vec::with_capacity(n),
            q: Vec::with_capacity(n),
            inv_q: Vec::with_capacity(n),
            sd_eta: Vec::with_capacity(n),
            dw_z1: Vec::with_capacity(n),
            dw_z2: Vec::with_capacity(n),
            phi: Vec::with_capacity(n),
            h_alpha_w: spectrum.h_alpha_weights().to_vec(),
        };
        let stationary = fault == Some(Fault::StationaryVariance);
        for ((&l, &r), &qa) in spectrum.eigenvalues().iter().zip(spectrum.rates()).zip(spectrum.q_alpha()) {
            let la2 = qa * qa;
            let q = if stationary { l } else { l * one_minus_exp_neg(r * dt) };
            let v = la2 * dt;
            let c = la2 * two / r * one_minus_exp_neg(half * r * dt);
            k.prop.push((-half * r * dt).exp());
            k.q.push(q);
            k.phi.push(two / r * one_minus_exp_neg(half * r * dt));
            if q > S::zero() {
                let sq = q.sqrt();
                k.inv_q.push(S::one() / q);
                k.sd_eta.push(sq);
                let a = c / sq;
                k.dw_z1.push(a);
                k.dw_z2.push((v - a * a).max(S::zero()).sqrt());
            } else {
                k.inv_q.push(S::zero());
                k.sd_eta.push(S::zero());
                k.dw_z1.push(S::zero());
                k.dw_z2.push(v.sqrt());
            }
        }
        Ok(k)
    }

    pub fn dt(&self) -> S {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.prop.len()
    }

    /// Diagonal of `e^{ΔA}`.
    pub fn propagator(&self) -> &[S] {
        &self.prop
    }

    /// Variances of the convolution increment.
    pub fn increment_variance(&self) -> &[S] {
        &self.q
    }

    /// `∫_0^Δ e^{sA} ds` per mode.
    pub fn phi(&self) -> &[S] {
        &self.phi
    }

    /// Draws one step's `(η, ΔW^{(α)})` pair, two normals per mode.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, eta: &mut [S], dw: &mut [S]) {
        for k in 0..self.dim() {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let (z1, z2) = (S::lit(z1), S::lit(z2));
            eta[k] = self.sd_eta[k] * z1;
            dw[k] = self.dw_z1[k] * z1 + self.dw_z2[k] * z2;
        }
    }
}

/// One exact draw of the stochastic convolution over `[0, dt]`.
pub fn sample_convolution_step<S: Real, R: Rng + ?Sized>(
    spectrum: &SpectrumQ<S>,
    dt: S,
    rng: &mut R,
) -> Result<HVector<S>> {
    let k = StepKernel::new(spectrum, dt, None)?;
    let n = spectrum.dim();
    let mut eta = vec![S::zero(); n];
    let mut dw = vec![S::zero(); n];
    k.draw(rng, &mut eta, &mut dw);
    Ok(HVector::new(eta))
}

/// Recorded noise for one trajectory: per step and mode, the convolution
/// increment `η` and the plain increment `ΔW^{(α)} = Q^α ΔW`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRecord<S> {
    dt: S,
    steps: usize,
    dim: usize,
    eta: Vec<S>,
    dw: Vec<S>,
    stream: StreamId,
}

impl<S: Real> NoiseRecord<S> {
    pub fn sample(kernel: &StepKernel<S>, steps: usize, stream: StreamId) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("steps", "at least one step is required"));
        }
        let dim = kernel.dim();
        let mut rng = stream.rng();
        let mut eta = vec![S::zero(); steps * dim];
        let mut dw = vec![S::zero(); steps * dim];
        for m in 0..steps {
            let r = m * dim..(m + 1) * dim;
            kernel.draw(&mut rng, &mut eta[r.clone()], &mut dw[r]);
        }
        Ok(Self { dt: kernel.dt(), steps, dim, eta, dw, stream })
    }

    pub fn dt(&self) -> S {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> S {
        S::from_count(self.steps) * self.dt
    }

    pub fn stream(&self) -> StreamId {
        self.stream
    }

    pub fn eta(&self, m: usize) -> &[S] {
        &self.eta[m * self.dim..(m + 1) * self.dim]
    }

    pub fn dw(&self, m: usize) -> &[S] {
        &self.dw[m * self.dim..(m + 1) * self.dim]
    }

    pub fn step_grid(&self) -> Vec<S> {
        (0..=self.steps).map(|m| S::from_count(m) * self.dt).collect()
    }

    /// The same Brownian path on the grid with step `2Δ`:
    /// `η' = e^{ΔA} η_1 + η_2`, `ΔW' = ΔW_1 + ΔW_2`.
    pub fn coarsen(&self, spectrum: &SpectrumQ<S>) -> Result<Self> {
        ensure_dim(spectrum.dim(), self.dim)?;
        if !self.steps.is_multiple_of(2) {
            return Err(Error::invalid("steps", "coarsening needs an even number of steps"));
        }
        let prop = spectrum.propagator(self.dt)?;
        let p = prop.mode_factors();
        let steps = self.steps / 2;
        let mut eta = Vec::with_capacity(steps * self.dim);
        let mut dw = Vec::with_capacity(steps * self.dim);
        for m in 0..steps {
            let (e1, e2) = (self.eta(2 * m), self.eta(2 * m + 1));
            let (w1, w2) = (self.dw(2 * m), self.dw(2 * m + 1));
            for k in 0..self.dim {
                eta.push(p[k] * e1[k] + e2[k]);
                dw.push(w1[k] + w2[k]);
            }
        }
        Ok(Self { dt: self.dt + self.dt, steps, dim: self.dim, eta, dw, stream: self.stream })
    }
}

/// Simulated trajectory with optional variational processes.
#[derive(Clone, Debug)]
pub struct PathBundle<S> {
    pub method: Method,
    pub x0: HVector<S>,
    pub times: Vec<S>,
    pub states: Vec<HVector<S>>,
    pub directions: Vec<HVector<S>>,
    /// `variational[d][m] = Y(t_m, directions[d])`.
    pub variational: Vec<Vec<HVector<S>>>,
    pub noise: Arc<NoiseRecord<S>>,
    /// Grid steps across which a branching drift changed branch.
    pub branch_crossings: usize,
    pub picard: Option<PicardReport>,
}

impl<S: Real> PathBundle<S> {
    pub fn horizon(&self) -> S {
        *self.times.last().expect("nonempty grid")
    }

    /// Columns `series,time,mode,value`; series is `state` or `variational<d>`.
    pub fn write_columnar<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "series,time,mode,value")?;
        for (t, x) in self.times.iter().zip(&self.states) {
            for (k, v) in x.coeffs().iter().enumerate() {
                writeln!(w, "state,{},{},{}", t, k, v)?;
            }
        }
        for (d, ys) in self.variational.iter().enumerate() {
            for (t, y) in self.times.iter().zip(ys) {
                for (k, v) in y.coeffs().iter().enumerate() {
                    writeln!(w, "variational{d},{},{},{}", t, k, v)?;
                }
            }
        }
        Ok(())
    }
}

/// Largest `‖a_m - b_m‖` over the grid.
pub fn sup_gap<S: Real>(a: &[HVector<S>], b: &[HVector<S>]) -> Result<f64> {
    ensure_dim(a.len(), b.len())?;
    a.iter().zip(b).try_fold(0.0f64, |m, (x, y)| Ok(m.max(x.checked_sub(y)?.norm().to_f64_lossy())))
}

enum DriftView<'a, S: Real> {
    Plain(&'a dyn Drift<S>),
    Shifted(&'a ShiftedDrift<S>),
}

impl<S: Real> DriftView<'_, S> {
    fn eval(&self, t: S, x: &HVector<S>) -> Result<HVector<S>> {
        match self {
            DriftView::Plain(d) => d.evaluate(x),
            DriftView::Shifted(d) => d.eval(t, x),
        }
    }

    fn diff(&self, t: S, x: &HVector<S>, h: &HVector<S>) -> Result<HVector<S>> {
        match self {
            DriftView::Plain(d) => d.differential(x, h),
            DriftView::Shifted(d) => d.differential(t, x, h),
        }
    }

    fn base(&self) -> &dyn Drift<S> {
        match self {
            DriftView::Plain(d) => *d,
            DriftView::Shifted(d) => d.base().as_ref(),
        }
    }

    fn membership(&self, t: S, x: &HVector<S>) -> Result<Membership> {
        match self {
            DriftView::Plain(d) => d.membership(x),
            DriftView::Shifted(d) => d.base().membership(&d.shifted_argument(t, x)?),
        }
    }
}

/// Gradient-estimator settings for [`integrate`].
#[derive(Clone, Copy, Debug)]
pub(crate) struct BelSettings {
    pub weighting: BelWeighting,
    pub fault: Option<Fault>,
}

/// Snapshot passed to observers at each grid time.
pub(crate) struct StepView<'a, S> {
    pub m: usize,
    pub state: &'a HVector<S>,
    pub variational: &'a [HVector<S>],
    /// Running stochastic-integral sums, one per direction.
    pub bel: &'a [S],
}

/// Exponential Euler driven by `noise`; calls `observe` at `m = 0..=M`.
/// Returns the number of branch crossings.
fn integrate<S: Real>(
    kernel: &StepKernel<S>,
    view: &DriftView<'_, S>,
    x0: &HVector<S>,
    noise: &NoiseRecord<S>,
    directions: &[HVector<S>],
    bel: Option<BelSettings>,
    observe: &mut dyn FnMut(StepView<'_, S>) -> Result<()>,
) -> Result<usize> {
    ensure_dim(kernel.dim(), x0.dim())?;
    ensure_dim(kernel.dim(), noise.dim())?;
    if !directions.is_empty() && !view.base().has_differential() {
        return Err(Error::MissingDifferential(view.base().label().to_string()));
    }
    for h in directions {
        ensure_dim(kernel.dim(), h.dim())?;
    }
    let dt = kernel.dt;
    let p = &kernel.prop;
    let branching = view.base().is_branching();
    let mut x = x0.clone();
    let mut ys: Vec<HVector<S>> = directions.to_vec();
    let mut weights = vec![S::zero(); directions.len()];
    let mut crossings = 0;
    let mut branch = if branching { Some(view.membership(S::zero(), &x)?) } else { None };
    observe(StepView { m: 0, state: &x, variational: &ys, bel: &weights })?;

    for m in 0..noise.steps() {
        let t = S::from_count(m) * dt;
        let t_next = S::from_count(m + 1) * dt;
        let eta = noise.eta(m);
        let f = view.eval(t, &x)?;
        let mut y_next = Vec::with_capacity(ys.len());
        for y in &ys {
            let dfy = view.diff(t, &x, y)?;
            let mut yn = y.clone();
            yn.axpy(dt, &dfy)?;
            for k in 0..yn.dim() {
                yn[k] = yn[k] * p[k];
            }
            y_next.push(yn);
        }
        let mut x_next = x.clone();
        x_next.axpy(dt, &f)?;
        for k in 0..x_next.dim() {
            x_next[k] = x_next[k] * p[k] + eta[k];
        }
        if !x_next.is_finite() || y_next.iter().any(|y| !y.is_finite()) {
            return Err(Error::NonFiniteState { step: m + 1 });
        }
        if let Some(b) = bel {
            let right = b.fault == Some(Fault::BelRightEndpoint);
            for (d, yn) in y_next.iter().enumerate() {
                let inc = match (b.weighting, right) {
                    (BelWeighting::ExactStep, false) => exact_increment(kernel, yn, eta),
                    (BelWeighting::ExactStep, true) => {
                        let dfy = view.diff(t_next, &x_next, yn)?;
                        let mut u = yn.clone();
                        u.axpy(dt, &dfy)?;
                        let u = u.hadamard(p)?;
                        exact_increment(kernel, &u, eta)
                    }
                    (BelWeighting::ItoIncrement, false) => ito_increment(kernel, &ys[d], noise.dw(m)),
                    (BelWeighting::ItoIncrement, true) => ito_increment(kernel, yn, noise.dw(m)),
                };
                weights[d] = weights[d] + inc;
            }
        }
        if let Some(prev) = branch {
            let now = view.membership(t_next, &x_next)?;
            if now != prev {
                crossings += 1;
            }
            branch = Some(now);
        }
        x = x_next;
        ys = y_next;
        observe(StepView { m: m + 1, state: &x, variational: &ys, bel: &weights })?;
    }
    Ok(crossings)
}

fn exact_increment<S: Real>(kernel: &StepKernel<S>, u: &HVector<S>, eta: &[S]) -> S {
    let s: S = u.coeffs().iter().zip(eta).zip(&kernel.inv_q).map(|((&a, &e), &w)| a * e * w).sum();
    kernel.dt * s
}

fn ito_increment<S: Real>(kernel: &StepKernel<S>, y: &HVector<S>, dw: &[S]) -> S {
    y.coeffs().iter().zip(dw).zip(&kernel.h_alpha_w).map(|((&a, &w), &c)| a * w * c).sum()
}

fn collect_bundle<S: Real>(
    kernel: &StepKernel<S>,
    view: &DriftView<'_, S>,
    x0: &HVector<S>,
    noise: Arc<NoiseRecord<S>>,
    directions: &[HVector<S>],
) -> Result<PathBundle<S>> {
    let steps = noise.steps();
    let mut states = Vec::with_capacity(steps + 1);
    let mut variational = vec![Vec::with_capacity(steps + 1); directions.len()];
    let crossings = integrate(kernel, view, x0, &noise, directions, None, &mut |s| {
        states.push(s.state.clone());
        for (d, y) in s.variational.iter().enumerate() {
            variational[d].push(y.clone());
        }
        Ok(())
    })?;
    Ok(PathBundle {
        method: Method::ExpEuler,
        x0: x0.clone(),
        times: noise.step_grid(),
        states,
        directions: directions.to_vec(),
        variational,
        noise,
        branch_crossings: crossings,
        picard: None,
    })
}

fn check_kernel<S: Real>(spectrum: &SpectrumQ<S>, noise: &NoiseRecord<S>) -> Result<StepKernel<S>> {
    ensure_dim(spectrum.dim(), noise.dim())?;
    StepKernel::new(spectrum, noise.dt(), None)
}

/// Samples fresh noise from `stream` and runs exponential Euler.
#[allow(clippy::too_many_arguments)]
pub fn solve_exp_euler<S: Real>(
    spectrum: &SpectrumQ<S>,
    drift: &dyn Drift<S>,
    x0: &HVector<S>,
    horizon: S,
    steps: usize,
    stream: StreamId,
    directions: &[HVector<S>],
) -> Result<PathBundle<S>> {
    if !(horizon > S::zero()) {
        return Err(Error::invalid("horizon", "must be positive"));
    }
    if steps == 0 {
        return Err(Error::invalid("steps", "at least one step is required"));
    }
    let kernel = StepKernel::new(spectrum, horizon / S::from_count(steps), None)?;
    let noise = Arc::new(NoiseRecord::sample(&kernel, steps, stream)?);
    collect_bundle(&kernel, &DriftView::Plain(drift), x0, noise, directions)
}

/// Exponential Euler replaying a recorded noise path.
pub fn solve_exp_euler_with_noise<S: Real>(
    spectrum: &SpectrumQ<S>,
    drift: &dyn Drift<S>,
    x0: &HVector<S>,
    noise: Arc<NoiseRecord<S>>,
    directions: &[HVector<S>],
) -> Result<PathBundle<S>> {
    let kernel = check_kernel(spectrum, &noise)?;
    collect_bundle(&kernel, &DriftView::Plain(drift), x0, noise, directions)
}

/// `Z_x(t, h)` for `dZ = (AZ + F(Z + e^{tA}x)) dt + Q^α dW`, `Z(0) = h0`,
/// replaying `noise`.
pub fn solve_shifted<S: Real>(
    spectrum: &SpectrumQ<S>,
    shifted: &ShiftedDrift<S>,
    h0: &HVector<S>,
    noise: Arc<NoiseRecord<S>>,
    directions: &[HVector<S>],
) -> Result<PathBundle<S>> {
    let kernel = check_kernel(spectrum, &noise)?;
    collect_bundle(&kernel, &DriftView::Shifted(shifted), h0, noise, directions)
}

/// Largest gap between `X(t_m, x)` and `Z_x(t_m, 0) + e^{t_m A} x`.
pub fn decomposition_gap<S: Real>(
    spectrum: &SpectrumQ<S>,
    x_path: &PathBundle<S>,
    z_path: &PathBundle<S>,
    anchor: &HVector<S>,
) -> Result<f64> {
    ensure_dim(x_path.states.len(), z_path.states.len())?;
    let mut gap = 0.0f64;
    for ((t, x), z) in x_path.times.iter().zip(&x_path.states).zip(&z_path.states) {
        let rebuilt = z.checked_add(&spectrum.apply_semigroup(*t, anchor)?)?;
        gap = gap.max(rebuilt.checked_sub(x)?.norm().to_f64_lossy());
    }
    Ok(gap)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PicardReport {
    /// Iterations summed over all subintervals.
    pub iterations: usize,
    /// Sup-norm change per iteration, subintervals concatenated.
    pub residuals: Vec<f64>,
    /// Number of times an interval was halved after failing to converge.
    pub splits: usize,
}

/// Fixed point of the discretized Volterra map on the step grid:
/// `Y_m = e^{t_m A} x0 + Σ_{j<m} e^{(m-1-j)ΔA} (φ ⊙ F(Y_j) + η_j)`,
/// `φ = ∫_0^Δ e^{sA} ds`. On `NoConvergence` the interval is halved.
pub fn solve_picard<S: Real>(
    spectrum: &SpectrumQ<S>,
    drift: &dyn Drift<S>,
    x0: &HVector<S>,
    noise: Arc<NoiseRecord<S>>,
    tol: f64,
    max_iter: usize,
) -> Result<PathBundle<S>> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", "must be positive"));
    }
    if max_iter == 0 {
        return Err(Error::invalid("max_iter", "must be positive"));
    }
    spectrum.check_dim(x0)?;
    let kernel = check_kernel(spectrum, &noise)?;
    let mut report = PicardReport { iterations: 0, residuals: Vec::new(), splits: 0 };
    let mut states = vec![x0.clone()];
    picard_interval(&kernel, drift, &noise, 0, noise.steps(), tol, max_iter, &mut states, &mut report, 0)?;
    let mut crossings = 0;
    if drift.is_branching() {
        let mut prev = drift.membership(&states[0])?;
        for s in &states[1..] {
            let now = drift.membership(s)?;
            if now != prev {
                crossings += 1;
            }
            prev = now;
        }
    }
    Ok(PathBundle {
        method: Method::Picard,
        x0: x0.clone(),
        times: noise.step_grid(),
        states,
        directions: Vec::new(),
        variational: Vec::new(),
        noise,
        branch_crossings: crossings,
        picard: Some(report),
    })
}

const MAX_SPLIT_DEPTH: usize = 32;

/// Solves on steps `m0..m1`; `states` holds the solution up to `m0` and is
/// extended to `m1`.
#[allow(clippy::too_many_arguments)]
fn picard_interval<S: Real>(
    kernel: &StepKernel<S>,
    drift: &dyn Drift<S>,
    noise: &NoiseRecord<S>,
    m0: usize,
    m1: usize,
    tol: f64,
    max_iter: usize,
    states: &mut Vec<HVector<S>>,
    report: &mut PicardReport,
    depth: usize,
) -> Result<()> {
    let start = states[m0].clone();
    match picard_segment(kernel, drift, noise, &start, m0, m1, tol, max_iter, report) {
        Ok(seg) => {
            states.extend(seg.into_iter().skip(1));
            Ok(())
        }
        Err(Error::NoConvergence { .. }) if m1 - m0 > 1 && depth < MAX_SPLIT_DEPTH => {
            report.splits += 1;
            let mid = m0 + (m1 - m0) / 2;
            picard_interval(kernel, drift, noise, m0, mid, tol, max_iter, states, report, depth + 1)?;
            picard_interval(kernel, drift, noise, mid, m1, tol, max_iter, states, report, depth + 1)
        }
        Err(e) => Err(e),
    }
}

#[allow(clippy::too_many_arguments)]
fn picard_segment<S: Real>(
    kernel: &StepKernel<S>,
    drift: &dyn Drift<S>,
    noise: &NoiseRecord<S>,
    start: &HVector<S>,
    m0: usize,
    m1: usize,
    tol: f64,
    max_iter: usize,
    report: &mut PicardReport,
) -> Result<Vec<HVector<S>>> {
    let p = &kernel.prop;
    let phi = &kernel.phi;
    let mut linear = Vec::with_capacity(m1 - m0 + 1);
    linear.push(start.clone());
    for m in m0..m1 {
        let eta = noise.eta(m);
        let prev = linear.last().expect("nonempty");
        linear.push(HVector::new(prev.coeffs().iter().zip(p).zip(eta).map(|((&x, &pk), &e)| pk * x + e).collect()));
    }
    let mut y = linear.clone();
    let mut last_residual = f64::INFINITY;
    for _ in 0..max_iter {
        let mut next = Vec::with_capacity(y.len());
        let mut d = HVector::zeros(start.dim());
        next.push(linear[0].clone());
        for j in 0..(m1 - m0) {
            let f = drift.evaluate(&y[j])?;
            for k in 0..d.dim() {
                d[k] = p[k] * d[k] + phi[k] * f[k];
            }
            next.push(linear[j + 1].checked_add(&d)?);
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: m0 });
        }
        let residual = sup_gap(&next, &y)?;
        report.iterations += 1;
        report.residuals.push(residual);
        y = next;
        last_residual = residual;
        if residual < tol {
            return Ok(y);
        }
    }
    Err(Error::NoConvergence { iterations: max_iter, residual: last_residual })
}

/// `‖Y(t, h)‖_α / ‖h‖_α` audit against `e^{T L}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariationalReport {
    pub max_ratio: f64,
    pub ratio_at_zero: f64,
    pub bound: f64,
    pub violated: bool,
}

pub fn variational_bound_report<S: Real>(
    bundle: &PathBundle<S>,
    spectrum: &SpectrumQ<S>,
    lip: f64,
) -> Result<VariationalReport> {
    if bundle.variational.is_empty() {
        return Err(Error::invalid("bundle", "no variational trajectories recorded"));
    }
    let mut max_ratio = 0.0f64;
    let mut ratio_at_zero = 0.0f64;
    for (h, ys) in bundle.directions.iter().zip(&bundle.variational) {
        let hn = spectrum.h_alpha_norm(h)?.to_f64_lossy();
        if hn == 0.0 {
            continue;
        }
        for (m, y) in ys.iter().enumerate() {
            let r = spectrum.h_alpha_norm(y)?.to_f64_lossy() / hn;
            if m == 0 {
                ratio_at_zero = ratio_at_zero.max(r);
            }
            max_ratio = max_ratio.max(r);
        }
    }
    let bound = (bundle.horizon().to_f64_lossy() * lip).exp();
    Ok(VariationalReport { max_ratio, ratio_at_zero, bound, violated: max_ratio > bound * 1.01 })
}

/// Final-time data of one trajectory, used by the estimators.
#[derive(Clone, Debug)]
pub(crate) struct PathSummary<S> {
    /// States at the requested steps, in request order.
    pub states: Vec<HVector<S>>,
    /// `bel[d][i]`: stochastic-integral sum for direction `d` up to step `i`.
    pub bel: Vec<Vec<S>>,
    pub crossings: usize,
}

/// Runs one trajectory and keeps only what the estimators need.
pub(crate) fn summarize_path<S: Real>(
    kernel: &StepKernel<S>,
    drift: &dyn Drift<S>,
    x0: &HVector<S>,
    noise: &NoiseRecord<S>,
    directions: &[HVector<S>],
    bel: Option<BelSettings>,
    record_steps: &[usize],
) -> Result<PathSummary<S>> {
    let mut states = vec![HVector::zeros(0); record_steps.len()];
    let mut weights = vec![vec![S::zero(); record_steps.len()]; directions.len()];
    let crossings = integrate(kernel, &DriftView::Plain(drift), x0, noise, directions, bel, &mut |s| {
        for (i, &r) in record_steps.iter().enumerate() {
            if r == s.m {
                states[i] = s.state.clone();
                for (d, w) in s.bel.iter().enumerate() {
                    weights[d][i] = *w;
                }
            }
        }
        Ok(())
    })?;
    Ok(PathSummary { states, bel: weights, crossings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::{DriftSpec, MembershipPolicy, ProjectionDrift, ZeroDrift};
    use approx::assert_relative_eq;

    fn spec(eig: &[f64], alpha: f64) -> SpectrumQ<f64> {
        SpectrumQ::new(eig.to_vec(), alpha).unwrap()
    }

    #[test]
    fn joint_increment_moments() {
        // Var η = λ(1-e^{-rΔ}), Var ΔW = λ^{2α}Δ, Cov = λ^{2α}(2/r)(1-e^{-rΔ/2}).
        let s = spec(&[0.7], 0.25);
        let dt = 0.3;
        let k = StepKernel::new(&s, dt, None).unwrap();
        let (l, r) = (0.7f64, 0.7f64.powf(-0.5));
        let la2 = 0.7f64.sqrt();
        let q = l * (1.0 - (-r * dt).exp());
        let c = la2 * 2.0 / r * (1.0 - (-r * dt / 2.0).exp());
        assert_relative_eq!(k.sd_eta[0].powi(2), q, max_relative = 1e-14);
        assert_relative_eq!(k.sd_eta[0] * k.dw_z1[0], c, max_relative = 1e-14);
        assert_relative_eq!(k.dw_z1[0].powi(2) + k.dw_z2[0].powi(2), la2 * dt, max_relative = 1e-14);
    }

    #[test]
    fn zero_drift_variational_is_semigroup() {
        let s = spec(&[1.0, 0.3, 0.05], 0.2);
        let h = HVector::from_f64(&[1.0, -2.0, 0.5]);
        let b = solve_exp_euler(
            &s,
            &ZeroDrift::new(3),
            &HVector::zeros(3),
            1.0,
            10,
            StreamId::new(1, "t", 0),
            std::slice::from_ref(&h),
        )
        .unwrap();
        for (t, y) in b.times.iter().zip(&b.variational[0]) {
            let e = s.apply_semigroup(*t, &h).unwrap();
            assert!((y - &e).norm() < 1e-14);
        }
        let r = variational_bound_report(&b, &s, 0.0).unwrap();
        assert_eq!(r.ratio_at_zero, 1.0);
        assert!(r.max_ratio <= 1.0 && !r.violated);
        assert_eq!(b.states[0], HVector::zeros(3));
    }

    #[test]
    fn coarsening_is_consistent_with_stepping() {
        let s = spec(&[1.0, 0.2], 0.0);
        let k = StepKernel::new(&s, 0.1, None).unwrap();
        let fine = Arc::new(NoiseRecord::sample(&k, 8, StreamId::new(3, "n", 0)).unwrap());
        let coarse = Arc::new(fine.coarsen(&s).unwrap());
        let x0 = HVector::from_f64(&[0.4, -1.0]);
        let z = ZeroDrift::new(2);
        let a = solve_exp_euler_with_noise(&s, &z, &x0, fine.clone(), &[]).unwrap();
        let b = solve_exp_euler_with_noise(&s, &z, &x0, coarse, &[]).unwrap();
        for m in 0..=4 {
            assert!((&a.states[2 * m] - &b.states[m]).norm() < 1e-14);
        }
        assert!(NoiseRecord::sample(&k, 3, StreamId::new(3, "n", 0)).unwrap().coarsen(&s).is_err());
    }

    #[test]
    fn picard_zero_drift_converges_immediately() {
        let s = spec(&[1.0, 0.5], 0.5);
        let k = StepKernel::new(&s, 0.05, None).unwrap();
        let noise = Arc::new(NoiseRecord::sample(&k, 20, StreamId::new(9, "n", 1)).unwrap());
        let x0 = HVector::from_f64(&[1.0, 1.0]);
        let p = solve_picard(&s, &ZeroDrift::new(2), &x0, noise.clone(), 1e-12, 50).unwrap();
        assert_eq!(p.picard.as_ref().unwrap().iterations, 1);
        let e = solve_exp_euler_with_noise(&s, &ZeroDrift::new(2), &x0, noise, &[]).unwrap();
        assert!(sup_gap(&p.states, &e.states).unwrap() < 1e-14);
    }

    #[test]
    fn picard_splits_when_iteration_budget_is_small() {
        let s = Arc::new(spec(&[1.0, 0.5, 0.25], 0.5));
        let d =
            ProjectionDrift::new(s.clone(), 0.5, vec![3.0, 2.0, 1.0], MembershipPolicy::Fixed(Membership::InHAlpha))
                .unwrap();
        let k = StepKernel::new(&s, 0.1, None).unwrap();
        let noise = Arc::new(NoiseRecord::sample(&k, 16, StreamId::new(2, "n", 0)).unwrap());
        let x0 = HVector::from_f64(&[1.0, 0.0, -1.0]);
        let full = solve_picard(s.as_ref(), &d, &x0, noise.clone(), 1e-12, 100).unwrap();
        let split = solve_picard(s.as_ref(), &d, &x0, noise, 1e-12, 4).unwrap();
        assert!(split.picard.as_ref().unwrap().splits > 0);
        assert!(sup_gap(&full.states, &split.states).unwrap() < 1e-10);
    }

    #[test]
    fn shifted_decomposition_is_pathwise_exact() {
        let s = Arc::new(SpectrumQ::<f64>::power_family(1.0, 2.0, 8, 0.25).unwrap());
        let d: DriftSpec<f64> =
            Arc::new(ProjectionDrift::new(s.clone(), 0.5, vec![0.7; 8], MembershipPolicy::default()).unwrap());
        let x = HVector::from_f64(&[1.0, -0.5, 0.2, 0.0, 0.1, 0.0, 0.0, 0.05]);
        let k = StepKernel::new(s.as_ref(), 0.01, None).unwrap();
        let noise = Arc::new(NoiseRecord::sample(&k, 100, StreamId::new(4, "n", 0)).unwrap());
        let xp = solve_exp_euler_with_noise(s.as_ref(), d.as_ref(), &x, noise.clone(), &[]).unwrap();
        let sd = ShiftedDrift::new(d, x.clone(), s.clone()).unwrap();
        let zp = solve_shifted(s.as_ref(), &sd, &HVector::zeros(8), noise, &[]).unwrap();
        assert!(decomposition_gap(s.as_ref(), &xp, &zp, &x).unwrap() < 1e-12);
    }

    #[test]
    fn missing_differential_is_reported() {
        use crate::drift::FnDrift;
        let s = spec(&[1.0], 0.5);
        let d = FnDrift::new("nodiff", 1, 0.0, |x: &HVector<f64>| x.scaled(0.0));
        let r = solve_exp_euler(&s, &d, &HVector::zeros(1), 1.0, 4, StreamId::new(0, "x", 0), &[HVector::basis(1, 0)]);
        assert_eq!(r.err(), Some(Error::MissingDifferential("nodiff".into())));
    }

    #[test]
    fn blow_up_is_reported() {
        use crate::drift::FnDrift;
        let s = spec(&[1.0], 0.5);
        let d = FnDrift::new("explode", 1, 0.0, |x: &HVector<f64>| HVector::new(vec![x[0].exp() * 1e300]));
        let r = solve_exp_euler(&s, &d, &HVector::from_f64(&[1.0]), 1.0, 4, StreamId::new(0, "x", 0), &[]);
        assert!(matches!(r, Err(Error::NonFiniteState { .. })));
    }

    #[test]
    fn columnar_output_has_one_row_per_entry() {
        let s = spec(&[1.0, 0.5], 0.5);
        let b = solve_exp_euler(
            &s,
            &ZeroDrift::new(2),
            &HVector::zeros(2),
            1.0,
            3,
            StreamId::new(0, "c", 0),
            &[HVector::basis(2, 0)],
        )
        .unwrap();
        let mut buf = Vec::new();
        b.write_columnar(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 4 * 2);
        assert!(text.starts_with("series,time,mode,value\nstate,0,0,0"));
    }
}
