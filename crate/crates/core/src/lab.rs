//! Monte Carlo estimators for the transition semigroup
//! `P(t)φ(x) = E[φ(X(t, x))]`, its gradient along `H_α`, and Lipschitz
//! moduli.
//!
//! Trajectory `i` of purpose `p` always uses the stream `(seed, p, i)`, and
//! per-trajectory results are reduced in index order with a fixed summation
//! tree, so every estimate is bit-identical for any worker count.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::{DriftSpec, LipschitzKind, Membership, MembershipPolicy};
use crate::engine::{summarize_path, BelSettings, BelWeighting, Fault, NoiseRecord, StepKernel};
use crate::error::{Error, Result};
use crate::quadrature::gauss_hermite_normal;
use crate::rng::StreamId;
use crate::scalar::Real;
use crate::spectral::SpectrumQ;
use crate::stats::mean_stderr;
use crate::vector::HVector;

/// Time grid, randomness and parallelism for a batch of trajectories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub steps: usize,
    pub seed: u64,
    pub workers: usize,
    #[serde(default)]
    pub bel_weighting: BelWeighting,
    #[doc(hidden)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<Fault>,
}

impl SimConfig {
    pub fn new(horizon: f64, steps: usize, seed: u64) -> Self {
        Self { horizon, steps, seed, workers: 1, bel_weighting: BelWeighting::default(), fault: None }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid("horizon", format!("must be positive and finite, got {}", self.horizon)));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps", "must be at least 1"));
        }
        if self.workers == 0 {
            return Err(Error::invalid("workers", "must be at least 1"));
        }
        Ok(())
    }
}

type ObsFn<S> = dyn Fn(&HVector<S>) -> f64 + Send + Sync;

/// Bounded observable `φ` with a declared `‖φ‖_∞`.
#[derive(Clone)]
pub struct Observable<S> {
    kind: String,
    sup_bound: f64,
    modes_used: Option<usize>,
    f: Arc<ObsFn<S>>,
}

impl<S> fmt::Debug for Observable<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Observable")
            .field("kind", &self.kind)
            .field("sup_bound", &self.sup_bound)
            .field("modes_used", &self.modes_used)
            .finish()
    }
}

impl<S: Real> Observable<S> {
    /// `modes_used`: `φ` depends only on the first that many coordinates.
    pub fn custom(
        kind: impl Into<String>,
        sup_bound: f64,
        modes_used: Option<usize>,
        f: impl Fn(&HVector<S>) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(sup_bound >= 0.0 && sup_bound.is_finite()) {
            return Err(Error::invalid("sup_bound", "must be finite and nonnegative"));
        }
        Ok(Self { kind: kind.into(), sup_bound, modes_used, f: Arc::new(f) })
    }

    pub fn constant(c: f64) -> Self {
        Self { kind: format!("constant({c})"), sup_bound: c.abs(), modes_used: Some(0), f: Arc::new(move |_| c) }
    }

    /// `sin(scale · v_k)`.
    pub fn sin_mode(k: usize, scale: f64) -> Self {
        Self {
            kind: format!("sin_mode({k},{scale})"),
            sup_bound: 1.0,
            modes_used: Some(k + 1),
            f: Arc::new(move |v| (scale * v[k].to_f64_lossy()).sin()),
        }
    }

    /// `cos(scale · v_k)`.
    pub fn cos_mode(k: usize, scale: f64) -> Self {
        Self {
            kind: format!("cos_mode({k},{scale})"),
            sup_bound: 1.0,
            modes_used: Some(k + 1),
            f: Arc::new(move |v| (scale * v[k].to_f64_lossy()).cos()),
        }
    }

    /// `tanh(Σ_k w_k v_k)`.
    pub fn tanh_linear(weights: Vec<f64>) -> Self {
        let n = weights.len();
        Self {
            kind: format!("tanh_linear({n})"),
            sup_bound: 1.0,
            modes_used: Some(n),
            f: Arc::new(move |v| weights.iter().enumerate().map(|(k, w)| w * v[k].to_f64_lossy()).sum::<f64>().tanh()),
        }
    }

    /// Smoothstep ramp of width `ramp` centred at `threshold`: approximates
    /// `1{v_k > threshold}`.
    pub fn smoothed_indicator(k: usize, threshold: f64, ramp: f64) -> Result<Self> {
        if !(ramp > 0.0) {
            return Err(Error::invalid("ramp", "must be positive"));
        }
        Ok(Self {
            kind: format!("smoothed_indicator({k},{threshold},{ramp})"),
            sup_bound: 1.0,
            modes_used: Some(k + 1),
            f: Arc::new(move |v| {
                let s = ((v[k].to_f64_lossy() - threshold) / ramp + 0.5).clamp(0.0, 1.0);
                s * s * (3.0 - 2.0 * s)
            }),
        })
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn sup_bound(&self) -> f64 {
        self.sup_bound
    }

    pub fn modes_used(&self) -> Option<usize> {
        self.modes_used
    }

    /// `φ(x)` with the sup-norm audit.
    pub fn evaluate(&self, x: &HVector<S>) -> Result<f64> {
        if let Some(n) = self.modes_used {
            if n > x.dim() {
                return Err(Error::DimMismatch { expected: n, found: x.dim() });
            }
        }
        let v = (self.f)(x);
        if !v.is_finite() || v.abs() > self.sup_bound * (1.0 + 1e-12) {
            return Err(Error::ObservableUnbounded { kind: self.kind.clone(), value: v, bound: self.sup_bound });
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SemigroupEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub t: f64,
    pub x: Vec<f64>,
    /// Stream of trajectory 0; trajectory `i` uses `seed.with_index(i)`.
    pub seed: StreamId,
    /// Branch changes of a branching drift, summed over trajectories.
    pub branch_crossings: usize,
}

impl SemigroupEstimate {
    fn from_samples(xs: &[f64], t: f64, x: Vec<f64>, seed: StreamId, branch_crossings: usize) -> Self {
        let (value, stderr) = mean_stderr(xs);
        Self { value, stderr, n_samples: xs.len(), t, x, seed, branch_crossings }
    }

    /// `|a - b| ≤ k · √(se_a² + se_b²)`.
    pub fn agrees_with(&self, other: &Self, k: f64) -> bool {
        (self.value - other.value).abs() <= k * self.stderr.hypot(other.stderr)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FdReport {
    pub eps: Vec<f64>,
    pub shared_noise: bool,
    /// Difference quotients, one per `ε`.
    pub estimates: Vec<SemigroupEstimate>,
    /// Linear extrapolation to `ε = 0` from consecutive ladder entries.
    pub richardson: Vec<f64>,
    /// A change in slope between consecutive `ε` exceeds half the finer
    /// slope and is statistically significant.
    pub curvature_flag: bool,
}

/// Which bound a probe row is compared against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundFamily {
    /// `e^{L T}/√t` per `‖h‖_α` with a global `L`.
    UniformHAlpha,
    /// Same shape with `L(x)` at the base point.
    PointDependent,
    /// `C/√t` per `‖h‖` with `C` assembled from measured spectral data.
    XLipschitzExplicit,
    /// Per `‖h‖`; only finiteness is asserted.
    XLipschitzImplicit,
    /// `max(1, ‖Q^{1/2}‖) e^{L T}/√t` per `‖h‖_{1/2}`.
    HalfGradient,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeRow {
    pub t: f64,
    pub direction: usize,
    pub h_alpha_norm: f64,
    pub x_norm: f64,
    /// Norm used for `ratio`.
    pub h_norm: f64,
    /// `P(t)φ(x+h) - P(t)φ(x)`.
    pub delta: f64,
    pub stderr: f64,
    /// `|delta| / (‖φ‖_∞ · h_norm)`.
    pub ratio: f64,
    pub ratio_stderr: f64,
    pub bound: Option<f64>,
    /// `4 · ratio_stderr / bound`.
    pub slack_fraction: Option<f64>,
    pub violated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LipschitzReport {
    pub family: BoundFamily,
    pub lipschitz_constant: f64,
    pub sup_bound: f64,
    pub n_samples: usize,
    pub rows: Vec<ProbeRow>,
}

impl LipschitzReport {
    pub fn any_violation(&self) -> bool {
        self.rows.iter().any(|r| r.violated)
    }

    pub fn max_slack_fraction(&self) -> f64 {
        self.rows.iter().filter_map(|r| r.slack_fraction).fold(0.0, f64::max)
    }

    pub const CSV_HEADER: &'static str = "t,direction,h_alpha_norm,estimate,stderr,bound,flag";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let bound = r.bound.map(|b| b.to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.t, r.direction, r.h_alpha_norm, r.delta, r.stderr, bound, r.violated as u8
            ));
        }
        s
    }

    /// One JSON object per row.
    pub fn to_json_lines(&self) -> String {
        self.rows.iter().map(|r| serde_json::to_string(r).expect("serializable row") + "\n").collect()
    }
}

/// Statistical slack, in standard errors, used by every audit.
pub const AUDIT_SIGMAS: f64 = 4.0;

/// Estimators for one `(spectrum, drift, config)` triple.
pub struct Lab<S: Real> {
    spectrum: Arc<SpectrumQ<S>>,
    drift: DriftSpec<S>,
    cfg: SimConfig,
    kernel: StepKernel<S>,
    pool: Arc<rayon::ThreadPool>,
    direction_policy: MembershipPolicy,
}

impl<S: Real> Lab<S> {
    pub fn new(spectrum: Arc<SpectrumQ<S>>, drift: DriftSpec<S>, cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        if drift.dim() != spectrum.dim() {
            return Err(Error::DimMismatch { expected: spectrum.dim(), found: drift.dim() });
        }
        let kernel = StepKernel::new(spectrum.as_ref(), S::lit(cfg.dt()), cfg.fault)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::invalid("workers", e.to_string()))?;
        Ok(Self { spectrum, drift, cfg, kernel, pool: Arc::new(pool), direction_policy: MembershipPolicy::default() })
    }

    /// Policy used to accept probe directions.
    pub fn with_direction_policy(mut self, policy: MembershipPolicy) -> Self {
        self.direction_policy = policy;
        self
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn spectrum(&self) -> &Arc<SpectrumQ<S>> {
        &self.spectrum
    }

    pub fn drift(&self) -> &DriftSpec<S> {
        &self.drift
    }

    /// Grid index of `t`.
    pub fn step_of(&self, t: f64) -> Result<usize> {
        let dt = self.cfg.dt();
        let off = Error::TimeOffGrid { t, dt, horizon: self.cfg.horizon };
        if !(t > 0.0) || t > self.cfg.horizon * (1.0 + 1e-12) {
            return Err(off);
        }
        let m = (t / dt).round();
        if (m * dt - t).abs() > 1e-9 * t.max(1.0) || m < 1.0 {
            return Err(off);
        }
        Ok(m as usize)
    }

    fn steps_of(&self, times: &[f64]) -> Result<Vec<usize>> {
        if times.is_empty() {
            return Err(Error::invalid("times", "at least one time is required"));
        }
        times.iter().map(|&t| self.step_of(t)).collect()
    }

    /// `e^{L T}/√t` with `L` the drift's constant at `x`.
    pub fn modulus_bound(&self, t: f64, x: &HVector<S>) -> f64 {
        (self.drift.lip_alpha(x).to_f64_lossy() * self.cfg.horizon).exp() / t.sqrt()
    }

    /// Runs `f` on the noise of trajectories `0..n` of `purpose` in parallel;
    /// results come back in index order.
    fn map_paths<T, F>(&self, purpose: &str, n: usize, steps: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&NoiseRecord<S>) -> Result<T> + Sync,
    {
        let base = StreamId::new(self.cfg.seed, purpose, 0);
        self.pool.install(|| {
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let noise = NoiseRecord::sample(&self.kernel, steps, base.with_index(i as u64))?;
                    f(&noise)
                })
                .collect()
        })
    }

    fn check_samples(n: usize) -> Result<()> {
        if n < 2 {
            return Err(Error::invalid("n_samples", "at least 2 samples are required"));
        }
        Ok(())
    }

    fn bel_settings(&self) -> BelSettings {
        BelSettings { weighting: self.cfg.bel_weighting, fault: self.cfg.fault }
    }

    /// `P(t)φ(x)` at several grid times from the same trajectories.
    pub fn estimate_semigroup_times(
        &self,
        phi: &Observable<S>,
        times: &[f64],
        x: &HVector<S>,
        n_samples: usize,
    ) -> Result<Vec<SemigroupEstimate>> {
        Self::check_samples(n_samples)?;
        self.spectrum.check_dim(x)?;
        let steps = self.steps_of(times)?;
        let last = *steps.iter().max().expect("nonempty");
        let rows = self.map_paths("semigroup", n_samples, last, |noise| {
            let s = summarize_path(&self.kernel, self.drift.as_ref(), x, noise, &[], None, &steps)?;
            let vals = s.states.iter().map(|st| phi.evaluate(st)).collect::<Result<Vec<_>>>()?;
            Ok((vals, s.crossings))
        })?;
        let crossings = rows.iter().map(|r| r.1).sum();
        let seed = StreamId::new(self.cfg.seed, "semigroup", 0);
        Ok(times
            .iter()
            .enumerate()
            .map(|(j, &t)| {
                let col: Vec<f64> = rows.iter().map(|r| r.0[j]).collect();
                SemigroupEstimate::from_samples(&col, t, x.to_f64(), seed, crossings)
            })
            .collect())
    }

    pub fn estimate_semigroup(
        &self,
        phi: &Observable<S>,
        t: f64,
        x: &HVector<S>,
        n_samples: usize,
    ) -> Result<SemigroupEstimate> {
        Ok(self.estimate_semigroup_times(phi, &[t], x, n_samples)?.remove(0))
    }

    /// Gradient pairings `⟨D_α P(t)φ(x), h⟩_α` for several directions and
    /// times from the same trajectories; indexed `[direction][time]`.
    pub fn bel_gradient_batch(
        &self,
        phi: &Observable<S>,
        times: &[f64],
        x: &HVector<S>,
        directions: &[HVector<S>],
        n_samples: usize,
    ) -> Result<Vec<Vec<SemigroupEstimate>>> {
        Self::check_samples(n_samples)?;
        self.spectrum.check_dim(x)?;
        if !self.drift.has_differential() {
            return Err(Error::MissingDifferential(self.drift.label().to_string()));
        }
        let dt = self.cfg.dt();
        for &t in times {
            if t < dt * (1.0 - 1e-9) {
                return Err(Error::DegenerateTime { t, dt });
            }
        }
        let steps = self.steps_of(times)?;
        let last = *steps.iter().max().expect("nonempty");
        let bel = Some(self.bel_settings());
        let rows = self.map_paths("bel", n_samples, last, |noise| {
            let s = summarize_path(&self.kernel, self.drift.as_ref(), x, noise, directions, bel, &steps)?;
            let mut out = Vec::with_capacity(directions.len() * times.len());
            for w in &s.bel {
                for (j, st) in s.states.iter().enumerate() {
                    out.push(phi.evaluate(st)? * w[j].to_f64_lossy() / times[j]);
                }
            }
            Ok((out, s.crossings))
        })?;
        let crossings = rows.iter().map(|r| r.1).sum();
        let seed = StreamId::new(self.cfg.seed, "bel", 0);
        Ok((0..directions.len())
            .map(|d| {
                times
                    .iter()
                    .enumerate()
                    .map(|(j, &t)| {
                        let col: Vec<f64> = rows.iter().map(|r| r.0[d * times.len() + j]).collect();
                        SemigroupEstimate::from_samples(&col, t, x.to_f64(), seed, crossings)
                    })
                    .collect()
            })
            .collect())
    }

    pub fn bel_gradient(
        &self,
        phi: &Observable<S>,
        t: f64,
        x: &HVector<S>,
        h: &HVector<S>,
        n_samples: usize,
    ) -> Result<SemigroupEstimate> {
        Ok(self.bel_gradient_batch(phi, &[t], x, std::slice::from_ref(h), n_samples)?.remove(0).remove(0))
    }

    /// Difference quotients `(P(t)φ(x+εh) - P(t)φ(x))/ε` along a decreasing
    /// ladder. With `shared_noise` both points replay the same trajectory.
    #[allow(clippy::too_many_arguments)]
    pub fn fd_gradient(
        &self,
        phi: &Observable<S>,
        t: f64,
        x: &HVector<S>,
        h: &HVector<S>,
        eps_ladder: &[f64],
        n_samples: usize,
        shared_noise: bool,
    ) -> Result<FdReport> {
        Self::check_samples(n_samples)?;
        self.spectrum.check_dim(x)?;
        self.spectrum.check_dim(h)?;
        if eps_ladder.is_empty()
            || eps_ladder.iter().any(|e| !(*e > 0.0))
            || eps_ladder.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(Error::invalid("eps_ladder", "must be positive and strictly decreasing"));
        }
        let m = self.step_of(t)?;
        let shifted: Vec<HVector<S>> = eps_ladder
            .iter()
            .map(|&e| {
                let mut y = x.clone();
                y.axpy(S::lit(e), h).map(|_| y)
            })
            .collect::<Result<_>>()?;
        let drift = self.drift.as_ref();
        let run = |start: &HVector<S>, noise: &NoiseRecord<S>| -> Result<(f64, usize)> {
            let s = summarize_path(&self.kernel, drift, start, noise, &[], None, &[m])?;
            Ok((phi.evaluate(&s.states[0])?, s.crossings))
        };
        let rows: Vec<(Vec<f64>, usize)> = if shared_noise {
            self.map_paths("fd", n_samples, m, |noise| {
                let (base, mut c) = run(x, noise)?;
                let mut q = Vec::with_capacity(shifted.len());
                for (y, e) in shifted.iter().zip(eps_ladder) {
                    let (v, ci) = run(y, noise)?;
                    c += ci;
                    q.push((v - base) / e);
                }
                Ok((q, c))
            })?
        } else {
            let base = self.map_paths("fd", n_samples, m, |noise| run(x, noise))?;
            let mut cols = vec![Vec::new(); n_samples];
            let mut crossings: Vec<usize> = base.iter().map(|b| b.1).collect();
            for (j, (y, e)) in shifted.iter().zip(eps_ladder).enumerate() {
                let vals = self.map_paths(&format!("fd-shift-{j}"), n_samples, m, |noise| run(y, noise))?;
                for (i, (v, c)) in vals.into_iter().enumerate() {
                    cols[i].push((v - base[i].0) / e);
                    crossings[i] += c;
                }
            }
            cols.into_iter().zip(crossings).collect()
        };
        let crossings = rows.iter().map(|r| r.1).sum();
        let seed = StreamId::new(self.cfg.seed, "fd", 0);
        let estimates: Vec<SemigroupEstimate> = (0..eps_ladder.len())
            .map(|j| {
                let col: Vec<f64> = rows.iter().map(|r| r.0[j]).collect();
                SemigroupEstimate::from_samples(&col, t, x.to_f64(), seed, crossings)
            })
            .collect();
        let mut richardson = Vec::new();
        let mut curvature_flag = false;
        for j in 0..eps_ladder.len().saturating_sub(1) {
            let (e0, e1) = (eps_ladder[j], eps_ladder[j + 1]);
            let (d0, d1) = (estimates[j].value, estimates[j + 1].value);
            richardson.push(d1 + (d1 - d0) * e1 / (e0 - e1));
            let diffs: Vec<f64> = rows.iter().map(|r| r.0[j] - r.0[j + 1]).collect();
            let (dm, dse) = mean_stderr(&diffs);
            if dm.abs() > 0.5 * d1.abs() && dm.abs() > AUDIT_SIGMAS * dse {
                curvature_flag = true;
            }
        }
        Ok(FdReport { eps: eps_ladder.to_vec(), shared_noise, estimates, richardson, curvature_flag })
    }

    /// Two-point differences `P(t)φ(x+h_d) - P(t)φ(x)` with common random
    /// numbers; `[time][direction]` of `(mean, stderr)`.
    fn probe_deltas(
        &self,
        phi: &Observable<S>,
        times: &[f64],
        x: &HVector<S>,
        directions: &[HVector<S>],
        n_samples: usize,
    ) -> Result<Vec<Vec<(f64, f64)>>> {
        Self::check_samples(n_samples)?;
        self.spectrum.check_dim(x)?;
        let steps = self.steps_of(times)?;
        let last = *steps.iter().max().expect("nonempty");
        let starts: Vec<HVector<S>> = directions.iter().map(|h| x.checked_add(h)).collect::<Result<_>>()?;
        let drift = self.drift.as_ref();
        let rows = self.map_paths("probe", n_samples, last, |noise| {
            let base = summarize_path(&self.kernel, drift, x, noise, &[], None, &steps)?;
            let b: Vec<f64> = base.states.iter().map(|s| phi.evaluate(s)).collect::<Result<_>>()?;
            let mut out = vec![0.0; times.len() * directions.len()];
            for (d, y) in starts.iter().enumerate() {
                let p = summarize_path(&self.kernel, drift, y, noise, &[], None, &steps)?;
                for (j, s) in p.states.iter().enumerate() {
                    out[j * directions.len() + d] = phi.evaluate(s)? - b[j];
                }
            }
            Ok(out)
        })?;
        Ok((0..times.len())
            .map(|j| {
                (0..directions.len())
                    .map(|d| {
                        let col: Vec<f64> = rows.iter().map(|r| r[j * directions.len() + d]).collect();
                        mean_stderr(&col)
                    })
                    .collect()
            })
            .collect())
    }

    fn accept_directions(&self, directions: &[HVector<S>]) -> Result<()> {
        for (i, h) in directions.iter().enumerate() {
            self.spectrum.check_dim(h)?;
            if self.direction_policy.is_heuristic() && h.dim() < 2 {
                continue;
            }
            if self.direction_policy.decide(self.spectrum.as_ref(), h)? == Membership::NotInHAlpha {
                return Err(Error::DirectionNotInHAlpha(i));
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        &self,
        family: BoundFamily,
        lip: f64,
        phi: &Observable<S>,
        times: &[f64],
        directions: &[HVector<S>],
        deltas: Vec<Vec<(f64, f64)>>,
        n_samples: usize,
        norm_of: impl Fn(&HVector<S>) -> Result<f64>,
        bound_at: impl Fn(f64) -> Option<f64>,
    ) -> Result<LipschitzReport> {
        let sup = phi.sup_bound();
        let mut rows = Vec::new();
        for (j, &t) in times.iter().enumerate() {
            for (d, h) in directions.iter().enumerate() {
                let (delta, se) = deltas[j][d];
                let h_norm = norm_of(h)?;
                let scale = sup * h_norm;
                let (ratio, ratio_se) = if scale > 0.0 { (delta.abs() / scale, se / scale) } else { (0.0, 0.0) };
                let bound = bound_at(t);
                let violated = bound.is_some_and(|b| ratio - AUDIT_SIGMAS * ratio_se > b);
                rows.push(ProbeRow {
                    t,
                    direction: d,
                    h_alpha_norm: self.spectrum.h_alpha_norm(h)?.to_f64_lossy(),
                    x_norm: h.norm().to_f64_lossy(),
                    h_norm,
                    delta,
                    stderr: se,
                    ratio,
                    ratio_stderr: ratio_se,
                    bound,
                    slack_fraction: bound.map(|b| AUDIT_SIGMAS * ratio_se / b),
                    violated,
                });
            }
        }
        Ok(LipschitzReport { family, lipschitz_constant: lip, sup_bound: sup, n_samples, rows })
    }

    /// Audit of `|P(t)φ(x+h) - P(t)φ(x)| ≤ e^{L T}/√t ‖φ‖_∞ ‖h‖_α`.
    pub fn lipschitz_probe(
        &self,
        phi: &Observable<S>,
        times: &[f64],
        x: &HVector<S>,
        directions: &[HVector<S>],
        n_samples: usize,
    ) -> Result<LipschitzReport> {
        self.accept_directions(directions)?;
        let deltas = self.probe_deltas(phi, times, x, directions, n_samples)?;
        let lip = self.drift.lip_alpha(x).to_f64_lossy();
        let family = match self.drift.lipschitz_kind() {
            LipschitzKind::Global => BoundFamily::UniformHAlpha,
            LipschitzKind::PointDependent => BoundFamily::PointDependent,
        };
        let horizon = self.cfg.horizon;
        let spectrum = self.spectrum.clone();
        self.assemble(
            family,
            lip,
            phi,
            times,
            directions,
            deltas,
            n_samples,
            |h| Ok(spectrum.h_alpha_norm(h)?.to_f64_lossy()),
            |t| Some((lip * horizon).exp() / t.sqrt()),
        )
    }

    /// Modulus along directions of `X` for drifts with `Q^{-α}F` Lipschitz.
    ///
    /// For `α < 1/2` directions are normalized by `‖h‖`; an explicit constant
    /// `C/√t` is asserted only for `α < 1/4`, with
    /// `C² = 4 max(b_α, T L² e^{2LT})`, `L = ‖Q^α‖ K` and
    /// `b_α = max_k ∫_0^T ‖Q^{-α} e^{sA} e_k‖² ds` computed from the spectrum.
    /// At `α = 1/2` directions are normalized by `‖h‖_{1/2}` and compared with
    /// `max(1, ‖Q^{1/2}‖) e^{L T}/√t`.
    pub fn lipschitz_probe_x_directions(
        &self,
        phi: &Observable<S>,
        times: &[f64],
        x: &HVector<S>,
        directions: &[HVector<S>],
        n_samples: usize,
    ) -> Result<LipschitzReport> {
        let k = self
            .drift
            .q_inv_alpha_lipschitz()
            .ok_or_else(|| Error::invalid("drift", "no Lipschitz constant declared for Q^{-alpha} F"))?
            .to_f64_lossy();
        for h in directions {
            self.spectrum.check_dim(h)?;
        }
        let alpha = self.spectrum.alpha().to_f64_lossy();
        let lam1 = self.spectrum.eigenvalues()[0].to_f64_lossy();
        let lip = lam1.powf(alpha) * k;
        let horizon = self.cfg.horizon;
        let deltas = self.probe_deltas(phi, times, x, directions, n_samples)?;
        let spectrum = self.spectrum.clone();
        if alpha >= 0.5 {
            let c = lam1.sqrt().max(1.0) * (lip * horizon).exp();
            return self.assemble(
                BoundFamily::HalfGradient,
                lip,
                phi,
                times,
                directions,
                deltas,
                n_samples,
                |h| Ok(spectrum.h_alpha_norm(h)?.to_f64_lossy()),
                |t| Some(c / t.sqrt()),
            );
        }
        let x_norm = |h: &HVector<S>| Ok(h.norm().to_f64_lossy());
        if alpha < 0.25 {
            let b = self.smoothing_integral(horizon);
            let c = (4.0 * b.max(horizon * lip * lip * (2.0 * lip * horizon).exp())).sqrt();
            self.assemble(
                BoundFamily::XLipschitzExplicit,
                lip,
                phi,
                times,
                directions,
                deltas,
                n_samples,
                x_norm,
                |t| Some(c / t.sqrt()),
            )
        } else {
            self.assemble(
                BoundFamily::XLipschitzImplicit,
                lip,
                phi,
                times,
                directions,
                deltas,
                n_samples,
                x_norm,
                |_| None,
            )
        }
    }

    /// `max_k λ_k^{-2α} (1 - e^{-T r_k}) / r_k`.
    fn smoothing_integral(&self, horizon: f64) -> f64 {
        let s = &self.spectrum;
        s.h_alpha_weights()
            .iter()
            .zip(s.rates())
            .map(|(&w, &r)| {
                let r = r.to_f64_lossy();
                w.to_f64_lossy() * -(-horizon * r).exp_m1() / r
            })
            .fold(0.0, f64::max)
    }
}

/// Gaussian expectation `E[φ(e^{-t/2} x + Q_t^{1/2} Z)]` for `F = 0`,
/// `α = 1/2`, by tensor Gauss–Hermite quadrature over the first
/// `quadrature_modes` coordinates.
pub fn mehler_oracle<S: Real>(
    spectrum: &SpectrumQ<S>,
    phi: &Observable<S>,
    t: f64,
    x: &HVector<S>,
    quadrature_modes: usize,
    quad_points: usize,
) -> Result<f64> {
    mehler_oracle_capped(spectrum, phi, t, x, quadrature_modes, quad_points, MEHLER_MODE_CAP)
}

pub const MEHLER_MODE_CAP: usize = 3;

pub fn mehler_oracle_capped<S: Real>(
    spectrum: &SpectrumQ<S>,
    phi: &Observable<S>,
    t: f64,
    x: &HVector<S>,
    quadrature_modes: usize,
    quad_points: usize,
    cap: usize,
) -> Result<f64> {
    let alpha = spectrum.alpha().to_f64_lossy();
    if alpha != 0.5 {
        return Err(Error::AlphaNotHalf(alpha));
    }
    spectrum.check_dim(x)?;
    if quadrature_modes > cap {
        return Err(Error::TooManyModes { requested: quadrature_modes, available: cap });
    }
    if quadrature_modes > spectrum.dim() {
        return Err(Error::TooManyModes { requested: quadrature_modes, available: spectrum.dim() });
    }
    match phi.modes_used() {
        Some(n) if n <= quadrature_modes => {}
        _ => {
            return Err(Error::invalid(
                "quadrature_modes",
                format!("observable `{}` depends on more than {quadrature_modes} modes", phi.kind()),
            ))
        }
    }
    if !(t >= 0.0) || quad_points == 0 {
        return Err(Error::invalid("t", "time must be nonnegative and quad_points positive"));
    }
    let decay = (-t / 2.0).exp();
    let mean: Vec<f64> = x.coeffs().iter().map(|v| decay * v.to_f64_lossy()).collect();
    let sd: Vec<f64> = spectrum.eigenvalues().iter().map(|l| (l.to_f64_lossy() * -(-t).exp_m1()).sqrt()).collect();
    let (nodes, weights) = gauss_hermite_normal(quad_points);
    let mut idx = vec![0usize; quadrature_modes];
    let mut total = 0.0;
    let mut point = mean.clone();
    loop {
        let mut w = 1.0;
        for (k, &i) in idx.iter().enumerate() {
            point[k] = mean[k] + sd[k] * nodes[i];
            w *= weights[i];
        }
        let v = HVector::new(point.iter().map(|&p| S::lit(p)).collect());
        total += w * phi.evaluate(&v)?;
        let mut k = 0;
        loop {
            if k == quadrature_modes {
                return Ok(total);
            }
            idx[k] += 1;
            if idx[k] < quad_points {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}
