//! Turns a validated config into simulation objects.

use std::sync::Arc;

use spde_core::catalog::smooth_directions;
use spde_core::drift::{
    CahnHilliardDrift, CompositionLeftDrift, CompositionRightDrift, DriftSpec, FiniteRankDrift, GradientDrift,
    LogCoshPotential, MembershipPolicy, Potential, ProjectionDrift, QuadraticPotential, XiTanhProfile, ZeroDrift,
};
use spde_core::lab::Observable;
use spde_core::rng::StreamId;
use spde_core::{GridFunction, HVector, KernelSpec, SpectralFrame, SpectrumQ};

use crate::config::{
    ConfigError, DirectionSet, DriftConfig, ExperimentConfig, ObservableConfig, PotentialKind, ScalarFn,
};

type Result<T> = std::result::Result<T, ConfigError>;

/// Everything a run needs, built before any sampling starts.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub spectrum: Arc<SpectrumQ<f64>>,
    pub frame: Option<Arc<SpectralFrame>>,
    pub drift: DriftSpec<f64>,
    pub x0: HVector<f64>,
    pub observable: Observable<f64>,
    /// Resolved directions per probe; empty for probes without directions.
    pub directions: Vec<Vec<HVector<f64>>>,
}

fn core_err(field: &str) -> impl Fn(spde_core::Error) -> ConfigError + '_ {
    move |e| ConfigError::new(field, e.to_string())
}

impl Experiment {
    pub fn build(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let n = config.modes()?;
        let alpha = config.model.alpha;
        let (spectrum, frame) = build_spectrum(&config, n)?;
        let drift = build_drift(&config, &spectrum, frame.as_ref(), n)?;
        let x0 = build_start(&config, frame.as_ref(), n)?;
        let observable = match &config.observable {
            ObservableConfig::Sin { mode, scale } => Observable::sin_mode(mode - 1, *scale),
            ObservableConfig::Cos { mode, scale } => Observable::cos_mode(mode - 1, *scale),
            ObservableConfig::TanhLinear { weights } => Observable::tanh_linear(weights.clone()),
            ObservableConfig::Indicator { mode, threshold, ramp } => {
                Observable::smoothed_indicator(mode - 1, *threshold, *ramp).map_err(core_err("observable.ramp"))?
            }
            ObservableConfig::Constant { value } => Observable::constant(*value),
        };
        let directions = config
            .probes
            .iter()
            .enumerate()
            .map(|(i, p)| {
                use crate::config::ProbeConfig::*;
                match p {
                    Bel { directions, .. }
                    | Fd { directions, .. }
                    | Modulus { directions, .. }
                    | ModulusX { directions, .. } => resolve_directions(&config, &spectrum, i, directions, n),
                    _ => Ok(Vec::new()),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        debug_assert_eq!(spectrum.alpha(), alpha);
        Ok(Self { config, spectrum, frame, drift, x0, observable, directions })
    }
}

type SpectrumAndFrame = (Arc<SpectrumQ<f64>>, Option<Arc<SpectralFrame>>);

fn build_spectrum(config: &ExperimentConfig, n: usize) -> Result<SpectrumAndFrame> {
    let alpha = config.model.alpha;
    let s = &config.spectrum;
    if let Some(list) = &s.eigenvalues {
        let sp = SpectrumQ::new(list[..n].to_vec(), alpha).map_err(core_err("spectrum.eigenvalues"))?;
        return Ok((Arc::new(sp), None));
    }
    if let Some(p) = &s.power {
        let sp = SpectrumQ::power_family(p.c, p.p, n, alpha).map_err(core_err("spectrum.power"))?;
        return Ok((Arc::new(sp), None));
    }
    let name = s.frame.as_deref().expect("validated");
    let fc = &config.frames[name];
    let field = format!("frames.{name}");
    let kernel = match fc.kernel.as_str() {
        "tabulated" => {
            let path = fc.table.as_ref().expect("validated");
            let text = std::fs::read_to_string(path).map_err(|e| {
                ConfigError::new(format!("{field}.table"), format!("cannot read {}: {e}", path.display()))
            })?;
            KernelSpec::parse_tabulated(&text).map_err(core_err(&format!("{field}.table")))?
        }
        _ => KernelSpec::Wiener,
    };
    let frame =
        SpectralFrame::build(&kernel, fc.grid, n, alpha).map_err(|e| ConfigError::new(field.clone(), e.to_string()))?;
    Ok((Arc::new(frame.spectrum().clone()), Some(Arc::new(frame))))
}

fn broadcast(v: &[f64], n: usize, decay: f64) -> Vec<f64> {
    if v.len() == n {
        v.to_vec()
    } else {
        (1..=n).map(|k| v[0] * (k as f64).powf(-decay)).collect()
    }
}

fn potential(kind: PotentialKind, weights: Vec<f64>) -> Result<Arc<dyn Potential<f64>>> {
    Ok(match kind {
        PotentialKind::Quadratic => Arc::new(QuadraticPotential::new(weights).map_err(core_err("drift.weights"))?),
        PotentialKind::LogCosh => Arc::new(LogCoshPotential::new(weights).map_err(core_err("drift.weights"))?),
    })
}

/// Grid samples of `g` and a Lipschitz constant of `g'` when one exists.
fn scalar_fn(g: &ScalarFn, grid: usize) -> Result<(GridFunction, Option<f64>)> {
    if let Some(c) = &g.polynomial {
        let coeffs = c.clone();
        let f = GridFunction::from_fn(grid, move |y| coeffs.iter().rev().fold(0.0, |acc, a| acc * y + a))
            .map_err(core_err("drift.g"))?;
        let lip = match c.len() {
            0..=2 => Some(0.0),
            3 => Some(2.0 * c[2].abs()),
            _ => None,
        };
        return Ok((f, lip));
    }
    let s = g.sine.expect("validated");
    let f = GridFunction::from_fn(grid, |y| s.amplitude * (s.frequency * y).sin()).map_err(core_err("drift.g"))?;
    Ok((f, Some(s.amplitude.abs() * s.frequency * s.frequency)))
}

fn build_drift(
    config: &ExperimentConfig,
    spectrum: &Arc<SpectrumQ<f64>>,
    frame: Option<&Arc<SpectralFrame>>,
    n: usize,
) -> Result<DriftSpec<f64>> {
    let policy = MembershipPolicy::default();
    let e = core_err("drift");
    Ok(match &config.drift {
        DriftConfig::Zero {} => Arc::new(ZeroDrift::new(n)),
        DriftConfig::Projection { beta, pi } => {
            Arc::new(ProjectionDrift::new(spectrum.clone(), *beta, broadcast(pi, n, 0.0), policy).map_err(e)?)
        }
        DriftConfig::Gradient { potential: kind, weights, decay } => {
            Arc::new(GradientDrift::new(spectrum.clone(), potential(*kind, broadcast(weights, n, *decay))?).map_err(e)?)
        }
        DriftConfig::CahnHilliard { potential: kind, weights, decay } => {
            let half = Arc::new(spectrum.with_alpha(0.5).map_err(&e)?);
            let inner =
                Arc::new(GradientDrift::new(half, potential(*kind, broadcast(weights, n, *decay))?).map_err(&e)?);
            Arc::new(CahnHilliardDrift::new(spectrum.clone(), inner).map_err(e)?)
        }
        DriftConfig::CompositionRight { g } => {
            let frame = frame.expect("validated").clone();
            let (g, _) = scalar_fn(g, frame.grid_size())?;
            Arc::new(CompositionRightDrift::new(frame, g, policy).map_err(e)?)
        }
        DriftConfig::CompositionLeft { g } => {
            let frame = frame.expect("validated").clone();
            let (g, lip) = scalar_fn(g, frame.grid_size())?;
            let lip = lip.ok_or_else(|| ConfigError::new("drift.g", "g' must be Lipschitz"))?;
            Arc::new(CompositionLeftDrift::new(frame, g, lip, policy).map_err(e)?)
        }
        DriftConfig::FiniteRank { profile } => {
            let frame = frame.expect("validated").clone();
            let profile = Arc::new(XiTanhProfile::new(profile.clone()).map_err(core_err("drift.profile"))?);
            Arc::new(FiniteRankDrift::with_mode_directions(frame, profile).map_err(e)?)
        }
    })
}

fn build_start(config: &ExperimentConfig, frame: Option<&Arc<SpectralFrame>>, n: usize) -> Result<HVector<f64>> {
    let st = &config.start;
    if let Some(c) = &st.coefficients {
        return Ok(HVector::new(c.clone()).resized(n));
    }
    if let Some(p) = &st.decay {
        return Ok(HVector::new((1..=n).map(|k| p.c * (k as f64).powf(-p.p)).collect()));
    }
    if let Some(s) = &st.sine {
        let frame = frame.expect("validated");
        let g = GridFunction::from_fn(frame.grid_size(), |y| s.amplitude * (s.frequency * y).sin())
            .map_err(core_err("start.sine"))?;
        return frame.to_coeffs(&g).map_err(core_err("start.sine"));
    }
    Ok(HVector::zeros(n))
}

fn resolve_directions(
    config: &ExperimentConfig,
    spectrum: &SpectrumQ<f64>,
    probe: usize,
    d: &DirectionSet,
    n: usize,
) -> Result<Vec<HVector<f64>>> {
    if let Some(basis) = &d.basis {
        let scale = d.scale.unwrap_or(1.0);
        return Ok(basis.iter().map(|&k| HVector::basis(n, k - 1).scaled(scale)).collect());
    }
    if let Some(count) = d.random {
        let stream = StreamId::new(config.seed, "directions", probe as u64);
        return smooth_directions(spectrum, count, stream, d.norm.unwrap_or(0.1))
            .map_err(core_err(&format!("probe[{probe}].directions")));
    }
    let vectors = d.vectors.as_ref().expect("validated");
    Ok(vectors.iter().map(|v| HVector::new(v.clone()).resized(n)).collect())
}
