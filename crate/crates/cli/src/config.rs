//! Experiment configuration: TOML schema, parsing and field-level validation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spde_core::engine::BelWeighting;

/// A rejected configuration, naming the offending field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
    /// One-based `(line, column)` when the error comes from the parser.
    pub location: Option<(usize, usize)>,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into(), location: None }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let field = if self.field.is_empty() { "<root>" } else { &self.field };
        write!(f, "config error in `{field}`")?;
        if let Some((line, col)) = self.location {
            write!(f, " (line {line}, column {col})")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Worker threads; `--workers` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub model: ModelConfig,
    pub spectrum: SpectrumConfig,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub frames: BTreeMap<String, FrameConfig>,
    #[serde(default)]
    pub start: StartConfig,
    pub drift: DriftConfig,
    pub observable: ObservableConfig,
    #[serde(default, rename = "probe")]
    pub probes: Vec<ProbeConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub alpha: f64,
    pub horizon: f64,
    pub steps: usize,
    /// Number of retained modes `N`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<usize>,
    #[serde(default)]
    pub bel_weighting: BelWeighting,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenvalues: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<PowerLaw>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<String>,
}

/// `c · k^{-p}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerLaw {
    pub c: f64,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameConfig {
    /// `wiener` (alias `wiener_max`) or `tabulated`.
    pub kernel: String,
    pub grid: usize,
    /// Whitespace-separated kernel matrix for `tabulated`, relative to the
    /// config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartConfig {
    /// Leading coefficients; the rest are zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<f64>>,
    /// `x_k = c · k^{-p}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<PowerLaw>,
    /// Grid function `a · sin(ω y)` projected on the frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sine: Option<Sine>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sine {
    pub amplitude: f64,
    pub frequency: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarFn {
    /// Coefficients `c_0 + c_1 y + c_2 y² + …`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polynomial: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sine: Option<Sine>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKind {
    Quadratic,
    LogCosh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriftConfig {
    Zero {},
    Projection {
        beta: f64,
        /// Diagonal of `Π`; a single value is broadcast.
        pi: Vec<f64>,
    },
    Gradient {
        potential: PotentialKind,
        /// One weight per mode, or a single weight `w` giving `w · k^{-decay}`.
        weights: Vec<f64>,
        #[serde(default)]
        decay: f64,
    },
    CahnHilliard {
        potential: PotentialKind,
        weights: Vec<f64>,
        #[serde(default)]
        decay: f64,
    },
    CompositionRight {
        g: ScalarFn,
    },
    CompositionLeft {
        g: ScalarFn,
    },
    FiniteRank {
        profile: Vec<f64>,
    },
}

impl DriftConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            DriftConfig::Zero {} => "zero",
            DriftConfig::Projection { .. } => "projection",
            DriftConfig::Gradient { .. } => "gradient",
            DriftConfig::CahnHilliard { .. } => "cahn-hilliard",
            DriftConfig::CompositionRight { .. } => "composition-right",
            DriftConfig::CompositionLeft { .. } => "composition-left",
            DriftConfig::FiniteRank { .. } => "finite-rank",
        }
    }

    pub fn needs_frame(&self) -> bool {
        matches!(
            self,
            DriftConfig::CompositionRight { .. } | DriftConfig::CompositionLeft { .. } | DriftConfig::FiniteRank { .. }
        )
    }
}

fn one() -> f64 {
    1.0
}

/// Modes are one-based in configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObservableConfig {
    Sin {
        mode: usize,
        #[serde(default = "one")]
        scale: f64,
    },
    Cos {
        mode: usize,
        #[serde(default = "one")]
        scale: f64,
    },
    TanhLinear {
        weights: Vec<f64>,
    },
    Indicator {
        mode: usize,
        threshold: f64,
        ramp: f64,
    },
    Constant {
        value: f64,
    },
}

/// Exactly one of `basis`, `random` or `vectors`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionSet {
    /// One-based mode indices, each giving `scale · e_k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    /// Number of random smooth directions with `‖h‖_α = norm`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vectors: Option<Vec<Vec<f64>>>,
}

fn default_quadrature_modes() -> usize {
    1
}
fn default_points() -> usize {
    40
}
fn default_true() -> bool {
    true
}
fn default_tol() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProbeConfig {
    Semigroup {
        times: Vec<f64>,
        samples: usize,
    },
    Mehler {
        times: Vec<f64>,
        #[serde(default = "default_quadrature_modes")]
        quadrature_modes: usize,
        #[serde(default = "default_points")]
        points: usize,
    },
    Bel {
        times: Vec<f64>,
        directions: DirectionSet,
        samples: usize,
    },
    Fd {
        time: f64,
        directions: DirectionSet,
        eps: Vec<f64>,
        samples: usize,
        #[serde(default = "default_true")]
        shared_noise: bool,
    },
    Modulus {
        times: Vec<f64>,
        directions: DirectionSet,
        samples: usize,
    },
    ModulusX {
        times: Vec<f64>,
        directions: DirectionSet,
        samples: usize,
    },
    Hypothesis {
        gamma: f64,
        t: f64,
        #[serde(default = "default_tol")]
        tol: f64,
    },
}

impl ProbeConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ProbeConfig::Semigroup { .. } => "semigroup",
            ProbeConfig::Mehler { .. } => "mehler",
            ProbeConfig::Bel { .. } => "bel",
            ProbeConfig::Fd { .. } => "fd",
            ProbeConfig::Modulus { .. } => "modulus",
            ProbeConfig::ModulusX { .. } => "modulus-x",
            ProbeConfig::Hypothesis { .. } => "hypothesis",
        }
    }
}

/// Table name of probe `i`: `01-semigroup`, `02-bel`, …
pub fn probe_name(i: usize, probe: &ProbeConfig) -> String {
    format!("{:02}-{}", i + 1, probe.kind())
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

impl ExperimentConfig {
    /// Parses TOML text; errors carry the field path and source location.
    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError {
            field: String::new(),
            message: e.message().to_string(),
            location: e.span().map(|s| line_col(text, s.start)),
        })?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            ConfigError {
                field: if field == "." { String::new() } else { field },
                message: inner.message().to_string(),
                location: inner.span().map(|s| line_col(text, s.start)),
            }
        })
    }

    /// Reads, parses and validates a config file. Relative table paths are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for frame in cfg.frames.values_mut() {
            if let Some(t) = &frame.table {
                if t.is_relative() {
                    frame.table = Some(base.join(t));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dt(&self) -> f64 {
        self.model.horizon / self.model.steps as f64
    }

    /// Number of spectral modes the experiment runs with.
    pub fn modes(&self) -> Result<usize> {
        let s = &self.spectrum;
        match (&s.eigenvalues, &s.power, &s.frame) {
            (Some(list), None, None) => Ok(self.model.truncation.unwrap_or(list.len())),
            (None, Some(_), None) | (None, None, Some(_)) => self
                .model
                .truncation
                .ok_or_else(|| ConfigError::new("model.truncation", "required for power-law and frame spectra")),
            _ => Err(ConfigError::new("spectrum", "set exactly one of `eigenvalues`, `power` or `frame`")),
        }
    }

    /// Structural checks that need no numerics.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(ConfigError::new("name", "use letters, digits, `-` and `_` only"));
        }
        if self.workers == Some(0) {
            return Err(ConfigError::new("workers", "must be at least 1"));
        }
        let m = &self.model;
        if !(m.horizon > 0.0) || !m.horizon.is_finite() {
            return Err(ConfigError::new("model.horizon", format!("must be positive and finite, got {}", m.horizon)));
        }
        if m.steps == 0 {
            return Err(ConfigError::new("model.steps", "must be at least 1"));
        }
        if !(0.0..=0.5).contains(&m.alpha) {
            return Err(ConfigError::new("model.alpha", format!("must lie in [0, 1/2], got {}", m.alpha)));
        }
        let n = self.modes()?;
        if n == 0 {
            return Err(ConfigError::new("model.truncation", "must be at least 1"));
        }
        self.validate_spectrum(n)?;
        self.validate_start(n)?;
        self.validate_drift(n)?;
        self.validate_observable(n)?;
        for (i, p) in self.probes.iter().enumerate() {
            self.validate_probe(i, p, n)?;
        }
        Ok(())
    }

    fn validate_spectrum(&self, n: usize) -> Result<()> {
        let s = &self.spectrum;
        if let Some(list) = &s.eigenvalues {
            if n > list.len() {
                return Err(ConfigError::new(
                    "model.truncation",
                    format!("{n} exceeds the {} listed eigenvalues", list.len()),
                ));
            }
        }
        if let Some(p) = &s.power {
            if !(p.c > 0.0) {
                return Err(ConfigError::new("spectrum.power.c", "must be positive"));
            }
            if !(p.p > 1.0) {
                return Err(ConfigError::new("spectrum.power.p", "must exceed 1 for a trace-class spectrum"));
            }
        }
        if let Some(name) = &s.frame {
            let frame = self.frames.get(name).ok_or_else(|| {
                let known: Vec<&str> = self.frames.keys().map(String::as_str).collect();
                ConfigError::new("spectrum.frame", format!("undefined frame `{name}`; defined frames: {known:?}"))
            })?;
            let field = |f: &str| format!("frames.{name}.{f}");
            match frame.kernel.as_str() {
                "wiener" | "wiener_max" => {
                    if frame.table.is_some() {
                        return Err(ConfigError::new(field("table"), "only used with the `tabulated` kernel"));
                    }
                }
                "tabulated" => {
                    if frame.table.is_none() {
                        return Err(ConfigError::new(field("table"), "required for the `tabulated` kernel"));
                    }
                }
                other => {
                    return Err(ConfigError::new(
                        field("kernel"),
                        format!("unknown kernel `{other}`; expected `wiener` or `tabulated`"),
                    ))
                }
            }
            if frame.grid < 2 {
                return Err(ConfigError::new(field("grid"), "needs at least 2 nodes"));
            }
            if n > frame.grid {
                return Err(ConfigError::new(
                    "model.truncation",
                    format!("{n} modes exceed the {}-node grid", frame.grid),
                ));
            }
        }
        Ok(())
    }

    fn validate_start(&self, n: usize) -> Result<()> {
        let st = &self.start;
        let count = [st.coefficients.is_some(), st.decay.is_some(), st.sine.is_some()].iter().filter(|b| **b).count();
        if count > 1 {
            return Err(ConfigError::new("start", "set at most one of `coefficients`, `decay` or `sine`"));
        }
        if let Some(c) = &st.coefficients {
            if c.len() > n {
                return Err(ConfigError::new("start.coefficients", format!("{} entries for {n} modes", c.len())));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(ConfigError::new("start.coefficients", "entries must be finite"));
            }
        }
        if st.sine.is_some() && self.spectrum.frame.is_none() {
            return Err(ConfigError::new("start.sine", "grid starting points need `spectrum.frame`"));
        }
        Ok(())
    }

    fn validate_drift(&self, n: usize) -> Result<()> {
        let d = &self.drift;
        if d.needs_frame() && self.spectrum.frame.is_none() {
            return Err(ConfigError::new(
                "drift.kind",
                format!("`{}` acts on grid functions and needs `spectrum.frame`", d.kind()),
            ));
        }
        let broadcast = |field: &str, v: &[f64]| {
            if v.len() == 1 || v.len() == n {
                Ok(())
            } else {
                Err(ConfigError::new(field, format!("give 1 or {n} values, got {}", v.len())))
            }
        };
        match d {
            DriftConfig::Projection { beta, pi } => {
                if *beta < self.model.alpha {
                    return Err(ConfigError::new("drift.beta", "must be at least model.alpha"));
                }
                broadcast("drift.pi", pi)
            }
            DriftConfig::Gradient { weights, .. } => broadcast("drift.weights", weights),
            DriftConfig::CahnHilliard { weights, .. } => {
                if self.model.alpha != 0.0 {
                    return Err(ConfigError::new("model.alpha", "the cahn-hilliard drift requires alpha = 0"));
                }
                broadcast("drift.weights", weights)
            }
            DriftConfig::CompositionRight { g } | DriftConfig::CompositionLeft { g } => {
                if g.polynomial.is_some() == g.sine.is_some() {
                    return Err(ConfigError::new("drift.g", "set exactly one of `polynomial` or `sine`"));
                }
                if let (DriftConfig::CompositionLeft { .. }, Some(p)) = (d, &g.polynomial) {
                    if p.len() > 3 {
                        return Err(ConfigError::new(
                            "drift.g.polynomial",
                            "left composition needs g' Lipschitz: degree at most 2",
                        ));
                    }
                }
                Ok(())
            }
            DriftConfig::FiniteRank { profile } => {
                if profile.is_empty() || profile.len() > n {
                    return Err(ConfigError::new("drift.profile", format!("give between 1 and {n} weights")));
                }
                Ok(())
            }
            DriftConfig::Zero {} => Ok(()),
        }
    }

    fn validate_observable(&self, n: usize) -> Result<()> {
        let mode = match &self.observable {
            ObservableConfig::Sin { mode, .. }
            | ObservableConfig::Cos { mode, .. }
            | ObservableConfig::Indicator { mode, .. } => *mode,
            ObservableConfig::TanhLinear { weights } => {
                if weights.len() > n {
                    return Err(ConfigError::new(
                        "observable.weights",
                        format!("{} weights for {n} modes", weights.len()),
                    ));
                }
                return Ok(());
            }
            ObservableConfig::Constant { .. } => return Ok(()),
        };
        if mode == 0 || mode > n {
            return Err(ConfigError::new("observable.mode", format!("modes are numbered 1..={n}, got {mode}")));
        }
        Ok(())
    }

    fn validate_probe(&self, i: usize, p: &ProbeConfig, n: usize) -> Result<()> {
        let at = |f: &str| format!("probe[{i}].{f}");
        let dt = self.dt();
        let check_times = |times: &[f64], min: f64| -> Result<()> {
            if times.is_empty() {
                return Err(ConfigError::new(at("times"), "at least one time is required"));
            }
            for &t in times {
                let m = t / dt;
                if !(t >= min) || t > self.model.horizon * (1.0 + 1e-12) || (m - m.round()).abs() > 1e-9 * m.max(1.0) {
                    return Err(ConfigError::new(
                        at("times"),
                        format!("{t} is not a grid time in [{min}, {}] with step {dt}", self.model.horizon),
                    ));
                }
            }
            Ok(())
        };
        let check_samples = |s: usize| {
            if s < 2 {
                Err(ConfigError::new(at("samples"), "need at least 2 samples"))
            } else {
                Ok(())
            }
        };
        match p {
            ProbeConfig::Semigroup { times, samples } => {
                check_times(times, 0.0)?;
                check_samples(*samples)
            }
            ProbeConfig::Mehler { times, .. } => {
                check_times(times, 0.0)?;
                if self.model.alpha != 0.5 || self.drift != (DriftConfig::Zero {}) {
                    return Err(ConfigError::new(
                        at("kind"),
                        "the Gaussian oracle needs alpha = 1/2 and the zero drift",
                    ));
                }
                Ok(())
            }
            ProbeConfig::Bel { times, directions, samples } => {
                check_times(times, dt)?;
                check_samples(*samples)?;
                validate_directions(&at("directions"), directions, n)
            }
            ProbeConfig::Fd { time, directions, eps, samples, .. } => {
                check_times(std::slice::from_ref(time), 0.0).map_err(|e| ConfigError { field: at("time"), ..e })?;
                check_samples(*samples)?;
                if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0)) || eps.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(ConfigError::new(at("eps"), "must be positive and strictly decreasing"));
                }
                validate_directions(&at("directions"), directions, n)
            }
            ProbeConfig::Modulus { times, directions, samples }
            | ProbeConfig::ModulusX { times, directions, samples } => {
                check_times(times, dt)?;
                check_samples(*samples)?;
                validate_directions(&at("directions"), directions, n)
            }
            ProbeConfig::Hypothesis { gamma, t, tol } => {
                if !(*gamma > 0.0 && *gamma < 1.0) {
                    return Err(ConfigError::new(at("gamma"), "must lie in (0, 1)"));
                }
                if !(*t >= 0.0) {
                    return Err(ConfigError::new(at("t"), "must be nonnegative"));
                }
                if !(*tol > 0.0) {
                    return Err(ConfigError::new(at("tol"), "must be positive"));
                }
                Ok(())
            }
        }
    }

    /// Copy used for hashing and embedding in the manifest: overrides
    /// applied, output location and worker count removed.
    pub fn normalized(&self) -> Self {
        let mut c = self.clone();
        c.output = None;
        c.workers = None;
        c
    }
}

fn validate_directions(field: &str, d: &DirectionSet, n: usize) -> Result<()> {
    let count = [d.basis.is_some(), d.random.is_some(), d.vectors.is_some()].iter().filter(|b| **b).count();
    if count != 1 {
        return Err(ConfigError::new(field, "set exactly one of `basis`, `random` or `vectors`"));
    }
    if d.scale.is_some() && d.basis.is_none() {
        return Err(ConfigError::new(format!("{field}.scale"), "only used with `basis`"));
    }
    if d.norm.is_some() && d.random.is_none() {
        return Err(ConfigError::new(format!("{field}.norm"), "only used with `random`"));
    }
    if let Some(b) = &d.basis {
        if b.is_empty() || b.iter().any(|&k| k == 0 || k > n) {
            return Err(ConfigError::new(format!("{field}.basis"), format!("modes are numbered 1..={n}")));
        }
    }
    if d.random == Some(0) {
        return Err(ConfigError::new(format!("{field}.random"), "must be at least 1"));
    }
    if let Some(v) = &d.vectors {
        if v.is_empty() || v.iter().any(|h| h.len() > n) {
            return Err(ConfigError::new(
                format!("{field}.vectors"),
                format!("give 1 or more vectors of at most {n} entries"),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
seed = 1
[model]
alpha = 0.5
horizon = 1.0
steps = 10
[spectrum]
eigenvalues = [1.0]
[drift]
kind = "zero"
[observable]
kind = "sin"
mode = 1
"#;

    #[test]
    fn minimal_config_validates() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.modes().unwrap(), 1);
        assert_eq!(c.model.bel_weighting, BelWeighting::ExactStep);
    }

    #[test]
    fn negative_horizon_names_the_field() {
        let c = ExperimentConfig::parse(&MINIMAL.replace("horizon = 1.0", "horizon = -1.0")).unwrap();
        assert_eq!(c.validate().unwrap_err().field, "model.horizon");
    }

    #[test]
    fn undefined_frame_is_rejected() {
        let text = MINIMAL
            .replace("eigenvalues = [1.0]", "frame = \"nope\"")
            .replace("steps = 10", "steps = 10\ntruncation = 4");
        let e = ExperimentConfig::parse(&text).unwrap().validate().unwrap_err();
        assert_eq!(e.field, "spectrum.frame");
        assert!(e.message.contains("nope"));
    }

    #[test]
    fn parse_errors_carry_path_and_location() {
        let e = ExperimentConfig::parse(&MINIMAL.replace("steps = 10", "steps = \"ten\"")).unwrap_err();
        assert_eq!(e.field, "model.steps");
        assert_eq!(e.location.unwrap().0, 7);
        let e = ExperimentConfig::parse(&MINIMAL.replace("kind = \"zero\"", "kind = \"zero\"\nbogus = 1")).unwrap_err();
        assert!(e.field.starts_with("drift"), "{e}");
    }

    #[test]
    fn frame_drift_without_frame() {
        let text = MINIMAL.replace("kind = \"zero\"", "kind = \"finite-rank\"\nprofile = [1.0]");
        assert_eq!(ExperimentConfig::parse(&text).unwrap().validate().unwrap_err().field, "drift.kind");
    }

    #[test]
    fn off_grid_probe_time() {
        let text = format!("{MINIMAL}\n[[probe]]\nkind = \"semigroup\"\ntimes = [0.25]\nsamples = 10\n");
        assert_eq!(ExperimentConfig::parse(&text).unwrap().validate().unwrap_err().field, "probe[0].times");
    }

    #[test]
    fn normalized_round_trips_through_json() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        let json = serde_json::to_string(&c.normalized()).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c.normalized());
    }
}
