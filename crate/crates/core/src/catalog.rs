//! The six bundled example drifts with ready-made spectra, frames and
//! starting points.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariance::{GridFunction, KernelSpec, SpectralFrame};
use crate::drift::{
    CahnHilliardDrift, CompositionLeftDrift, CompositionRightDrift, DriftSpec, FiniteRankDrift, GradientDrift,
    LogCoshPotential, MembershipPolicy, ProjectionDrift, XiTanhProfile,
};
use crate::error::{Error, Result};
use crate::lab::BoundFamily;
use crate::rng::StreamId;
use crate::spectral::SpectrumQ;
use crate::vector::HVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExampleKind {
    Projection,
    CompositionRight,
    CompositionLeft,
    GradientType,
    CahnHilliard,
    FiniteRank,
}

impl ExampleKind {
    pub const ALL: [ExampleKind; 6] = [
        ExampleKind::Projection,
        ExampleKind::CompositionRight,
        ExampleKind::CompositionLeft,
        ExampleKind::GradientType,
        ExampleKind::CahnHilliard,
        ExampleKind::FiniteRank,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExampleKind::Projection => "projection",
            ExampleKind::CompositionRight => "composition-right",
            ExampleKind::CompositionLeft => "composition-left",
            ExampleKind::GradientType => "gradient-type",
            ExampleKind::CahnHilliard => "cahn-hilliard",
            ExampleKind::FiniteRank => "finite-rank",
        }
    }

    /// Whether the example lives on a grid frame of the Wiener covariance.
    pub fn uses_frame(self) -> bool {
        matches!(self, ExampleKind::CompositionRight | ExampleKind::CompositionLeft | ExampleKind::FiniteRank)
    }

    pub fn default_alpha(self) -> f64 {
        match self {
            ExampleKind::CahnHilliard => 0.0,
            ExampleKind::GradientType => 0.25,
            _ => 0.5,
        }
    }
}

impl fmt::Display for ExampleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExampleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ExampleKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown example `{s}`")))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub kind: ExampleKind,
    pub family: &'static str,
    pub alpha: f64,
    pub bound_family: BoundFamily,
    pub expected: &'static str,
    pub config: &'static str,
}

pub fn catalog() -> Vec<CatalogEntry> {
    use ExampleKind::*;
    let entry = |kind: ExampleKind, family, bound_family, expected, config| CatalogEntry {
        name: kind.name(),
        kind,
        family,
        alpha: kind.default_alpha(),
        bound_family,
        expected,
        config,
    };
    vec![
        entry(
            Projection,
            "projection Π Q^β x on H_α, zero off H_α; discontinuous on X",
            BoundFamily::UniformHAlpha,
            "no modulus violation; variational growth below e^{LT}",
            "projection.toml",
        ),
        entry(
            CompositionRight,
            "right composition f ∘ g - f(g(0)) on W^{1,2}_0, Wiener covariance",
            BoundFamily::UniformHAlpha,
            "no modulus violation with L = sqrt(max g')",
            "composition_right.toml",
        ),
        entry(
            CompositionLeft,
            "left composition g ∘ f - g(0) on functions with bounded slope",
            BoundFamily::PointDependent,
            "no modulus violation with L(f) from the slope of f",
            "composition_left.toml",
        ),
        entry(
            GradientType,
            "gradient type Q^α ∇U with convex log-cosh potential",
            BoundFamily::XLipschitzImplicit,
            "finite modulus along X directions; BEL agrees with finite differences",
            "gradient_type.toml",
        ),
        entry(
            CahnHilliard,
            "Cahn-Hilliard type (-A)^{1/2} F_in at α = 0",
            BoundFamily::XLipschitzExplicit,
            "modulus along X below the explicit constant over √t",
            "cahn_hilliard.toml",
        ),
        entry(
            FiniteRank,
            "finite rank f(ξ, ⟨x, e_1⟩, …, ⟨x, e_n⟩) with f(0, ·) = 0",
            BoundFamily::UniformHAlpha,
            "no modulus violation; variational growth below e^{LT}",
            "finite_rank.toml",
        ),
    ]
}

/// Everything needed to simulate one example.
#[derive(Clone)]
pub struct ExampleSetup {
    pub kind: ExampleKind,
    pub spectrum: Arc<SpectrumQ<f64>>,
    pub frame: Option<Arc<SpectralFrame>>,
    pub drift: DriftSpec<f64>,
    pub x0: HVector<f64>,
}

impl fmt::Debug for ExampleSetup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExampleSetup")
            .field("kind", &self.kind)
            .field("modes", &self.spectrum.dim())
            .field("drift", &self.drift.label())
            .finish()
    }
}

/// Builds an example with `modes` spectral modes. Frame examples use a grid
/// of `grid_size` nodes; spectral examples use `λ_k = k^{-2}`.
pub fn build_example(kind: ExampleKind, modes: usize, grid_size: usize, alpha: Option<f64>) -> Result<ExampleSetup> {
    let alpha = alpha.unwrap_or(kind.default_alpha());
    let policy = MembershipPolicy::default();
    let (spectrum, frame, drift): (Arc<SpectrumQ<f64>>, Option<Arc<SpectralFrame>>, DriftSpec<f64>) =
        if kind.uses_frame() {
            let frame = Arc::new(SpectralFrame::build(&KernelSpec::Wiener, grid_size, modes, alpha)?);
            let spectrum = Arc::new(frame.spectrum().clone());
            let drift: DriftSpec<f64> = match kind {
                ExampleKind::CompositionRight => {
                    let g = GridFunction::from_fn(grid_size, |y| 0.5 * (y + y * y))?;
                    Arc::new(CompositionRightDrift::new(frame.clone(), g, policy)?)
                }
                ExampleKind::CompositionLeft => {
                    let g = GridFunction::from_fn(grid_size, |y| 0.5 * (2.0 * y).sin())?;
                    Arc::new(CompositionLeftDrift::new(frame.clone(), g, 2.0, policy)?)
                }
                _ => {
                    let profile = Arc::new(XiTanhProfile::new(vec![1.0, -0.5])?);
                    Arc::new(FiniteRankDrift::with_mode_directions(frame.clone(), profile)?)
                }
            };
            (spectrum, Some(frame), drift)
        } else {
            let spectrum = Arc::new(SpectrumQ::power_family(1.0, 2.0, modes, alpha)?);
            let drift: DriftSpec<f64> = match kind {
                ExampleKind::Projection => {
                    Arc::new(ProjectionDrift::new(spectrum.clone(), alpha.max(0.25), vec![0.8; modes], policy)?)
                }
                ExampleKind::GradientType => {
                    let weights = (1..=modes).map(|k| 1.0 / k as f64).collect();
                    Arc::new(GradientDrift::new(spectrum.clone(), Arc::new(LogCoshPotential::new(weights)?))?)
                }
                _ => {
                    let half = Arc::new(spectrum.with_alpha(0.5)?);
                    let inner = Arc::new(GradientDrift::new(half, Arc::new(LogCoshPotential::new(vec![1.0; modes])?))?);
                    Arc::new(CahnHilliardDrift::new(spectrum.clone(), inner)?)
                }
            };
            (spectrum, None, drift)
        };
    let x0 = match &frame {
        Some(fr) => fr.to_coeffs(&GridFunction::from_fn(grid_size, |y| 0.5 * (std::f64::consts::PI * y).sin())?)?,
        None => HVector::new((1..=modes).map(|k| 1.0 / (k * k) as f64).collect()),
    };
    Ok(ExampleSetup { kind, spectrum, frame, drift, x0 })
}

/// Random smooth directions: `h_k ∝ λ_k^α z_k / k`, scaled to
/// `‖h‖_α = alpha_norm`.
pub fn smooth_directions(
    spectrum: &SpectrumQ<f64>,
    count: usize,
    stream: StreamId,
    alpha_norm: f64,
) -> Result<Vec<HVector<f64>>> {
    let mut rng = stream.rng();
    let qa = spectrum.q_alpha();
    (0..count)
        .map(|_| {
            let h = HVector::new(
                qa.iter()
                    .enumerate()
                    .map(|(k, &q)| q * rng.sample::<f64, _>(StandardNormal) / (k + 1) as f64)
                    .collect(),
            );
            let n = spectrum.h_alpha_norm(&h)?;
            Ok(h.scaled(alpha_norm / n))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::Membership;

    #[test]
    fn six_entries_with_distinct_names() {
        let c = catalog();
        assert_eq!(c.len(), 6);
        for (e, k) in c.iter().zip(ExampleKind::ALL) {
            assert_eq!(e.kind, k);
            assert_eq!(e.name.parse::<ExampleKind>().unwrap(), k);
        }
        assert!("nope".parse::<ExampleKind>().is_err());
    }

    #[test]
    fn every_example_builds_and_evaluates() {
        for kind in ExampleKind::ALL {
            let ex = build_example(kind, 16, 64, None).unwrap();
            assert_eq!(ex.spectrum.dim(), 16);
            let f = ex.drift.evaluate(&ex.x0).unwrap();
            assert!(f.is_finite(), "{kind}");
            assert_eq!(ex.spectrum.alpha(), kind.default_alpha());
        }
    }

    #[test]
    fn directions_are_accepted_by_the_heuristic() {
        let s = SpectrumQ::power_family(1.0, 2.0, 32, 0.5).unwrap();
        let dirs = smooth_directions(&s, 20, StreamId::new(1, "dirs", 0), 0.1).unwrap();
        for h in &dirs {
            assert!((s.h_alpha_norm(h).unwrap() - 0.1).abs() < 1e-12);
            assert_eq!(MembershipPolicy::default().decide(&s, h).unwrap(), Membership::InHAlpha);
        }
    }
}
