//! Batch experiment runner: TOML configs in, CSV tables and a manifest out.

// Negated float comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod build;
pub mod config;
pub mod run;

use std::fmt::Write as _;
use std::path::PathBuf;

use spde_core::catalog::catalog;
use spde_core::lab::BoundFamily;

pub use config::{ConfigError, ExperimentConfig};
pub use run::{run_config, run_experiment, RunError, RunManifest, RunOptions};

/// Directory holding the bundled example configs.
pub fn bundled_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples")
}

fn bound_family_text(b: BoundFamily) -> &'static str {
    match b {
        BoundFamily::UniformHAlpha => "uniform H_alpha bound with a global Lipschitz constant",
        BoundFamily::PointDependent => "point-dependent bound with L(x) at the base point",
        BoundFamily::XLipschitzExplicit => "bound along X with an explicit constant",
        BoundFamily::XLipschitzImplicit => "bound along X, finiteness only",
        BoundFamily::HalfGradient => "gradient bound at alpha = 1/2",
    }
}

/// Text listing of the six bundled examples.
pub fn render_catalog() -> String {
    let dir = bundled_dir();
    let mut s = String::new();
    for (i, e) in catalog().iter().enumerate() {
        let _ = writeln!(s, "{}. {}", i + 1, e.name);
        let _ = writeln!(s, "   family:   {}", e.family);
        let _ = writeln!(s, "   alpha:    {}", e.alpha);
        let _ = writeln!(s, "   bound:    {}", bound_family_text(e.bound_family));
        let _ = writeln!(s, "   expected: {}", e.expected);
        let _ = writeln!(s, "   config:   {}", dir.join(e.config).display());
    }
    s
}
