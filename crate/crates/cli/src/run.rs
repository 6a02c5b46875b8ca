//! Executes an experiment and writes its tables, summary and manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use spde_core::lab::{mehler_oracle, Lab, LipschitzReport, SimConfig};

use crate::build::Experiment;
use crate::config::{probe_name, ConfigError, ExperimentConfig, ProbeConfig};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("probe `{probe}` failed: {source}")]
    Probe { probe: String, source: spde_core::Error },
    #[error("cannot set up the simulation: {0}")]
    Setup(spde_core::Error),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Command-line overrides.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    /// SHA-256 of the normalized config in canonical JSON.
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub workers: usize,
    pub wall_clock_seconds: f64,
    pub output_dir: PathBuf,
    /// Probe name to CSV path, relative to `output_dir`.
    pub tables: BTreeMap<String, PathBuf>,
    pub summary: PathBuf,
    pub results: PathBuf,
    pub violations: usize,
    pub flags: Vec<String>,
    pub config: ExperimentConfig,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const RESULTS_FILE: &str = "results.jsonl";

pub fn config_hash(config: &ExperimentConfig) -> String {
    let canonical = serde_json::to_string(&config.normalized()).expect("config serializes");
    Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn run_experiment(path: &Path, opts: &RunOptions) -> Result<RunManifest, RunError> {
    run_config(ExperimentConfig::load(path)?, opts)
}

struct ProbeOutcome {
    csv: String,
    result: serde_json::Value,
    lines: Vec<String>,
    violations: Vec<String>,
    flags: Vec<String>,
}

pub fn run_config(mut config: ExperimentConfig, opts: &RunOptions) -> Result<RunManifest, RunError> {
    if let Some(seed) = opts.seed {
        config.seed = seed;
    }
    let out =
        opts.out.clone().or_else(|| config.output.clone()).unwrap_or_else(|| PathBuf::from("out").join(&config.name));
    let workers = opts.workers.or(config.workers).unwrap_or(1);
    if workers == 0 {
        return Err(ConfigError::new("workers", "must be at least 1").into());
    }
    let exp = Experiment::build(config)?;
    let cfg = &exp.config;
    let start = Instant::now();

    let mut sim = SimConfig::new(cfg.model.horizon, cfg.model.steps, cfg.seed).with_workers(workers);
    sim.bel_weighting = cfg.model.bel_weighting;
    let lab = Lab::new(exp.spectrum.clone(), exp.drift.clone(), sim).map_err(RunError::Setup)?;

    let mut outcomes = Vec::new();
    for (i, probe) in cfg.probes.iter().enumerate() {
        let name = probe_name(i, probe);
        let outcome =
            run_probe(&exp, &lab, i, probe).map_err(|source| RunError::Probe { probe: name.clone(), source })?;
        outcomes.push((name, probe.kind(), outcome));
    }

    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| RunError::Io { path, source }
    };
    let tables_dir = out.join("tables");
    std::fs::create_dir_all(&tables_dir).map_err(io(&tables_dir))?;
    let mut tables = BTreeMap::new();
    let mut results = String::new();
    for (name, kind, o) in &outcomes {
        let rel = PathBuf::from("tables").join(format!("{name}.csv"));
        let path = out.join(&rel);
        std::fs::write(&path, &o.csv).map_err(io(&path))?;
        tables.insert(name.clone(), rel);
        let line = json!({ "probe": name, "kind": kind, "result": o.result });
        results.push_str(&serde_json::to_string(&line).expect("json"));
        results.push('\n');
    }
    let path = out.join(RESULTS_FILE);
    std::fs::write(&path, results).map_err(io(&path))?;

    let hash = config_hash(cfg);
    let violations: Vec<String> = outcomes.iter().flat_map(|(_, _, o)| o.violations.clone()).collect();
    let flags: Vec<String> = outcomes.iter().flat_map(|(_, _, o)| o.flags.clone()).collect();
    let summary = render_summary(cfg, &hash, &violations, &flags, &outcomes);
    let path = out.join(SUMMARY_FILE);
    std::fs::write(&path, summary).map_err(io(&path))?;

    let manifest = RunManifest {
        name: cfg.name.clone(),
        config_hash: hash,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        workers,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        output_dir: out.clone(),
        tables,
        summary: PathBuf::from(SUMMARY_FILE),
        results: PathBuf::from(RESULTS_FILE),
        violations: violations.len(),
        flags,
        config: cfg.normalized(),
    };
    let path = out.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string(&manifest).expect("json") + "\n").map_err(io(&path))?;
    Ok(manifest)
}

fn render_summary(
    cfg: &ExperimentConfig,
    hash: &str,
    violations: &[String],
    flags: &[String],
    outcomes: &[(String, &str, ProbeOutcome)],
) -> String {
    let mut s = String::new();
    let list = |s: &mut String, title: &str, items: &[String]| {
        if items.is_empty() {
            let _ = writeln!(s, "{title}: none");
        } else {
            let _ = writeln!(s, "{title}: {}", items.len());
            for v in items {
                let _ = writeln!(s, "  ! {v}");
            }
        }
    };
    list(&mut s, "BOUND VIOLATIONS", violations);
    list(&mut s, "FLAGS", flags);
    let _ = writeln!(s);
    let _ = writeln!(s, "experiment {} (seed {}, config sha256 {hash})", cfg.name, cfg.seed);
    let _ = writeln!(
        s,
        "model: alpha = {}, T = {}, {} steps, {} drift",
        cfg.model.alpha,
        cfg.model.horizon,
        cfg.model.steps,
        cfg.drift.kind()
    );
    for (name, _, o) in outcomes {
        let _ = writeln!(s, "{name}");
        for line in &o.lines {
            let _ = writeln!(s, "  {line}");
        }
    }
    s
}

fn modulus_outcome(name: &str, report: LipschitzReport) -> ProbeOutcome {
    let violations = report
        .rows
        .iter()
        .filter(|r| r.violated)
        .map(|r| {
            format!(
                "{name}: t = {}, direction {}: ratio {:.4} exceeds bound {:.4}",
                r.t,
                r.direction,
                r.ratio,
                r.bound.unwrap_or(f64::NAN)
            )
        })
        .collect();
    let max_ratio = report.rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let lines = vec![
        format!(
            "family {:?}, L = {:.4}, {} rows, {} samples",
            report.family,
            report.lipschitz_constant,
            report.rows.len(),
            report.n_samples
        ),
        format!("max ratio {:.4}, max slack fraction {:.4}", max_ratio, report.max_slack_fraction()),
    ];
    ProbeOutcome {
        csv: report.to_csv(),
        result: serde_json::to_value(&report).expect("json"),
        lines,
        violations,
        flags: Vec::new(),
    }
}

fn run_probe(exp: &Experiment, lab: &Lab<f64>, i: usize, probe: &ProbeConfig) -> spde_core::Result<ProbeOutcome> {
    let name = probe_name(i, probe);
    let phi = &exp.observable;
    let x = &exp.x0;
    let dirs = &exp.directions[i];
    Ok(match probe {
        ProbeConfig::Semigroup { times, samples } => {
            let est = lab.estimate_semigroup_times(phi, times, x, *samples)?;
            let mut csv = String::from("t,value,stderr,n_samples,branch_crossings\n");
            let mut lines = Vec::new();
            for e in &est {
                let _ = writeln!(csv, "{},{},{},{},{}", e.t, e.value, e.stderr, e.n_samples, e.branch_crossings);
                lines.push(format!("t = {}: {:.6} ± {:.6} (n = {})", e.t, e.value, e.stderr, e.n_samples));
            }
            ProbeOutcome {
                csv,
                result: serde_json::to_value(&est).expect("json"),
                lines,
                violations: vec![],
                flags: vec![],
            }
        }
        ProbeConfig::Mehler { times, quadrature_modes, points } => {
            let mut csv = String::from("t,value\n");
            let mut lines = Vec::new();
            let mut values = Vec::new();
            for &t in times {
                let v = mehler_oracle(&exp.spectrum, phi, t, x, *quadrature_modes, *points)?;
                let _ = writeln!(csv, "{t},{v}");
                lines.push(format!("t = {t}: {v:.8}"));
                values.push(json!({ "t": t, "value": v }));
            }
            ProbeOutcome { csv, result: json!(values), lines, violations: vec![], flags: vec![] }
        }
        ProbeConfig::Bel { times, samples, .. } => {
            let est = lab.bel_gradient_batch(phi, times, x, dirs, *samples)?;
            let mut csv = String::from("direction,t,value,stderr,n_samples\n");
            let mut lines = Vec::new();
            for (d, row) in est.iter().enumerate() {
                for e in row {
                    let _ = writeln!(csv, "{d},{},{},{},{}", e.t, e.value, e.stderr, e.n_samples);
                    lines.push(format!("direction {d}, t = {}: {:.6} ± {:.6}", e.t, e.value, e.stderr));
                }
            }
            ProbeOutcome {
                csv,
                result: serde_json::to_value(&est).expect("json"),
                lines,
                violations: vec![],
                flags: vec![],
            }
        }
        ProbeConfig::Fd { time, eps, samples, shared_noise, .. } => {
            let mut csv = String::from("direction,eps,value,stderr,richardson\n");
            let mut lines = Vec::new();
            let mut flags = Vec::new();
            let mut reports = Vec::new();
            for (d, h) in dirs.iter().enumerate() {
                let r = lab.fd_gradient(phi, *time, x, h, eps, *samples, *shared_noise)?;
                for (j, e) in r.estimates.iter().enumerate() {
                    let rich = if j == 0 { String::new() } else { r.richardson[j - 1].to_string() };
                    let _ = writeln!(csv, "{d},{},{},{},{rich}", r.eps[j], e.value, e.stderr);
                }
                let last = r.estimates.last().expect("nonempty ladder");
                lines.push(format!(
                    "direction {d}, t = {time}: {:.6} ± {:.6} at eps = {}",
                    last.value,
                    last.stderr,
                    r.eps.last().expect("nonempty")
                ));
                if r.curvature_flag {
                    flags.push(format!(
                        "{name}: direction {d}: difference quotients change significantly along the eps ladder"
                    ));
                }
                reports.push(r);
            }
            ProbeOutcome {
                csv,
                result: serde_json::to_value(&reports).expect("json"),
                lines,
                violations: vec![],
                flags,
            }
        }
        ProbeConfig::Modulus { times, samples, .. } => {
            modulus_outcome(&name, lab.lipschitz_probe(phi, times, x, dirs, *samples)?)
        }
        ProbeConfig::ModulusX { times, samples, .. } => {
            modulus_outcome(&name, lab.lipschitz_probe_x_directions(phi, times, x, dirs, *samples)?)
        }
        ProbeConfig::Hypothesis { gamma, t, tol } => {
            let r = exp.spectrum.check_hypothesis_pd(*gamma, *t, *tol)?;
            let csv = format!(
                "gamma,t,integral,half_truncation,relative_change,truncation_dim,converged\n{gamma},{t},{},{},{},{},{}\n",
                r.integral_value, r.half_truncation_value, r.relative_change, r.truncation_dim, r.converged as u8
            );
            let lines = vec![format!(
                "integral {:.6}, N/2 value {:.6}, relative change {:.4} (N = {})",
                r.integral_value, r.half_truncation_value, r.relative_change, r.truncation_dim
            )];
            let flags = if r.converged {
                vec![]
            } else {
                vec![format!(
                    "{name}: trace integral not converged in truncation (change {:.4} > {tol})",
                    r.relative_change
                )]
            };
            ProbeOutcome { csv, result: serde_json::to_value(&r).expect("json"), lines, violations: vec![], flags }
        }
    })
}
