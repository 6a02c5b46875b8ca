use std::path::{Path, PathBuf};
use std::process::Command;

use spde_lab::build::Experiment;
use spde_lab::config::ProbeConfig;
use spde_lab::run::{config_hash, RunManifest, MANIFEST_FILE};
use spde_lab::{bundled_dir, run_config, run_experiment, ExperimentConfig, RunOptions};

const BUNDLED: [&str; 7] = [
    "linear_gaussian",
    "projection",
    "composition_right",
    "composition_left",
    "gradient_type",
    "cahn_hilliard",
    "finite_rank",
];

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spde-lab"))
}

fn config_path(name: &str) -> PathBuf {
    bundled_dir().join(format!("{name}.toml"))
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/linear_gaussian")
}

/// Compared byte for byte; the manifest is compared after masking
/// run-specific fields.
const GOLDEN_FILES: [&str; 7] = [
    "summary.txt",
    "results.jsonl",
    "tables/01-semigroup.csv",
    "tables/02-mehler.csv",
    "tables/03-bel.csv",
    "tables/04-fd.csv",
    "tables/05-modulus.csv",
];

fn masked_manifest(dir: &Path) -> RunManifest {
    let mut m: RunManifest = serde_json::from_str(&read(&dir.join(MANIFEST_FILE))).unwrap();
    m.wall_clock_seconds = 0.0;
    m.output_dir = PathBuf::new();
    m.workers = 0;
    m
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn linear_gaussian_matches_golden_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let status = bin()
        .args([
            "run",
            config_path("linear_gaussian").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--workers",
            "2",
        ])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));

    let golden = golden_dir();
    if std::env::var_os("SPDE_BLESS").is_some() {
        for f in GOLDEN_FILES {
            let dst = golden.join(f);
            std::fs::create_dir_all(dst.parent().unwrap()).unwrap();
            std::fs::copy(out.join(f), dst).unwrap();
        }
        let m = serde_json::to_string(&masked_manifest(&out)).unwrap();
        std::fs::write(golden.join(MANIFEST_FILE), m + "\n").unwrap();
    }
    for f in GOLDEN_FILES {
        assert_eq!(read(&out.join(f)), read(&golden.join(f)), "{f} differs from the golden copy");
    }
    assert_eq!(masked_manifest(&out), masked_manifest(&golden));
}

#[test]
fn worker_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::load(&config_path("linear_gaussian")).unwrap();
    let mut runs = Vec::new();
    for workers in [1, 3] {
        let out = tmp.path().join(format!("w{workers}"));
        let opts = RunOptions { out: Some(out.clone()), seed: None, workers: Some(workers) };
        runs.push((out, run_config(cfg.clone(), &opts).unwrap()));
    }
    assert_eq!(runs[0].1.config_hash, runs[1].1.config_hash);
    for f in GOLDEN_FILES {
        assert_eq!(read(&runs[0].0.join(f)), read(&runs[1].0.join(f)), "{f}");
    }
}

#[test]
fn seed_override_changes_numbers_and_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let path = config_path("linear_gaussian");
    let a = run_experiment(&path, &RunOptions { out: Some(tmp.path().join("a")), ..Default::default() }).unwrap();
    let b =
        run_experiment(&path, &RunOptions { out: Some(tmp.path().join("b")), seed: Some(7), workers: None }).unwrap();
    assert_eq!(b.seed, 7);
    assert_eq!(b.config.seed, 7);
    assert_ne!(a.config_hash, b.config_hash);
    let t = "tables/01-semigroup.csv";
    assert_ne!(read(&tmp.path().join("a").join(t)), read(&tmp.path().join("b").join(t)));
    // The quadrature oracle does not sample.
    let t = "tables/02-mehler.csv";
    assert_eq!(read(&tmp.path().join("a").join(t)), read(&tmp.path().join("b").join(t)));
}

#[test]
fn manifest_config_revalidates_and_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let opts = RunOptions { out: Some(tmp.path().join("a")), ..Default::default() };
    let first = run_experiment(&config_path("linear_gaussian"), &opts).unwrap();
    let manifest: RunManifest = serde_json::from_str(&read(&tmp.path().join("a").join(MANIFEST_FILE))).unwrap();
    manifest.config.validate().unwrap();
    assert_eq!(config_hash(&manifest.config), first.config_hash);
    run_config(manifest.config, &RunOptions { out: Some(tmp.path().join("b")), ..Default::default() }).unwrap();
    for f in GOLDEN_FILES {
        assert_eq!(read(&tmp.path().join("a").join(f)), read(&tmp.path().join("b").join(f)), "{f}");
    }
}

fn write_variant(dir: &Path, from: &str, to: &str) -> PathBuf {
    let text = read(&config_path("linear_gaussian"));
    assert!(text.contains(from));
    let path = dir.join("variant.toml");
    std::fs::write(&path, text.replacen(from, to, 1)).unwrap();
    path
}

#[test]
fn negative_horizon_is_a_config_error_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_variant(tmp.path(), "horizon = 1.0", "horizon = -1.0");
    let out =
        bin().args(["run", path.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("model.horizon"), "{stderr}");
    assert!(!tmp.path().join("o").exists(), "nothing is written for an invalid config");
}

#[test]
fn undefined_frame_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_variant(tmp.path(), "eigenvalues = [1.0]", "frame = \"brownian\"");
    std::fs::write(&path, read(&path).replacen("steps = 10", "steps = 10\ntruncation = 1", 1)).unwrap();
    let err = ExperimentConfig::load(&path).unwrap_err();
    assert_eq!(err.field, "spectrum.frame");
    assert!(err.message.contains("brownian"));
}

#[test]
fn syntax_errors_report_a_location() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_variant(tmp.path(), "steps = 10", "steps = [10");
    let err = ExperimentConfig::load(&path).unwrap_err();
    assert!(err.location.is_some(), "{err}");
}

#[test]
fn examples_lists_six_entries_with_bound_families() {
    let out = bin().arg("examples").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let entries = text.lines().filter(|l| l.starts_with(|c: char| c.is_ascii_digit())).count();
    assert_eq!(entries, 6, "{text}");
    assert_eq!(text.matches("   bound:").count(), 6);
    for line in text.lines().filter(|l| l.trim_start().starts_with("config:")) {
        let path = line.split_once(':').unwrap().1.trim();
        assert!(Path::new(path).exists(), "{path}");
    }
}

#[test]
fn every_bundled_config_builds() {
    for name in BUNDLED {
        let cfg = ExperimentConfig::load(&config_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        Experiment::build(cfg).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

/// Frame examples at a reduced sample size.
#[test]
fn frame_examples_run_without_violations() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["composition_right", "composition_left", "finite_rank"] {
        let mut cfg = ExperimentConfig::load(&config_path(name)).unwrap();
        for p in &mut cfg.probes {
            if let ProbeConfig::Bel { samples, .. } | ProbeConfig::Modulus { samples, .. } = p {
                *samples = 200;
            }
        }
        let opts = RunOptions { out: Some(tmp.path().join(name)), seed: None, workers: Some(2) };
        let m = run_config(cfg, &opts).unwrap();
        assert_eq!(m.violations, 0, "{name}");
    }
}

#[test]
fn verify_exit_codes() {
    let ok = bin().args(["verify", "--level", "smoke", "--only", "1,3"]).output().unwrap();
    let text = String::from_utf8_lossy(&ok.stdout);
    assert!(ok.status.success(), "{text}");
    assert_eq!(text.matches("[PASS]").count(), 2);

    let red = bin().args(["verify", "--level", "smoke", "--only", "9"]).output().unwrap();
    assert!(!red.status.success());
    assert!(String::from_utf8_lossy(&red.stdout).contains("criterion  9 [FAIL]"));

    let bad = bin().args(["verify", "--only", "11"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
