use std::fs;
use std::path::PathBuf;

use cgp_core::config::ExperimentConfig;
use cgp_core::experiment::{compute_figure, config_hash, verify_manifest, write_figure};

fn bundled(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../configs/{name}.toml"));
    ExperimentConfig::load(&path).unwrap()
}

#[test]
fn bundled_configs_round_trip() {
    for name in ["fig1", "fig2", "fig3"] {
        let cfg = bundled(name);
        assert_eq!(cfg.name, name);
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }
}

#[test]
fn manifest_lists_every_file_with_row_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = bundled("fig1");
    cfg.n_samples = 10;
    cfg.grid = 201;
    let result = compute_figure(&cfg).unwrap();
    let written = write_figure(&result, dir.path()).unwrap();
    let read = verify_manifest(dir.path()).unwrap();
    assert_eq!(written, read);
    assert_eq!(read.config_sha256, config_hash(&cfg).unwrap());
    for entry in &read.files {
        assert!(dir.path().join(&entry.file).exists(), "{}", entry.file);
    }
    let summary = read.files.iter().find(|f| f.file == "summary.csv").unwrap();
    assert_eq!(summary.rows, 201);
    let paths = read.files.iter().find(|f| f.file == "paths.csv").unwrap();
    assert_eq!(paths.rows, 10 * 51);

    // a truncated CSV no longer matches its declared row count
    let path = dir.path().join("summary.csv");
    let text = fs::read_to_string(&path).unwrap();
    let cut: Vec<&str> = text.lines().take(100).collect();
    fs::write(&path, cut.join("\n")).unwrap();
    assert!(verify_manifest(dir.path()).is_err());
}

#[test]
fn hash_ignores_output_directory_only() {
    let a = bundled("fig1");
    let mut b = a.clone();
    b.out = PathBuf::from("elsewhere");
    assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
    b.seed += 1;
    assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
}

#[test]
fn figure_one_kriging_overshoots_but_map_does_not() {
    let mut cfg = bundled("fig1");
    cfg.n_samples = 0;
    let r = compute_figure(&cfg).unwrap();
    assert!(r.kriging.iter().any(|&v| v > 20.0));
    assert!(r.map_curve.iter().all(|&v| (-25.0 - 1e-8..=20.0 + 1e-8).contains(&v)));
    assert!(!r.kriging_strictly_feasible());
    assert!(r.batch.is_none());
}

#[test]
fn infeasible_config_is_an_error() {
    let mut cfg = bundled("fig1");
    cfg.data.values[1] = 30.0;
    assert!(compute_figure(&cfg).is_err());
}
