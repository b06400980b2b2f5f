use std::fs;
use std::path::Path;

use cvkerr_core::decomposition::SchemeKind;
use cvkerr_core::fock::fidelity_error;
use cvkerr_core::harness::{read_state_csv, run_experiment, ConfigOverrides, ExperimentConfig};
use cvkerr_core::teleport::ProtocolMode;
use cvkerr_core::Error;
use serde_json::Value;

fn config(name: &str, dir: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(name);
    c.out_dir = Some(dir.to_path_buf());
    c
}

/// Report JSON with the fields that legitimately differ between runs removed.
fn stable_report(dir: &Path) -> Value {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    let obj = v.as_object_mut().unwrap();
    obj.remove("runtime_seconds");
    obj["config"].as_object_mut().unwrap().remove("jobs");
    v
}

#[test]
fn reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config("teleport_equiv", dir.path());
    c.repetitions = Some(4);
    c.seed = 11;
    run_experiment(&c).unwrap();
    let first = stable_report(dir.path());
    run_experiment(&c).unwrap();
    assert_eq!(first, stable_report(dir.path()));

    c.seed = 12;
    run_experiment(&c).unwrap();
    let other = stable_report(dir.path());
    assert_ne!(first["diagnostics"], other["diagnostics"]);
}

#[test]
fn manifest_files_exist() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config("single_photon", dir.path());
    c.mode = Some(ProtocolMode::Postselect);
    let report = run_experiment(&c).unwrap();
    assert!(report.files.contains(&"report.json".to_string()));
    assert!(report.files.contains(&"state.csv".to_string()));
    assert!(report.files.contains(&"transcript.json".to_string()));
    for f in &report.files {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    assert!((0.0..=1.0).contains(&report.epsilon));
}

#[test]
fn epsilon_is_recomputable_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    for (name, mode) in [("single_photon", ProtocolMode::Direct), ("fig1", ProtocolMode::Postselect)] {
        let mut c = config(name, dir.path());
        c.mode = Some(mode);
        let report = run_experiment(&c).unwrap();
        let cell = &report.cells[0];
        let file = dir.path().join(cell.state_file.as_ref().unwrap());
        let (exact, approx) = read_state_csv(&file, &report.grid).unwrap();
        let eps = fidelity_error(&exact, &approx).unwrap();
        assert!((eps - cell.epsilon).abs() <= 1e-6, "{name}: csv {eps}, report {}", cell.epsilon);
    }
}

#[test]
fn table1_is_independent_of_jobs() {
    let serial = tempfile::tempdir().unwrap();
    let parallel = tempfile::tempdir().unwrap();
    let mut a = config("table1", serial.path());
    a.jobs = 1;
    let mut b = config("table1", parallel.path());
    b.jobs = 4;
    run_experiment(&a).unwrap();
    run_experiment(&b).unwrap();
    let (mut ra, mut rb) = (stable_report(serial.path()), stable_report(parallel.path()));
    for r in [&mut ra, &mut rb] {
        r["config"].as_object_mut().unwrap().remove("out_dir");
    }
    assert_eq!(ra, rb);
    assert_eq!(ra["cells"].as_array().unwrap().len(), 4);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    fs::write(&path, r#"{"experiment": "fig2", "dim": 40, "t": 0.05, "seed": 3, "scheme": "separated"}"#).unwrap();
    let mut c = ExperimentConfig::from_file(&path).unwrap();
    assert_eq!(c.dim, Some(40));
    assert_eq!(c.jobs, 1);
    c.apply_overrides(&ConfigOverrides {
        dim: Some(50),
        seed: Some(9),
        mode: Some(ProtocolMode::Deterministic),
        ..ConfigOverrides::default()
    });
    assert_eq!(c.experiment, "fig2");
    assert_eq!(c.dim, Some(50));
    assert_eq!(c.t, Some(0.05));
    assert_eq!(c.seed, 9);
    assert_eq!(c.scheme, Some(SchemeKind::Separated));
    assert_eq!(c.mode, Some(ProtocolMode::Deterministic));
}

#[test]
fn unknown_experiment_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let err = run_experiment(&config("table9", dir.path())).unwrap_err();
    assert!(matches!(err, Error::UnknownExperiment(ref n) if n == "table9"), "{err}");
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn invalid_numbers_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config("fig1", dir.path());
    c.t = Some(-1.0);
    assert!(run_experiment(&c).is_err());
    let mut c = config("fig1", dir.path());
    c.jobs = 0;
    assert!(run_experiment(&c).is_err());
    let mut c = config("fig1", dir.path());
    c.dim = Some(4);
    assert!(run_experiment(&c).is_err());
}

#[test]
fn failed_checks_surface_in_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config("single_photon", dir.path());
    // A much larger amplitude moves the error far from the reference value.
    c.t = Some(0.2);
    let report = run_experiment(&c).unwrap();
    assert!(!report.passed);
    assert!(report.checks.iter().any(|check| !check.pass));
    assert!(dir.path().join("report.json").is_file());
}
