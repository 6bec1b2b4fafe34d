//! End-to-end checks of the `sa-dyn` binary: exit codes, declared output
//! files, and byte-level determinism.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sa-dyn"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        r#"{
  "seed": 7,
  "dims": { "tokens": 4, "dim": 8, "heads": 2, "oscillator_dim": 4 },
  "variant": "ItrSa",
  "eta": 1.0,
  "gamma": "ones",
  "horizon": 8,
  "init": { "gaussian": { "std": 0.3 } }
}"#,
    )
    .unwrap();
    path
}

#[test]
fn lyapunov_writes_spectrum_and_prints_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = run(&[
        "lyapunov",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("lambda_max"));
    assert!(stdout.contains("lambda_mean"));
    assert!(stdout.contains("criticality"));
    let csv = std::fs::read_to_string(dir.path().join("run/spectrum.csv")).unwrap();
    assert!(csv.starts_with("rank,exponent\n"));
    assert!(dir.path().join("run/spectrum.json").exists());
}

#[test]
fn identical_config_and_seed_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    for sub in ["a", "b"] {
        let out = run(&[
            "lyapunov",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().join(sub).to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    for name in ["spectrum.csv", "spectrum.json"] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn simulate_round_trips_weights_archive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--steps",
        "3",
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("run/weights.archive")).unwrap();
    let (w, bank, seed) = sa_dyn::archive::load_weights(&text).unwrap();
    assert_eq!(seed, 7);
    assert_eq!(w.model_dim(), 8);
    assert!(bank.is_none());
    let traj = std::fs::read_to_string(dir.path().join("run/trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,pseudo_energy,"));
    assert_eq!(traj.lines().count(), 5); // header + t = 0..=3
}

#[test]
fn energy_csv_has_monotone_footer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = run(&[
        "energy",
        "--config",
        cfg.to_str().unwrap(),
        "--system",
        "single",
        "--steps",
        "50",
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("run/energy.csv")).unwrap();
    assert!(csv.starts_with("t,energy,delta\n"));
    assert!(csv.contains("# monotone_fraction,"));
}

#[test]
fn oscillator_csv_matches_declared_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "oscillator",
        "--grid-size",
        "5",
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("run/phase_scan.csv")).unwrap();
    assert!(csv.starts_with("eta,omega,max_abs_eig\n"));
    assert_eq!(csv.lines().count(), 26); // header + 25 cells
}

#[test]
fn unknown_subcommand_exits_64() {
    let out = run(&["definitely-not-a-subcommand"]);
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn invalid_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{
  "seed": 7,
  "dims": { "tokens": 4, "dim": 8, "heads": 3 },
  "variant": "ItrSa",
  "eta": 1.0,
  "gamma": "ones",
  "horizon": 8,
  "init": { "gaussian": { "std": 0.3 } }
}"#,
    )
    .unwrap();
    let out = run(&[
        "lyapunov",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn failed_numeric_check_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    // An absurd tolerance forces the jacobian check to fail numerically.
    let out = run(&[
        "jacobian-check",
        "--config",
        cfg.to_str().unwrap(),
        "--tolerance",
        "1e-30",
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bounds_seed_sweep_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = run(&[
        "bounds",
        "--config",
        cfg.to_str().unwrap(),
        "--seeds",
        "3",
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("run/bounds_sweep.csv")).unwrap();
    assert!(csv.starts_with("seed,kind,measured,bound,slack,satisfied\n"));
    assert_eq!(csv.lines().count(), 7); // header + 3 seeds × 2 kinds
}
