//! End-to-end tests of the `refband` binary: exit-code contract, file
//! outputs, and determinism.

use std::path::Path;
use std::process::{Command, Output};

const REFERENCE_CONFIG: &str = "[model]\nmu = 0.508378\nsigma = \"sqrt2\"\nr = 0.00520074\n";
const DRIFTLESS_CONFIG: &str = "[model]\nmu = 0.0\nsigma = \"sqrt2\"\nr = 0.04\n";
// short-horizon overrides keep simulation tests fast
const FAST_SIM: &str =
    "[sim]\ndt = 0.01\nhorizon = 50.0\npaths = 8\nseed = 11\nx0 = 6.0\nallow_short_horizon = true\n";

fn refband(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg_path = dir.join("run.toml");
    std::fs::write(&cfg_path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_refband"))
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn data_rows(csv: &str) -> usize {
    // skip the schema comment and the header row
    csv.lines().filter(|l| !l.starts_with('#')).count().saturating_sub(1)
}

#[test]
fn solve_barrier_reference_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = refband(dir.path(), REFERENCE_CONFIG, &["solve-barrier"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("found 3 smooth-fit root(s)"), "{text}");
    assert!(text.contains("best barrier: b = 4.18138"), "{text}");
    let roots = std::fs::read_to_string(dir.path().join("roots.csv")).unwrap();
    assert!(roots.starts_with("# schema=refband.roots.v1\n"));
    assert_eq!(data_rows(&roots), 3);
    assert!(roots.contains("local_max") && roots.contains("local_min"));
    let curve = std::fs::read_to_string(dir.path().join("value_vs_b.csv")).unwrap();
    assert!(data_rows(&curve) > 100);
}

#[test]
fn solve_barrier_driftless_single_root() {
    let dir = tempfile::tempdir().unwrap();
    let out = refband(dir.path(), DRIFTLESS_CONFIG, &["solve-barrier"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("found 1 smooth-fit root(s)"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    // invalid rate
    let out = refband(dir.path(), "[model]\nmu = 0.0\nsigma = 1.0\nr = -0.1\n", &["solve-barrier"]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    // unknown key
    let out = refband(
        dir.path(),
        "[model]\nmu = 0.0\nsigma = 1.0\nr = 0.1\nextra = 3\n",
        &["solve-barrier"],
    );
    assert_eq!(out.status.code(), Some(2));
    // malformed band guess
    let out = refband(
        dir.path(),
        &format!("{REFERENCE_CONFIG}[band]\nguess = [1.0, 2.0]\n"),
        &["solve-band"],
    );
    assert_eq!(out.status.code(), Some(2));
    // missing --config entirely
    let out = Command::new(env!("CARGO_BIN_EXE_refband"))
        .arg("solve-barrier")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solve_band_reference_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = refband(dir.path(), REFERENCE_CONFIG, &["solve-band"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let report = std::fs::read_to_string(dir.path().join("band_report.txt")).unwrap();
    assert!(report.contains("theta   = 4.8488748"), "{report}");
    assert!(report.contains("lambda  = 7.9501783"), "{report}");
    assert!(report.contains("coefficient scale"), "{report}");
    let curves = std::fs::read_to_string(dir.path().join("band_curves.csv")).unwrap();
    assert!(curves.starts_with("# schema=refband.operators.v1\n"));
    assert!(data_rows(&curves) > 1000);
}

#[test]
fn solve_band_single_root_regime_is_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let out = refband(dir.path(), DRIFTLESS_CONFIG, &["solve-band"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("single-root regime"), "{}", stdout(&out));
}

#[test]
fn verify_band_passes_barrier_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = refband(dir.path(), REFERENCE_CONFIG, &["verify", "--candidate", "band"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("verdict: PASS"));

    let out = refband(dir.path(), REFERENCE_CONFIG, &["verify", "--candidate", "barrier"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("verdict: FAIL"));
    let violations = std::fs::read_to_string(dir.path().join("violations.csv")).unwrap();
    assert!(data_rows(&violations) > 0, "violation locations should be listed");
}

#[test]
fn verify_barrier_passes_when_drift_reduced() {
    // reducing the drift slightly leaves a single smooth-fit root whose
    // barrier value satisfies the inequalities
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[model]\nmu = 0.498378\nsigma = \"sqrt2\"\nr = 0.00520074\n";
    let out = refband(dir.path(), cfg, &["solve-barrier"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("found 1 smooth-fit root(s)"), "{}", stdout(&out));
    let out = refband(dir.path(), cfg, &["verify", "--candidate", "barrier"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
}

#[test]
fn sample_path_is_byte_identical_across_runs() {
    let dir1 = tempfile::tempdir().unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    let cfg = format!("{REFERENCE_CONFIG}{FAST_SIM}");
    let args = ["simulate", "--policy", "band", "--sample-path", "--stride", "100"];
    let out1 = refband(dir1.path(), &cfg, &args);
    let out2 = refband(dir2.path(), &cfg, &args);
    assert_eq!(out1.status.code(), Some(0), "stderr: {}", stderr(&out1));
    assert_eq!(out2.status.code(), Some(0));
    let p1 = std::fs::read(dir1.path().join("path.csv")).unwrap();
    let p2 = std::fs::read(dir2.path().join("path.csv")).unwrap();
    assert!(!p1.is_empty());
    assert_eq!(p1, p2, "same seed must give byte-identical path dumps");
}

#[test]
fn single_path_estimate_reports_na_std_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{REFERENCE_CONFIG}{FAST_SIM}");
    let out = refband(dir.path(), &cfg, &["--paths", "1", "simulate", "--policy", "barrier"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("estimate.csv")).unwrap();
    let data = csv.lines().last().unwrap();
    assert!(data.split(',').nth(1) == Some("na"), "{csv}");
}

#[test]
fn estimate_csv_schema_and_echo() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{REFERENCE_CONFIG}{FAST_SIM}");
    let out = refband(dir.path(), &cfg, &["--seed", "77", "simulate", "--policy", "barrier"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("estimate.csv")).unwrap();
    assert!(csv.starts_with("# schema=refband.estimate.v1\n"));
    let data = csv.lines().last().unwrap().split(',').collect::<Vec<_>>();
    // config echo: x0, dt, horizon, seed are the last four columns
    assert_eq!(&data[data.len() - 4..], &["6", "0.01", "50", "77"]);
}

#[test]
fn short_horizon_refused_without_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{REFERENCE_CONFIG}[sim]\ndt = 0.01\nhorizon = 50.0\npaths = 4\n");
    let out = refband(dir.path(), &cfg, &["simulate", "--policy", "barrier"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("horizon too short"), "{}", stderr(&out));
}

#[test]
fn sweep_single_point_and_empty_range() {
    let dir = tempfile::tempdir().unwrap();
    let out = refband(
        dir.path(),
        REFERENCE_CONFIG,
        &["sweep", "--axis", "mu", "--from", "0.508378", "--to", "0.508378", "--steps", "1"],
    );
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(csv.starts_with("# schema=refband.sweep.v1\n"));
    assert_eq!(data_rows(&csv), 1);
    let row = csv.lines().last().unwrap();
    assert!(row.starts_with("mu,0.508378,3,"), "{row}");

    let out = refband(
        dir.path(),
        REFERENCE_CONFIG,
        &["sweep", "--axis", "r", "--from", "0.1", "--to", "0.2", "--steps", "0"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn mu_sweep_shows_regime_transition() {
    let dir = tempfile::tempdir().unwrap();
    let out = refband(
        dir.path(),
        REFERENCE_CONFIG,
        &["sweep", "--axis", "mu", "--from", "0.498378", "--to", "0.518378", "--steps", "5"],
    );
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let counts: Vec<&str> = csv
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("axis"))
        .map(|l| l.split(',').nth(2).unwrap())
        .collect();
    assert_eq!(counts.len(), 5);
    assert!(counts.contains(&"1") && counts.contains(&"3"), "{counts:?}");
}
