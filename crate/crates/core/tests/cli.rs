use std::fs;
use std::path::{Path, PathBuf};

use assim::cli::run_cli_with;

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run_cli_with(std::iter::once("assim").chain(args.iter().copied()), &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn lines(p: &Path) -> usize {
    fs::read_to_string(p).unwrap().lines().count()
}

#[test]
fn fuse_prints_midpoint() {
    let o = run(&["fuse", "--model", "10,1", "--obs", "20,1"]);
    assert_eq!((o.code, o.stdout.as_str(), o.stderr.as_str()), (0, "15,0.5\n", ""));
}

#[test]
fn fuse_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["fuse", "--model", "10,1", "--obs", "20,3", "--out", s(dir.path())]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let csv = fs::read_to_string(dir.path().join("fused.csv")).unwrap();
    assert_eq!(csv, "value,variance,weight_model,weight_obs,gain\n12.5,0.75,0.75,0.25,0.25\n");
    let again = run(&["fuse", "--config", s(&dir.path().join("manifest.cfg"))]);
    assert_eq!(again.stdout, "12.5,0.75\n");
}

#[test]
fn lorenz_twin_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["lorenz-twin", "--config", s(&data("twin.cfg")), "--out", s(dir.path())]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stderr.is_empty());
    for f in ["truth.csv", "noisy_run.csv", "da_run.csv", "errors.csv"] {
        assert_eq!(lines(&dir.path().join(f)), 2002, "{f}");
    }
    assert_eq!(lines(&dir.path().join("measurements.csv")), 41);
    assert_eq!(lines(&dir.path().join("events.csv")), 41);
    assert!(dir.path().join("manifest.cfg").exists());
    assert!(o.stdout.starts_with("threshold,"));
}

#[test]
fn seed_and_threshold_flags_land_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["lorenz-twin", "--seed", "7", "--threshold", "0.3", "--out", s(dir.path())]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let m = fs::read_to_string(dir.path().join("manifest.cfg")).unwrap();
    assert!(m.contains("\nseed = 7\n"));
    assert!(m.contains("\nthreshold = 0.3\n"));
}

#[test]
fn runoff_has_one_row_per_day() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "runoff",
        "--parcels",
        s(&data("parcels.csv")),
        "--days",
        s(&data("days.csv")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert_eq!(lines(&dir.path().join("fused.csv")), lines(&data("days.csv")));
}

#[test]
fn runoff_fills_blank_model_values() {
    let dir = tempfile::tempdir().unwrap();
    let days = dir.path().join("days.csv");
    fs::write(&days, "day,p_mm,model_q,model_var,obs_q,obs_var\n1,50,,1,10,1\n").unwrap();
    let out = dir.path().join("out");
    let o = run(&["runoff", "--days", s(&days), "--out", s(&out)]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("no model_q"), "{}", o.stderr);

    let cfg = dir.path().join("r.cfg");
    fs::write(&cfg, "days = days.csv\ncn = 80\n").unwrap();
    let o = run(&["runoff", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let fused = fs::read_to_string(out.join("fused.csv")).unwrap();
    let row: Vec<&str> = fused.lines().nth(1).unwrap().split(',').collect();
    // S = 63.5, Ia = 12.7, Q = 37.3^2 / 100.8
    let q: f64 = row[3].parse().unwrap();
    assert!((q - 37.3f64.powi(2) / 100.8).abs() < 1e-9, "{q}");
}

#[test]
fn config_errors_name_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "t_end = 20\nmeas_interval = soon\n").unwrap();
    let o = run(&["lorenz-twin", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(o.code, 1);
    assert!(o.stdout.is_empty());
    assert!(o.stderr.contains("bad.cfg:2:"), "{}", o.stderr);

    fs::write(&cfg, "t_end = 20\nmeas_intervall = 0.5\n").unwrap();
    let o = run(&["lorenz-twin", "--config", s(&cfg), "--out", s(dir.path())]);
    assert!(o.stderr.contains("bad.cfg:2: unknown key `meas_intervall`"), "{}", o.stderr);
}

#[test]
fn measurement_file_errors_name_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let meas = dir.path().join("m.csv");
    fs::write(&meas, "t,component,value,variance\n0.5,0,1,0.1\n1.0,0,2,0.1\n1.0,0,3,0.1\n").unwrap();
    let cfg = dir.path().join("twin.cfg");
    fs::write(&cfg, "measurements = m.csv\n").unwrap();
    let o = run(&["lorenz-twin", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("m.csv: line 4"), "{}", o.stderr);
}

#[test]
fn measurements_from_file_are_used() {
    let dir = tempfile::tempdir().unwrap();
    let meas = dir.path().join("m.csv");
    fs::write(&meas, "t,component,value,variance\n1,0,0,0\n2,0,1,0\n2,2,30,0\n").unwrap();
    let cfg = dir.path().join("twin.cfg");
    fs::write(&cfg, "measurements = m.csv\nt_end = 3\n").unwrap();
    let out = dir.path().join("out");
    let o = run(&["lorenz-twin", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert_eq!(lines(&out.join("events.csv")), 4);
    let da = fs::read_to_string(out.join("da_run.csv")).unwrap();
    let at_two = da.lines().find(|l| l.starts_with("2,")).unwrap();
    let v: Vec<f64> = at_two.split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!((v[1], v[3]), (1.0, 30.0));
}

#[test]
fn usage_errors_are_nonzero() {
    let o = run(&["lorenz-twin", "--frobnicate"]);
    assert_ne!(o.code, 0);
    assert!(!o.stderr.is_empty());
    let o = run(&["teleport"]);
    assert_ne!(o.code, 0);
    let o = run(&["lorenz-twin"]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("--out"));
}

#[test]
fn manifest_for_another_scenario_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["fuse", "--model", "1,1", "--obs", "2,1", "--out", s(dir.path())]);
    assert_eq!(o.code, 0);
    let o = run(&["runoff", "--config", s(&dir.path().join("manifest.cfg")), "--out", s(dir.path())]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("scenario"), "{}", o.stderr);
}

#[test]
fn sweep_summary_has_one_row_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["sweep", "--count", "3", "--seed", "5", "--out", s(dir.path())]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let seeds: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(seeds, ["5", "6", "7"]);
}
