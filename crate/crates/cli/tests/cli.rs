use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sdcbf(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sdcbf"));
    cmd.args(args).env_remove("SDCBF_SEED");
    if let Some(s) = env_seed {
        cmd.env("SDCBF_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.cfg");
    let text = format!(
        "scenario = single_halfspace\nperiods.min = 0.05\nperiods.max = 0.2\nperiods.count = 2\nhorizon = 1\n\
         ic.shape = 3x3\nseed = 7\nout = {}\n",
        dir.join("run").display()
    );
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn manifest_seed(dir: &Path) -> u64 {
    let text = fs::read_to_string(dir.join("run/manifest.txt")).unwrap();
    let line = text.lines().find(|l| l.starts_with("seed = ")).expect("seed echoed");
    line["seed = ".len()..].trim().parse().unwrap()
}

#[test]
fn unknown_scenario_is_a_config_error() {
    let out = sdcbf(&["verify-barrier", "--scenario", "no_such_thing"], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    fs::write(&path, "scenario = single_halfspace\nbogus_key = 3\n").unwrap();
    let out = sdcbf(&["sweep", "--config", path.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_key"));
}

#[test]
fn missing_scenario_selector_is_rejected() {
    let out = sdcbf(&["sweep"], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = sdcbf(&["sweep", "--config", &cfg, "--jobs", "2"], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(dir.path().join("run/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(dir.path().join("run/trajectories.csv").exists());
    assert!(dir.path().join("run/sweep.dat").exists());
}

#[test]
fn verify_barrier_reports_constants() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("vb");
    let out = sdcbf(
        &["verify-barrier", "--scenario", "single_config_ellipsoid", "--out", out_dir.to_str().unwrap()],
        None,
    );
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().any(|l| l == "sigma = 2"), "{stdout}");
    assert!(out_dir.join("coercivity.txt").exists());
}

#[test]
fn seed_precedence_is_config_then_env_then_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let base = ["sweep", "--config", cfg.as_str(), "--no-trajectories"];

    assert!(sdcbf(&base, None).status.success());
    assert_eq!(manifest_seed(dir.path()), 7);

    assert!(sdcbf(&base, Some("11")).status.success());
    assert_eq!(manifest_seed(dir.path()), 11);

    let mut with_flag = base.to_vec();
    with_flag.extend(["--seed", "13"]);
    assert!(sdcbf(&with_flag, Some("11")).status.success());
    assert_eq!(manifest_seed(dir.path()), 13);
}

#[test]
fn simulate_accepts_negative_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sim");
    let out = sdcbf(
        &[
            "simulate", "--scenario", "single_config_ellipsoid", "--x0", "-0.3,0.5", "--period", "0.1", "--out",
            out_dir.to_str().unwrap(),
        ],
        None,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("trajectory.csv").exists());
}
