//! Scenario configuration, the built-in experiments and artifact emission.
//!
//! Every run writes plain CSV plus a gnuplot-friendly `.dat` curve and a
//! manifest whose body is itself a loadable config reproducing the run.

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{
    apply_env_seed, load_config, log_spaced, parse_config, IcKind, IcConfig, Scale, ScenarioConfig,
    BUILTIN_SCENARIOS, DEFAULT_SEED, SEED_ENV,
};

use crate::analysis::{
    consistency_order, convexity_probe, sample_count, sample_initial_conditions, simulate_closed_loop_with,
    sweep_max_distance, ConsistencyReport, InitialConditionSpec, SweepOptions, SweepRow, TrajectoryRecord,
};
use crate::barrier::{coercivity_constants, BarrierFamily, CoercivityReport};
use crate::controller::{NominalController, SdcbfController};
use crate::dynamics::{pendulum_model, to_control_affine};
use crate::{Error, Result, Vector};

pub const SUMMARY_HEADER: &str = "scenario,h,max_distance,n_failures";
pub const TRAJECTORY_HEADER: &str = "scenario,h,trial,k,t,s_value,phi_residual,distance,admissible";

/// Collar width and sample count used by `verify-barrier`.
pub const COERCIVITY_COLLAR: f64 = 0.1;
pub const COERCIVITY_RESOLUTION: usize = 10_000;

pub fn build_controller(cfg: &ScenarioConfig) -> Result<SdcbfController> {
    let mech = pendulum_model(cfg.system);
    let system = to_control_affine(&mech);
    let barrier =
        BarrierFamily::new(cfg.safe_set.clone(), cfg.alpha, system.block_structure().map(|b| b.block_len));
    SdcbfController::new(system, barrier, cfg.tableau.clone(), NominalController::new(cfg.nominal, &mech), cfg.solver)
}

/// Paths and results of a sweep run.
#[derive(Debug)]
pub struct RunArtifacts {
    pub summary: PathBuf,
    pub trajectories: Option<PathBuf>,
    pub curve: PathBuf,
    pub intersample: Option<PathBuf>,
    pub manifest: PathBuf,
    pub rows: Vec<SweepRow>,
}

impl RunArtifacts {
    /// The earliest trajectory failure, by period then initial condition.
    pub fn status(&self) -> Result<()> {
        match self.rows.iter().find_map(|r| r.first_failure.clone()) {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

pub fn summary_csv(scenario: &str, rows: &[SweepRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{scenario},{},{},{}\n", r.h, r.max_distance, r.n_failures));
    }
    out
}

fn curve_dat(cfg: &ScenarioConfig, rows: &[SweepRow]) -> String {
    let mut out = format!("# {} worst-case sampled distance to the safe set\n", cfg.scenario);
    out.push_str("# h max_distance min_invariant_delta n_failures n_inadmissible\n");
    for r in rows {
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            r.h, r.max_distance, r.min_invariant_delta, r.n_failures, r.n_inadmissible
        ));
    }
    out
}

fn write_trajectory_rows(
    w: &mut impl Write,
    scenario: &str,
    h: f64,
    trial: usize,
    rec: &TrajectoryRecord,
) -> std::io::Result<()> {
    for k in 0..rec.len() {
        let phi = rec.decrement_residuals.get(k).map(|p| p.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{scenario},{h},{trial},{k},{},{},{phi},{},{}",
            rec.sample_times[k], rec.barrier_values[k], rec.distances[k], rec.admissibility_ok
        )?;
    }
    Ok(())
}

fn manifest(cfg: &ScenarioConfig, elapsed: f64, extra: &[(&str, String)]) -> String {
    let mut out = String::from("# sdcbf run manifest\n");
    out.push_str(&format!("# version = {}\n", env!("CARGO_PKG_VERSION")));
    out.push_str(&format!("# wall_time_s = {elapsed:.3}\n"));
    for (k, v) in extra {
        out.push_str(&format!("# {k} = {v}\n"));
    }
    out.push_str(&cfg.to_config_string());
    out
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Runs the period sweep and writes `summary.csv`, `trajectories.csv`,
/// `sweep.dat` and `manifest.txt` into `cfg.out`.
///
/// Trajectory failures do not abort the run; they are counted in the summary
/// and surfaced by [`RunArtifacts::status`].
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let started = Instant::now();
    let ctrl = build_controller(cfg)?;
    let oracle = cfg.oracle();
    let initial = sample_initial_conditions(&cfg.initial_spec())?;
    let opts = SweepOptions { jobs: cfg.jobs, keep_records: cfg.write_trajectories, intersample: cfg.intersample };
    let rows = sweep_max_distance(&ctrl, &oracle, &initial, &cfg.periods, cfg.horizon, &opts)?;

    ensure_dir(&cfg.out)?;
    let summary = cfg.out.join("summary.csv");
    write_file(&summary, &summary_csv(&cfg.scenario, &rows))?;
    let curve = cfg.out.join("sweep.dat");
    write_file(&curve, &curve_dat(cfg, &rows))?;

    let trajectories = if cfg.write_trajectories {
        let path = cfg.out.join("trajectories.csv");
        let file = File::create(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "{TRAJECTORY_HEADER}")?;
        for row in &rows {
            for (trial, rec) in row.records.iter().enumerate() {
                write_trajectory_rows(&mut w, &cfg.scenario, row.h, trial, rec)?;
            }
        }
        w.flush()?;
        Some(path)
    } else {
        None
    };

    let intersample = if cfg.intersample {
        let path = cfg.out.join("intersample.csv");
        let mut body = String::from("scenario,h,max_intersample_distance\n");
        for r in &rows {
            body.push_str(&format!("{},{},{}\n", cfg.scenario, r.h, r.max_intersample.unwrap_or(0.0)));
        }
        write_file(&path, &body)?;
        Some(path)
    } else {
        None
    };

    let manifest_path = cfg.out.join("manifest.txt");
    let extra = [("initial_conditions", initial.len().to_string()), ("periods", rows.len().to_string())];
    write_file(&manifest_path, &manifest(cfg, started.elapsed().as_secs_f64(), &extra))?;

    Ok(RunArtifacts { summary, trajectories, curve, intersample, manifest: manifest_path, rows })
}

/// A single closed-loop trajectory, written to `trajectory.csv`.
///
/// Defaults to the first configured initial condition and the first period.
pub fn run_simulate(cfg: &ScenarioConfig, x0: Option<Vector>, h: Option<f64>) -> Result<(TrajectoryRecord, PathBuf)> {
    cfg.validate()?;
    let ctrl = build_controller(cfg)?;
    let x0 = match x0 {
        Some(x) => x,
        None => sample_initial_conditions(&cfg.initial_spec())?
            .into_iter()
            .next()
            .ok_or_else(|| Error::config("no initial conditions configured"))?,
    };
    let h = h.unwrap_or(cfg.periods[0]);
    let rec = simulate_closed_loop_with(&ctrl, &cfg.oracle(), &x0, h, cfg.horizon, cfg.intersample)?;
    ensure_dir(&cfg.out)?;
    let path = cfg.out.join("trajectory.csv");
    let mut body = Vec::new();
    writeln!(body, "{TRAJECTORY_HEADER}")?;
    write_trajectory_rows(&mut body, &cfg.scenario, h, 0, &rec)?;
    write_file(&path, &String::from_utf8(body).expect("utf-8 csv"))?;
    Ok((rec, path))
}

/// Periods used by `consistency` when none are given: nine values from
/// `10⁻²` down to `10⁻⁴`.
pub fn default_consistency_periods() -> Vec<f64> {
    log_spaced(1e-4, 1e-2, 9).expect("valid range")
}

/// One-step consistency of the configured tableau with `u ≡ 0` on a grid
/// over `[−1, 1]ⁿ`; writes `consistency.csv`.
pub fn run_consistency(cfg: &ScenarioConfig, periods: Option<Vec<f64>>) -> Result<(ConsistencyReport, PathBuf)> {
    cfg.validate()?;
    let system = to_control_affine(&pendulum_model(cfg.system));
    let n = system.state_dim();
    let side = if n <= 2 { 9 } else { 5 };
    let grid = sample_initial_conditions(&InitialConditionSpec::Grid { ranges: vec![(-1.0, 1.0); n], shape: vec![side; n] })?;
    let periods = periods.unwrap_or_else(default_consistency_periods);
    let m = system.input_dim();
    let report = consistency_order(&system, |_: &Vector| Ok(Vector::zeros(m)), &cfg.tableau, &cfg.oracle(), &grid, &periods)?;
    ensure_dir(&cfg.out)?;
    let path = cfg.out.join("consistency.csv");
    let mut body = String::from("h,max_error,failed_points\n");
    for ((h, e), f) in periods.iter().zip(&report.max_errors).zip(&report.failed_points) {
        body.push_str(&format!("{h},{e},{f}\n"));
    }
    body.push_str(&format!("# slope = {}\n# intercept = {}\n", report.slope, report.intercept));
    write_file(&path, &body)?;
    Ok((report, path))
}

/// Coercivity constants of the configured safe set; writes `coercivity.txt`.
pub fn run_verify_barrier(cfg: &ScenarioConfig) -> Result<(CoercivityReport, PathBuf)> {
    let barrier = build_controller(cfg)?.barrier;
    let report = coercivity_constants(&barrier, COERCIVITY_COLLAR, COERCIVITY_RESOLUTION)?;
    ensure_dir(&cfg.out)?;
    let path = cfg.out.join("coercivity.txt");
    write_file(&path, &report.to_report_string())?;
    Ok((report, path))
}

/// Convexity of the decrement residual in `u`, probed at up to ten configured
/// initial states for every period; writes `convexity.csv`.
pub fn run_probe_convexity(cfg: &ScenarioConfig, trials: usize) -> Result<(f64, PathBuf)> {
    cfg.validate()?;
    let ctrl = build_controller(cfg)?;
    let states: Vec<Vector> = sample_initial_conditions(&cfg.initial_spec())?.into_iter().take(10).collect();
    let mut body = String::from("h,max_violation\n");
    let mut worst = f64::NEG_INFINITY;
    for (i, &h) in cfg.periods.iter().enumerate() {
        let mut row = f64::NEG_INFINITY;
        for (j, x) in states.iter().enumerate() {
            let seed = cfg.seed ^ ((i as u64) << 32 | j as u64);
            row = row.max(convexity_probe(&ctrl.barrier, &ctrl.tableau, &ctrl.system, x, h, trials, seed)?);
        }
        worst = worst.max(row);
        body.push_str(&format!("{h},{row}\n"));
    }
    ensure_dir(&cfg.out)?;
    let path = cfg.out.join("convexity.csv");
    write_file(&path, &body)?;
    Ok((worst, path))
}

/// Samples per trajectory at period `h`, counting the initial state.
pub fn samples_per_trajectory(h: f64, horizon: f64) -> usize {
    sample_count(h, horizon) + 1
}
