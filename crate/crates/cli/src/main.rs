use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use sdcbf::harness::{self, ScenarioConfig, Scale};
use sdcbf::{Error, Result};

#[derive(Parser)]
#[command(name = "sdcbf", version, about = "Sampled-data control barrier function experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario config file.
    #[arg(long, conflicts_with = "scenario")]
    config: Option<PathBuf>,
    /// Built-in scenario name, used when no config file is given.
    #[arg(long)]
    scenario: Option<String>,
    /// Overrides the config seed and $SDCBF_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one closed-loop trajectory.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Initial state as comma-separated values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        /// Sample period (default: smallest configured period).
        #[arg(long)]
        period: Option<f64>,
    },
    /// Worst-case distance to the safe set across sample periods.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Initial-condition scale for built-in scenarios (desk or full).
        #[arg(long)]
        scale: Option<String>,
        /// Skip the per-trajectory CSV.
        #[arg(long)]
        no_trajectories: bool,
    },
    /// Empirical one-step consistency order of the configured tableau.
    Consistency {
        #[command(flatten)]
        common: Common,
        /// Sample periods as comma-separated values.
        #[arg(long, value_delimiter = ',')]
        periods: Option<Vec<f64>>,
    },
    /// Coercivity constants of the configured safe set.
    VerifyBarrier {
        #[command(flatten)]
        common: Common,
    },
    /// Sampled convexity check of the decrement residual in the input.
    ProbeConvexity {
        #[command(flatten)]
        common: Common,
        /// Random triples per (state, period) pair.
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
}

fn resolve(common: &Common, scale: Option<&str>) -> Result<ScenarioConfig> {
    let mut cfg = match (&common.config, &common.scenario) {
        (Some(path), _) => harness::load_config(path)?,
        (None, Some(name)) => {
            let mut text = format!("scenario = {name}\n");
            if let Some(s) = scale {
                text.push_str(&format!("scale = {s}\n"));
            }
            let mut cfg = harness::parse_config(&text)?;
            harness::apply_env_seed(&mut cfg)?;
            cfg
        }
        (None, None) => {
            return Err(Error::Config { line: None, message: "either --config or --scenario is required".into() })
        }
    };
    if common.config.is_some() {
        if let Some(s) = scale {
            let scale: Scale = s.parse()?;
            if scale != cfg.scale {
                return Err(Error::Config { line: None, message: "--scale conflicts with the config file".into() });
            }
        }
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if common.jobs.is_some() {
        cfg.jobs = common.jobs;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, x0, period } => {
            let cfg = resolve(&common, None)?;
            let (rec, path) = harness::run_simulate(&cfg, x0.map(DVector::from_vec), period)?;
            println!("samples = {}", rec.len());
            println!("min_barrier = {}", rec.min_barrier());
            println!("max_distance = {}", rec.max_distance());
            println!("max_residual = {}", rec.max_residual());
            println!("admissible = {}", rec.admissibility_ok);
            println!("wrote {}", path.display());
            match rec.failure {
                Some(f) => Err(f.error),
                None => Ok(()),
            }
        }
        Command::Sweep { common, scale, no_trajectories } => {
            let mut cfg = resolve(&common, scale.as_deref())?;
            if no_trajectories {
                cfg.write_trajectories = false;
            }
            let art = harness::run_scenario(&cfg)?;
            println!("{:>12} {:>14} {:>14} {:>9}", "h", "max_distance", "min_delta", "failures");
            for r in &art.rows {
                println!("{:>12.6} {:>14.6e} {:>14.6e} {:>9}", r.h, r.max_distance, r.min_invariant_delta, r.n_failures);
            }
            println!("wrote {}", art.summary.display());
            art.status()
        }
        Command::Consistency { common, periods } => {
            let cfg = resolve(&common, None)?;
            let (rep, path) = harness::run_consistency(&cfg, periods)?;
            println!("tableau = {}", cfg.tableau.name());
            println!("slope = {}", rep.slope);
            println!("intercept = {}", rep.intercept);
            println!("wrote {}", path.display());
            if rep.is_partial() {
                return Err(Error::IntegrationFailure { steps: 0, t: 0.0, reason: "oracle failed on some grid points".into() });
            }
            Ok(())
        }
        Command::VerifyBarrier { common } => {
            let cfg = resolve(&common, None)?;
            let (rep, path) = harness::run_verify_barrier(&cfg)?;
            print!("{}", rep.to_report_string());
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::ProbeConvexity { common, trials } => {
            let cfg = resolve(&common, None)?;
            let (worst, path) = harness::run_probe_convexity(&cfg, trials)?;
            println!("max_violation = {worst}");
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
