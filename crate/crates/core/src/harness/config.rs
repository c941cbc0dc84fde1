//! Scenario configuration files.
//!
//! ```text
//! # comments run to end of line
//! scenario = single_halfspace
//! scale = full
//!
//! [solver]
//! feas_tol = 1e-9
//! ```
//!
//! A `[section]` header prefixes the keys that follow it (`solver.feas_tol`).
//! `scenario` names a built-in experiment; every other key overrides one of
//! its settings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::analysis::InitialConditionSpec;
use crate::barrier::{ComparisonFunction, SafeSet, VELOCITY_SAMPLE_BOUND};
use crate::controller::{NominalKind, SolverConfig};
use crate::discretization::{standard_tableau, ButcherTableau, ExactMapOracle};
use crate::dynamics::{PendulumKind, WorkingRegion};
use crate::{Error, Matrix, Result};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "SDCBF_SEED";

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_HORIZON: f64 = 10.0;
pub const DEFAULT_PERIOD_COUNT: usize = 11;

const KEYS: &[&str] = &[
    "scenario",
    "system",
    "safe_set",
    "tableau",
    "tableau.b",
    "tableau.a",
    "nominal",
    "alpha",
    "periods",
    "periods.min",
    "periods.max",
    "periods.count",
    "horizon",
    "ic.kind",
    "ic.ranges",
    "ic.shape",
    "ic.count",
    "seed",
    "out",
    "scale",
    "solver.feas_tol",
    "solver.kkt_tol",
    "solver.max_newton_iters",
    "solver.bracket_growth",
    "oracle.rel_tol",
    "oracle.abs_tol",
    "oracle.max_steps",
    "region.bounds",
    "jobs",
    "diagnostics.intersample",
    "write_trajectories",
];

/// Names of the four built-in experiments.
pub const BUILTIN_SCENARIOS: [&str; 4] =
    ["single_lyapunov", "single_config_ellipsoid", "single_halfspace", "double_config_ball"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// 100 sampled or 9×9 gridded initial states.
    Desk,
    /// 500 sampled or 41×41 gridded initial states.
    Full,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            other => Err(Error::config(format!("unknown scale `{other}`"))),
        }
    }
}

impl Scale {
    pub fn name(&self) -> &'static str {
        match self {
            Scale::Desk => "desk",
            Scale::Full => "full",
        }
    }

    fn uniform_count(&self) -> usize {
        match self {
            Scale::Desk => 100,
            Scale::Full => 500,
        }
    }

    fn grid_side(&self) -> usize {
        match self {
            Scale::Desk => 9,
            Scale::Full => 41,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcKind {
    Grid,
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcConfig {
    pub kind: IcKind,
    pub ranges: Vec<(f64, f64)>,
    /// Grid points per coordinate.
    pub shape: Vec<usize>,
    /// Number of uniform draws.
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub scenario: String,
    pub system: PendulumKind,
    pub safe_set: SafeSet,
    pub tableau: ButcherTableau,
    pub nominal: NominalKind,
    pub alpha: ComparisonFunction,
    pub periods: Vec<f64>,
    pub horizon: f64,
    pub initial: IcConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub scale: Scale,
    pub solver: SolverConfig,
    pub oracle_rel_tol: f64,
    pub oracle_abs_tol: f64,
    pub oracle_max_steps: usize,
    /// Symmetric box `|x_i| < bound` used as the working region.
    pub region_bound: Option<f64>,
    pub jobs: Option<usize>,
    pub intersample: bool,
    pub write_trajectories: bool,
}

/// `n` log-spaced values from `lo` to `hi`, endpoints exact.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0) || !(hi > lo) || n < 2 {
        return Err(Error::config("log-spaced periods need 0 < min < max and count >= 2"));
    }
    let ratio = (hi / lo).ln();
    Ok((0..n)
        .map(|i| match i {
            0 => lo,
            i if i == n - 1 => hi,
            i => lo * (ratio * i as f64 / (n - 1) as f64).exp(),
        })
        .collect())
}

impl ScenarioConfig {
    /// One of [`BUILTIN_SCENARIOS`] at the given scale.
    pub fn builtin(name: &str, scale: Scale) -> Result<Self> {
        let (system, set, tableau, nominal, (lo, hi)) = match name {
            "single_lyapunov" => (PendulumKind::Single, "lyapunov", "euler", NominalKind::FlPd, (0.05, 0.5)),
            "single_config_ellipsoid" => {
                (PendulumKind::Single, "config_ellipsoid", "midpoint", NominalKind::Zero, (0.05, 0.5))
            }
            "single_halfspace" => (PendulumKind::Single, "halfspace", "midpoint", NominalKind::Zero, (0.05, 0.5)),
            "double_config_ball" => (PendulumKind::Double, "config_ball", "midpoint", NominalKind::Zero, (0.01, 0.1)),
            other => {
                return Err(Error::config(format!(
                    "unknown scenario `{other}` (expected one of {})",
                    BUILTIN_SCENARIOS.join(", ")
                )))
            }
        };
        let safe_set = SafeSet::from_name(set)?;
        let side = scale.grid_side();
        let initial = match &safe_set {
            SafeSet::LyapunovSublevel { .. } => IcConfig {
                kind: IcKind::Uniform,
                ranges: safe_set.sampling_box(0.0, VELOCITY_SAMPLE_BOUND),
                shape: vec![side; 2],
                count: scale.uniform_count(),
            },
            SafeSet::ConfigEllipsoid1d => IcConfig {
                kind: IcKind::Grid,
                ranges: vec![(-1.0, 1.0), (-5.0, 5.0)],
                shape: vec![side; 2],
                count: scale.uniform_count(),
            },
            SafeSet::Halfspace1d { offset } => IcConfig {
                kind: IcKind::Grid,
                ranges: vec![(-offset, 1.0), (-5.0, 5.0)],
                shape: vec![side; 2],
                count: scale.uniform_count(),
            },
            SafeSet::ConfigBall2d => IcConfig {
                kind: IcKind::Uniform,
                ranges: vec![(-1.0, 1.0); 4],
                shape: vec![side; 4],
                count: scale.uniform_count(),
            },
        };
        let oracle = ExactMapOracle::default();
        Ok(Self {
            scenario: name.to_string(),
            system,
            safe_set,
            tableau: standard_tableau(tableau)?,
            nominal,
            alpha: ComparisonFunction::Identity,
            periods: log_spaced(lo, hi, DEFAULT_PERIOD_COUNT)?,
            horizon: DEFAULT_HORIZON,
            initial,
            seed: DEFAULT_SEED,
            out: PathBuf::from("out").join(name),
            scale,
            solver: SolverConfig::default(),
            oracle_rel_tol: oracle.rel_tol,
            oracle_abs_tol: oracle.abs_tol,
            oracle_max_steps: oracle.max_steps,
            region_bound: None,
            jobs: None,
            intersample: false,
            write_trajectories: true,
        })
    }

    pub fn state_dim(&self) -> usize {
        2 * match self.system {
            PendulumKind::Single => 1,
            PendulumKind::Double => 2,
        }
    }

    pub fn oracle(&self) -> ExactMapOracle {
        let oracle = ExactMapOracle {
            rel_tol: self.oracle_rel_tol,
            abs_tol: self.oracle_abs_tol,
            max_steps: self.oracle_max_steps,
            working_region: None,
        };
        match self.region_bound {
            Some(b) => oracle.with_working_region(WorkingRegion::symmetric(self.state_dim(), b)),
            None => oracle,
        }
    }

    pub fn initial_spec(&self) -> InitialConditionSpec {
        match self.initial.kind {
            IcKind::Grid => {
                InitialConditionSpec::Grid { ranges: self.initial.ranges.clone(), shape: self.initial.shape.clone() }
            }
            IcKind::Uniform => InitialConditionSpec::UniformInSet {
                ranges: self.initial.ranges.clone(),
                set: self.safe_set.clone(),
                count: self.initial.count,
                seed: self.seed,
            },
        }
    }

    /// Cross-field checks run after all overrides are applied.
    pub fn validate(&self) -> Result<()> {
        let n = self.state_dim();
        if self.safe_set.state_dim() != n {
            return Err(Error::config(format!(
                "safe set `{}` does not fit system `{}`",
                self.safe_set.name(),
                self.system.name()
            )));
        }
        if self.initial.ranges.len() != n {
            return Err(Error::config(format!("ic.ranges needs {n} ranges")));
        }
        if self.initial.kind == IcKind::Grid && self.initial.shape.len() != n {
            return Err(Error::config(format!("ic.shape needs {n} entries")));
        }
        if self.periods.is_empty()
            || self.periods.iter().any(|h| !(*h > 0.0))
            || self.periods.windows(2).any(|w| !(w[0] < w[1]))
        {
            return Err(Error::config("periods must be positive and strictly ascending"));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::config("horizon must be positive"));
        }
        if self.periods.last().is_some_and(|h| *h > self.horizon) {
            return Err(Error::config("periods must not exceed the horizon"));
        }
        if !(self.oracle_rel_tol > 0.0) || !(self.oracle_abs_tol > 0.0) || self.oracle_max_steps == 0 {
            return Err(Error::config("oracle tolerances and step budget must be positive"));
        }
        if self.jobs == Some(0) {
            return Err(Error::config("jobs must be positive"));
        }
        self.solver.validate()
    }

    /// Fully resolved settings in the config-file format; loading the result
    /// reproduces this configuration.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let list = |xs: &[f64]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let _ = writeln!(out, "scenario = {}", self.scenario);
        let _ = writeln!(out, "scale = {}", self.scale.name());
        let _ = writeln!(out, "system = {}", self.system.name());
        let _ = writeln!(out, "safe_set = {}", self.safe_set.name());
        if standard_tableau(self.tableau.name()).is_ok_and(|t| t == self.tableau) {
            let _ = writeln!(out, "tableau = {}", self.tableau.name());
        } else {
            let a = self.tableau.coefficients();
            let rows: Vec<String> = (0..a.nrows())
                .map(|i| a.row(i).iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", "))
                .collect();
            let _ = writeln!(out, "tableau.b = {}", list(self.tableau.weights()));
            let _ = writeln!(out, "tableau.a = {}", rows.join("; "));
        }
        let _ = writeln!(out, "nominal = {}", self.nominal);
        let _ = writeln!(out, "alpha = {}", self.alpha);
        let _ = writeln!(out, "periods = {}", list(&self.periods));
        let _ = writeln!(out, "horizon = {}", self.horizon);
        let _ = writeln!(
            out,
            "ic.kind = {}",
            match self.initial.kind {
                IcKind::Grid => "grid",
                IcKind::Uniform => "uniform",
            }
        );
        let ranges: Vec<String> = self.initial.ranges.iter().map(|(lo, hi)| format!("{lo}:{hi}")).collect();
        let _ = writeln!(out, "ic.ranges = {}", ranges.join(", "));
        let shape: Vec<String> = self.initial.shape.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(out, "ic.shape = {}", shape.join("x"));
        let _ = writeln!(out, "ic.count = {}", self.initial.count);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "out = {}", self.out.display());
        let _ = writeln!(out, "solver.feas_tol = {}", self.solver.feas_tol);
        let _ = writeln!(out, "solver.kkt_tol = {}", self.solver.kkt_tol);
        let _ = writeln!(out, "solver.max_newton_iters = {}", self.solver.max_newton_iters);
        let _ = writeln!(out, "solver.bracket_growth = {}", self.solver.bracket_growth);
        let _ = writeln!(out, "oracle.rel_tol = {}", self.oracle_rel_tol);
        let _ = writeln!(out, "oracle.abs_tol = {}", self.oracle_abs_tol);
        let _ = writeln!(out, "oracle.max_steps = {}", self.oracle_max_steps);
        if let Some(b) = self.region_bound {
            let _ = writeln!(out, "region.bounds = {b}");
        }
        if let Some(j) = self.jobs {
            let _ = writeln!(out, "jobs = {j}");
        }
        let _ = writeln!(out, "diagnostics.intersample = {}", self.intersample);
        let _ = writeln!(out, "write_trajectories = {}", self.write_trajectories);
        out
    }
}

struct Entry {
    value: String,
    line: usize,
}

fn parse_entries(text: &str) -> Result<BTreeMap<String, Entry>> {
    let mut entries = BTreeMap::new();
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(rest) = body.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::config_at(line, "unterminated section header"))?
                .trim();
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(Error::config_at(line, format!("bad section name `{name}`")));
            }
            section = format!("{name}.");
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| Error::config_at(line, format!("expected `key = value`, got `{body}`")))?;
        let key = format!("{section}{}", key.trim());
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::config_at(line, format!("unknown key `{key}`")));
        }
        let value = value.trim().to_string();
        if value.is_empty() {
            return Err(Error::config_at(line, format!("empty value for `{key}`")));
        }
        if let Some(prev) = entries.insert(key.clone(), Entry { value, line }) {
            return Err(Error::config_at(line, format!("`{key}` already set at line {}", prev.line)));
        }
    }
    Ok(entries)
}

fn parse_value<T: FromStr>(e: &Entry, key: &str) -> Result<T> {
    e.value.parse().map_err(|_| Error::config_at(e.line, format!("invalid value `{}` for `{key}`", e.value)))
}

fn parse_list(e: &Entry, key: &str) -> Result<Vec<f64>> {
    e.value
        .split(',')
        .map(|s| {
            s.trim().parse::<f64>().map_err(|_| Error::config_at(e.line, format!("invalid number `{}` in `{key}`", s.trim())))
        })
        .collect()
}

fn parse_ranges(e: &Entry) -> Result<Vec<(f64, f64)>> {
    e.value
        .split(',')
        .map(|r| {
            let bad = || Error::config_at(e.line, format!("invalid range `{}` (expected lo:hi)", r.trim()));
            let (lo, hi) = r.split_once(':').ok_or_else(bad)?;
            let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
            let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
            if !(lo <= hi) {
                return Err(bad());
            }
            Ok((lo, hi))
        })
        .collect()
}

fn parse_shape(e: &Entry) -> Result<Vec<usize>> {
    e.value
        .split(['x', ','])
        .map(|s| match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::config_at(e.line, format!("invalid grid size `{}`", s.trim()))),
        })
        .collect()
}

fn parse_tableau(b: Option<&Entry>, a: Option<&Entry>) -> Result<Option<ButcherTableau>> {
    let (b, a) = match (b, a) {
        (None, None) => return Ok(None),
        (Some(b), Some(a)) => (b, a),
        (Some(e), None) | (None, Some(e)) => {
            return Err(Error::config_at(e.line, "tableau.b and tableau.a must be given together"))
        }
    };
    let weights = parse_list(b, "tableau.b")?;
    let p = weights.len();
    let mut coeffs = Vec::with_capacity(p * p);
    let rows: Vec<&str> = a.value.split(';').collect();
    if rows.len() != p {
        return Err(Error::config_at(a.line, format!("tableau.a needs {p} rows")));
    }
    for row in rows {
        let entry = Entry { value: row.to_string(), line: a.line };
        let vals = parse_list(&entry, "tableau.a")?;
        if vals.len() != p {
            return Err(Error::config_at(a.line, format!("tableau.a rows need {p} entries")));
        }
        coeffs.extend(vals);
    }
    ButcherTableau::new("custom", weights, Matrix::from_row_slice(p, p, &coeffs))
        .map(Some)
        .map_err(|e| match e {
            Error::Config { message, .. } => Error::config_at(a.line, message),
            other => other,
        })
}

fn parse_bool(e: &Entry, key: &str) -> Result<bool> {
    match e.value.as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config_at(e.line, format!("invalid boolean `{}` for `{key}`", e.value))),
    }
}

/// Parses config text; the seed environment override is not consulted.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let entries = parse_entries(text)?;
    let scenario = entries.get("scenario").ok_or_else(|| Error::config("missing required key `scenario`"))?;
    let scale: Scale = match entries.get("scale") {
        Some(e) => e.value.parse().map_err(|_| Error::config_at(e.line, format!("unknown scale `{}`", e.value)))?,
        None => Scale::Desk,
    };
    let mut cfg = ScenarioConfig::builtin(&scenario.value, scale).map_err(|e| match e {
        Error::Config { message, .. } => Error::config_at(scenario.line, message),
        other => other,
    })?;
    let at = |e: &Entry, err: Error| match err {
        Error::Config { message, .. } => Error::config_at(e.line, message),
        other => other,
    };

    for (key, e) in &entries {
        match key.as_str() {
            "scenario" | "scale" | "tableau.b" | "tableau.a" | "periods.min" | "periods.max" | "periods.count" => {}
            "system" => cfg.system = e.value.parse().map_err(|err| at(e, err))?,
            "safe_set" => cfg.safe_set = SafeSet::from_name(&e.value).map_err(|err| at(e, err))?,
            "tableau" => cfg.tableau = standard_tableau(&e.value).map_err(|err| at(e, err))?,
            "nominal" => cfg.nominal = e.value.parse().map_err(|err| at(e, err))?,
            "alpha" => cfg.alpha = e.value.parse().map_err(|err| at(e, err))?,
            "periods" => cfg.periods = parse_list(e, key)?,
            "horizon" => cfg.horizon = parse_value(e, key)?,
            "ic.kind" => {
                cfg.initial.kind = match e.value.as_str() {
                    "grid" => IcKind::Grid,
                    "uniform" | "uniform_in_set" => IcKind::Uniform,
                    other => return Err(Error::config_at(e.line, format!("unknown ic.kind `{other}`"))),
                }
            }
            "ic.ranges" => cfg.initial.ranges = parse_ranges(e)?,
            "ic.shape" => cfg.initial.shape = parse_shape(e)?,
            "ic.count" => cfg.initial.count = parse_value(e, key)?,
            "seed" => cfg.seed = parse_value(e, key)?,
            "out" => cfg.out = PathBuf::from(&e.value),
            "solver.feas_tol" => cfg.solver.feas_tol = parse_value(e, key)?,
            "solver.kkt_tol" => cfg.solver.kkt_tol = parse_value(e, key)?,
            "solver.max_newton_iters" => cfg.solver.max_newton_iters = parse_value(e, key)?,
            "solver.bracket_growth" => cfg.solver.bracket_growth = parse_value(e, key)?,
            "oracle.rel_tol" => cfg.oracle_rel_tol = parse_value(e, key)?,
            "oracle.abs_tol" => cfg.oracle_abs_tol = parse_value(e, key)?,
            "oracle.max_steps" => cfg.oracle_max_steps = parse_value(e, key)?,
            "region.bounds" => {
                let b: f64 = parse_value(e, key)?;
                if !(b > 0.0) {
                    return Err(Error::config_at(e.line, "region.bounds must be positive"));
                }
                cfg.region_bound = Some(b);
            }
            "jobs" => cfg.jobs = Some(parse_value(e, key)?),
            "diagnostics.intersample" => cfg.intersample = parse_bool(e, key)?,
            "write_trajectories" => cfg.write_trajectories = parse_bool(e, key)?,
            _ => unreachable!("key list and match arms agree"),
        }
    }

    if let Some(t) = parse_tableau(entries.get("tableau.b"), entries.get("tableau.a"))? {
        if let Some(e) = entries.get("tableau") {
            return Err(Error::config_at(e.line, "`tableau` conflicts with tableau.b/tableau.a"));
        }
        cfg.tableau = t;
    }

    let range_keys = ["periods.min", "periods.max", "periods.count"];
    if let Some(first) = range_keys.iter().find_map(|k| entries.get(*k)) {
        if let Some(e) = entries.get("periods") {
            return Err(Error::config_at(e.line, "`periods` conflicts with periods.min/max/count"));
        }
        let lo = match entries.get("periods.min") {
            Some(e) => parse_value(e, "periods.min")?,
            None => cfg.periods[0],
        };
        let hi = match entries.get("periods.max") {
            Some(e) => parse_value(e, "periods.max")?,
            None => *cfg.periods.last().expect("builtin periods"),
        };
        let n = match entries.get("periods.count") {
            Some(e) => parse_value(e, "periods.count")?,
            None => DEFAULT_PERIOD_COUNT,
        };
        cfg.periods = log_spaced(lo, hi, n).map_err(|err| at(first, err))?;
    }

    cfg.validate()?;
    Ok(cfg)
}

/// Reads and parses a config file, then applies the seed environment override.
pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut cfg = parse_config(&text)?;
    apply_env_seed(&mut cfg)?;
    Ok(cfg)
}

/// Replaces the seed with `$SDCBF_SEED` when it is set.
pub fn apply_env_seed(cfg: &mut ScenarioConfig) -> Result<()> {
    if let Ok(raw) = std::env::var(SEED_ENV) {
        cfg.seed = raw.trim().parse().map_err(|_| Error::config(format!("{SEED_ENV}=`{raw}` is not a u64")))?;
    }
    Ok(())
}
