//! Closed-loop simulation and the checks built on top of it.
//!
//! Between samples the plant evolves under the held input through the exact
//! map oracle; the controller only ever sees the state at `t_k = k·h`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::barrier::{decrement_residual, BarrierFamily, SafeSet};
use crate::controller::SdcbfController;
use crate::discretization::{one_step_error, rk_step, ButcherTableau, ExactMapOracle};
use crate::dynamics::ControlAffineSystem;
use crate::{Error, Result, Vector};

/// Sub-points per interval for the inter-sample diagnostic.
pub const INTERSAMPLE_POINTS: usize = 10;

const MIN_ACCEPTANCE_RATE: f64 = 1e-3;
const MIN_REJECTION_ATTEMPTS: usize = 1000;

/// Where and why a simulation stopped early.
#[derive(Debug, Clone)]
pub struct SimulationFailure {
    /// Index of the sample at which the filter or the oracle failed.
    pub k: usize,
    pub error: Error,
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub sample_times: Vec<f64>,
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
    /// `s(x_k)` for every sample.
    pub barrier_values: Vec<f64>,
    /// `φ_h(x_k, u_k)` for every applied input.
    pub decrement_residuals: Vec<f64>,
    pub distances: Vec<f64>,
    /// False once any integrated state left the working region.
    pub admissibility_ok: bool,
    pub failure: Option<SimulationFailure>,
    /// Largest distance to the safe set seen at the oracle sub-points of each
    /// interval. Diagnostic only; safety is judged at sample times.
    pub intersample_peaks: Option<Vec<f64>>,
}

impl TrajectoryRecord {
    fn start(x0: &Vector, s0: f64, d0: f64, intersample: bool) -> Self {
        Self {
            sample_times: vec![0.0],
            states: vec![x0.clone()],
            inputs: Vec::new(),
            barrier_values: vec![s0],
            decrement_residuals: Vec::new(),
            distances: vec![d0],
            admissibility_ok: true,
            failure: None,
            intersample_peaks: intersample.then(Vec::new),
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn max_distance(&self) -> f64 {
        self.distances.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_barrier(&self) -> f64 {
        self.barrier_values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_residual(&self) -> f64 {
        self.decrement_residuals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Number of control updates in `[0, T]`: `⌊T/h⌋`.
pub fn sample_count(h: f64, horizon: f64) -> usize {
    (horizon / h + 1e-9).floor() as usize
}

pub fn simulate_closed_loop(
    ctrl: &SdcbfController,
    oracle: &ExactMapOracle,
    x0: &Vector,
    h: f64,
    horizon: f64,
) -> Result<TrajectoryRecord> {
    simulate_closed_loop_with(ctrl, oracle, x0, h, horizon, false)
}

/// [`simulate_closed_loop`] with optional inter-sample peak recording.
pub fn simulate_closed_loop_with(
    ctrl: &SdcbfController,
    oracle: &ExactMapOracle,
    x0: &Vector,
    h: f64,
    horizon: f64,
    intersample: bool,
) -> Result<TrajectoryRecord> {
    if !(h > 0.0) || !(h <= horizon) || !horizon.is_finite() {
        return Err(Error::Contract(format!("need 0 < h <= T, got h = {h}, T = {horizon}")));
    }
    let set = &ctrl.barrier.set;
    let mut rec = TrajectoryRecord::start(x0, ctrl.barrier.value(x0)?, set.distance(x0)?, intersample);
    if oracle.working_region.as_ref().is_some_and(|r| !r.contains(x0)) {
        return Err(Error::Contract("initial state outside the working region".into()));
    }
    let mut x = x0.clone();
    for k in 0..sample_count(h, horizon) {
        let step = ctrl.filter(&x, h).and_then(|u| {
            let phi = decrement_residual(&ctrl.barrier, &ctrl.tableau, &ctrl.system, &x, &u, h)?;
            let next = oracle.step(&ctrl.system, &x, &u, h)?;
            let peak = if intersample {
                let mut peak: f64 = 0.0;
                for sub in oracle.sub_samples(&ctrl.system, &x, &u, h, INTERSAMPLE_POINTS)? {
                    peak = peak.max(set.distance(&sub.state)?);
                }
                Some(peak)
            } else {
                None
            };
            let s = ctrl.barrier.value(&next.state)?;
            let d = set.distance(&next.state)?;
            Ok((u, phi, next, peak, s, d))
        });
        match step {
            Ok((u, phi, next, peak, s, d)) => {
                rec.inputs.push(u);
                rec.decrement_residuals.push(phi);
                rec.admissibility_ok &= next.admissible;
                rec.sample_times.push((k + 1) as f64 * h);
                rec.barrier_values.push(s);
                rec.distances.push(d);
                if let (Some(peaks), Some(p)) = (rec.intersample_peaks.as_mut(), peak) {
                    peaks.push(p);
                }
                x = next.state;
                rec.states.push(x.clone());
            }
            Err(error) => {
                rec.failure = Some(SimulationFailure { k, error });
                break;
            }
        }
    }
    Ok(rec)
}

#[derive(Debug, Clone)]
pub enum InitialConditionSpec {
    /// Row-major lattice with `shape[i]` points over `ranges[i]`, endpoints included.
    Grid { ranges: Vec<(f64, f64)>, shape: Vec<usize> },
    /// Uniform draws from the box `ranges`, kept only if they lie in `set`.
    UniformInSet { ranges: Vec<(f64, f64)>, set: SafeSet, count: usize, seed: u64 },
}

pub fn sample_initial_conditions(spec: &InitialConditionSpec) -> Result<Vec<Vector>> {
    match spec {
        InitialConditionSpec::Grid { ranges, shape } => {
            if ranges.len() != shape.len() || shape.contains(&0) {
                return Err(Error::config("grid needs one positive count per range"));
            }
            let axes: Vec<Vec<f64>> = ranges
                .iter()
                .zip(shape)
                .map(|(&(lo, hi), &n)| {
                    if n == 1 {
                        vec![lo]
                    } else {
                        (0..n).map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect()
                    }
                })
                .collect();
            let total: usize = shape.iter().product();
            let mut out = Vec::with_capacity(total);
            for flat in 0..total {
                let mut rem = flat;
                let mut x = Vector::zeros(axes.len());
                for d in (0..axes.len()).rev() {
                    x[d] = axes[d][rem % shape[d]];
                    rem /= shape[d];
                }
                out.push(x);
            }
            Ok(out)
        }
        InitialConditionSpec::UniformInSet { ranges, set, count, seed } => {
            if ranges.len() != set.state_dim() {
                return Err(Error::config(format!(
                    "sampling box has {} ranges, set `{}` needs {}",
                    ranges.len(),
                    set.name(),
                    set.state_dim()
                )));
            }
            if ranges.iter().any(|(lo, hi)| !(lo < hi)) {
                return Err(Error::config("sampling ranges must have lo < hi"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut out = Vec::with_capacity(*count);
            let mut attempts = 0usize;
            while out.len() < *count {
                attempts += 1;
                let x = Vector::from_iterator(ranges.len(), ranges.iter().map(|&(lo, hi)| rng.random_range(lo..hi)));
                if set.contains(&x)? {
                    out.push(x);
                }
                let rate = out.len() as f64 / attempts as f64;
                if attempts >= MIN_REJECTION_ATTEMPTS && rate < MIN_ACCEPTANCE_RATE {
                    return Err(Error::Sampling { rate, attempts });
                }
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
    pub keep_records: bool,
    pub intersample: bool,
}

/// Aggregate over every trajectory simulated at one period.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub h: f64,
    /// Worst sampled distance to the safe set across trajectories.
    pub max_distance: f64,
    /// Trajectories truncated by a filter or integration failure.
    pub n_failures: usize,
    /// Trajectories that left the working region.
    pub n_inadmissible: usize,
    /// Smallest `δ ≥ 0` with `s(x_k) ≥ −δ` on every sample.
    pub min_invariant_delta: f64,
    pub max_residual: f64,
    pub max_intersample: Option<f64>,
    /// Earliest failure in initial-condition order.
    pub first_failure: Option<Error>,
    pub records: Vec<TrajectoryRecord>,
}

pub fn sweep_max_distance(
    ctrl: &SdcbfController,
    oracle: &ExactMapOracle,
    initial: &[Vector],
    periods: &[f64],
    horizon: f64,
    opts: &SweepOptions,
) -> Result<Vec<SweepRow>> {
    if periods.is_empty() || periods.iter().any(|h| !(*h > 0.0)) || periods.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Contract("periods must be positive and strictly ascending".into()));
    }
    let tasks: Vec<(usize, usize)> =
        (0..periods.len()).flat_map(|i| (0..initial.len()).map(move |j| (i, j))).collect();
    let run = || -> Result<Vec<TrajectoryRecord>> {
        tasks
            .par_iter()
            .map(|&(i, j)| simulate_closed_loop_with(ctrl, oracle, &initial[j], periods[i], horizon, opts.intersample))
            .collect()
    };
    let records = match opts.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config { line: None, message: format!("thread pool: {e}") })?
            .install(run)?,
        None => run()?,
    };

    let mut rows = Vec::with_capacity(periods.len());
    let mut iter = records.into_iter();
    for &h in periods {
        let chunk: Vec<TrajectoryRecord> = iter.by_ref().take(initial.len()).collect();
        let mut row = SweepRow {
            h,
            max_distance: 0.0,
            n_failures: 0,
            n_inadmissible: 0,
            min_invariant_delta: 0.0,
            max_residual: f64::NEG_INFINITY,
            max_intersample: opts.intersample.then_some(0.0),
            first_failure: None,
            records: Vec::new(),
        };
        for rec in &chunk {
            row.max_distance = row.max_distance.max(rec.max_distance());
            if let Some(f) = &rec.failure {
                row.n_failures += 1;
                row.first_failure.get_or_insert_with(|| f.error.clone());
            }
            row.n_inadmissible += (!rec.admissibility_ok) as usize;
            row.min_invariant_delta = row.min_invariant_delta.max(-rec.min_barrier());
            row.max_residual = row.max_residual.max(rec.max_residual());
            if let (Some(m), Some(peaks)) = (row.max_intersample.as_mut(), rec.intersample_peaks.as_ref()) {
                *m = peaks.iter().copied().fold(*m, f64::max);
            }
        }
        if opts.keep_records {
            row.records = chunk;
        }
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct ConsistencyReport {
    pub slope: f64,
    pub intercept: f64,
    /// `E(h)` per period, in input order.
    pub max_errors: Vec<f64>,
    /// Grid points on which the oracle failed, per period.
    pub failed_points: Vec<usize>,
}

impl ConsistencyReport {
    pub fn is_partial(&self) -> bool {
        self.failed_points.iter().any(|&n| n > 0)
    }
}

/// Least-squares fit `ln y = slope·ln x + intercept`.
pub fn log_log_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> =
        xs.iter().zip(ys).filter(|(x, y)| **x > 0.0 && **y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return Err(Error::NumericDomain("log-log fit needs two positive points".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::NumericDomain("log-log fit over a single abscissa".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Fits the order of `E(h) = max_{x∈K} ‖F^e_h(x, k(x)) − F^a_h(x, k(x))‖`.
pub fn consistency_order<K>(
    sys: &ControlAffineSystem,
    controller: K,
    tab: &ButcherTableau,
    oracle: &ExactMapOracle,
    grid: &[Vector],
    periods: &[f64],
) -> Result<ConsistencyReport>
where
    K: Fn(&Vector) -> Result<Vector> + Sync,
{
    let lo = periods.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = periods.iter().copied().fold(0.0, f64::max);
    if !(lo > 0.0) || (hi / lo).log10() < 1.5 {
        return Err(Error::Contract("periods must be positive and span at least 1.5 decades".into()));
    }
    if grid.is_empty() {
        return Err(Error::Contract("empty consistency grid".into()));
    }
    let mut max_errors = Vec::with_capacity(periods.len());
    let mut failed_points = Vec::with_capacity(periods.len());
    for &h in periods {
        let errs: Vec<Option<f64>> =
            grid.par_iter().map(|x| one_step_error(sys, &controller, tab, oracle, x, h).ok()).collect();
        failed_points.push(errs.iter().filter(|e| e.is_none()).count());
        max_errors.push(errs.into_iter().flatten().fold(0.0, f64::max));
    }
    let (slope, intercept) = log_log_fit(periods, &max_errors)?;
    Ok(ConsistencyReport { slope, intercept, max_errors, failed_points })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InvarianceOutcome {
    pub holds: bool,
    pub first_violation: Option<usize>,
}

/// Checks `s(x_k) ≥ −δ` on every recorded sample.
pub fn invariance_check(record: &TrajectoryRecord, barrier: &BarrierFamily, delta: f64) -> Result<InvarianceOutcome> {
    if !(delta >= 0.0) {
        return Err(Error::Contract(format!("delta must be nonnegative, got {delta}")));
    }
    for (k, x) in record.states.iter().enumerate() {
        if barrier.value(x)? < -delta {
            return Ok(InvarianceOutcome { holds: false, first_violation: Some(k) });
        }
    }
    Ok(InvarianceOutcome { holds: true, first_violation: None })
}

/// `φ(λu₁ + (1−λ)u₂) − λφ(u₁) − (1−λ)φ(u₂)`.
#[allow(clippy::too_many_arguments)]
pub fn convexity_gap(
    barrier: &BarrierFamily,
    tab: &ButcherTableau,
    sys: &ControlAffineSystem,
    x: &Vector,
    h: f64,
    u1: &Vector,
    u2: &Vector,
    lambda: f64,
) -> Result<f64> {
    let mix = u1 * lambda + u2 * (1.0 - lambda);
    let phi = |u: &Vector| decrement_residual(barrier, tab, sys, x, u, h);
    Ok(phi(&mix)? - lambda * phi(u1)? - (1.0 - lambda) * phi(u2)?)
}

/// Half-width of the input box sampled by [`convexity_probe`].
pub const PROBE_INPUT_BOUND: f64 = 10.0;

/// Largest sampled convexity gap of `u ↦ φ_h(x, u)`.
pub fn convexity_probe(
    barrier: &BarrierFamily,
    tab: &ButcherTableau,
    sys: &ControlAffineSystem,
    x: &Vector,
    h: f64,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let (structure, blocks) = match (barrier.structure, sys.block_structure()) {
        (Some(s), Some(b)) => (s, b),
        _ => return Err(Error::Contract("convexity probe needs a structured barrier and system".into())),
    };
    if structure.q > blocks.blocks || tab.stages() != blocks.blocks - structure.q + 1 {
        return Err(Error::Contract(format!(
            "convexity probe needs p = γ − q + 1, got p = {}, γ = {}, q = {}",
            tab.stages(),
            blocks.blocks,
            structure.q
        )));
    }
    rk_step(tab, sys, x, &Vector::zeros(sys.input_dim()), h)?;
    let m = sys.input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let u1 = Vector::from_fn(m, |_, _| rng.random_range(-PROBE_INPUT_BOUND..PROBE_INPUT_BOUND));
        let u2 = Vector::from_fn(m, |_, _| rng.random_range(-PROBE_INPUT_BOUND..PROBE_INPUT_BOUND));
        let lambda: f64 = rng.random();
        worst = worst.max(convexity_gap(barrier, tab, sys, x, h, &u1, &u2, lambda)?);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::ComparisonFunction;
    use crate::controller::{NominalController, SolverConfig};
    use crate::dynamics::{pendulum_model, to_control_affine, PendulumKind};
    use std::f64::consts::FRAC_PI_2;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn controller(set: &str, tab: ButcherTableau) -> SdcbfController {
        let sys = to_control_affine(&pendulum_model(PendulumKind::Single));
        let barrier = BarrierFamily::new(SafeSet::from_name(set).unwrap(), ComparisonFunction::Identity, Some(1));
        SdcbfController::new(sys, barrier, tab, NominalController::Zero { input_dim: 1 }, SolverConfig::default())
            .unwrap()
    }

    #[test]
    fn record_length_follows_floor_of_horizon() {
        assert_eq!(sample_count(0.5, 10.0), 20);
        assert_eq!(sample_count(0.1, 10.0), 100);
        assert_eq!(sample_count(0.3, 1.0), 3);
        let ctrl = controller("config_ellipsoid", ButcherTableau::midpoint());
        let rec = simulate_closed_loop(&ctrl, &ExactMapOracle::default(), &v(&[0.2, 0.0]), 0.5, 10.0).unwrap();
        assert_eq!(rec.sample_times.len(), 21);
        assert_eq!(rec.inputs.len(), 20);
        assert_eq!(rec.states.len(), rec.inputs.len() + 1);
        assert_eq!(rec.decrement_residuals.len(), 20);
        assert_eq!(*rec.sample_times.last().unwrap(), 10.0);
    }

    #[test]
    fn equilibrium_trajectory_stays_put() {
        let ctrl = controller("config_ellipsoid", ButcherTableau::midpoint());
        let rec = simulate_closed_loop(&ctrl, &ExactMapOracle::default(), &v(&[0.0, 0.0]), 0.1, 10.0).unwrap();
        assert!(rec.failure.is_none());
        assert!(rec.states.iter().all(|x| *x == v(&[0.0, 0.0])));
        assert!(rec.inputs.iter().all(|u| *u == v(&[0.0])));
        let out = invariance_check(&rec, &ctrl.barrier, 0.0).unwrap();
        assert!(out.holds && out.first_violation.is_none());
    }

    #[test]
    fn recorded_residuals_respect_feasibility_tolerance() {
        let ctrl = controller("config_ellipsoid", ButcherTableau::midpoint());
        let rec = simulate_closed_loop(&ctrl, &ExactMapOracle::default(), &v(&[0.9, 4.0]), 0.2, 5.0).unwrap();
        assert!(rec.failure.is_none());
        assert!(rec.max_residual() <= 1e-8);
        let rec = simulate_closed_loop(&ctrl, &ExactMapOracle::default(), &v(&[0.9, 4.0]), 0.2, 5.0).unwrap();
        for w in rec.states.windows(2).zip(&rec.inputs) {
            let next = ExactMapOracle::default().step(&ctrl.system, &w.0[0], w.1, 0.2).unwrap().state;
            assert!((next - &w.0[1]).amax() == 0.0);
        }
    }

    #[test]
    fn bad_period_is_a_contract_error() {
        let ctrl = controller("halfspace", ButcherTableau::midpoint());
        let o = ExactMapOracle::default();
        assert!(matches!(simulate_closed_loop(&ctrl, &o, &v(&[0.0, 0.0]), 0.0, 1.0), Err(Error::Contract(_))));
        assert!(matches!(simulate_closed_loop(&ctrl, &o, &v(&[0.0, 0.0]), 2.0, 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn integration_failure_truncates_record() {
        let ctrl = controller("halfspace", ButcherTableau::midpoint());
        let oracle = ExactMapOracle { max_steps: 1, rel_tol: 1e-14, abs_tol: 1e-16, ..Default::default() };
        let rec = simulate_closed_loop(&ctrl, &oracle, &v(&[0.5, 2.0]), 0.5, 5.0).unwrap();
        let fail = rec.failure.as_ref().unwrap();
        assert!(matches!(fail.error, Error::IntegrationFailure { .. }));
        assert_eq!(rec.states.len(), fail.k + 1);
    }

    #[test]
    fn invariance_check_thresholds() {
        let ctrl = controller("halfspace", ButcherTableau::midpoint());
        // s = θ + 0.1, so these samples have barrier values 0.1, 0.05, −0.03, 0.
        let states = [-0.0, -0.05, -0.13, -0.1].map(|t: f64| v(&[t, 0.0])).to_vec();
        let rec = TrajectoryRecord {
            sample_times: vec![0.0, 1.0, 2.0, 3.0],
            barrier_values: states.iter().map(|x| x[0] + 0.1).collect(),
            distances: vec![0.0; 4],
            inputs: vec![v(&[0.0]); 3],
            decrement_residuals: vec![0.0; 3],
            states,
            admissibility_ok: true,
            failure: None,
            intersample_peaks: None,
        };
        assert!(invariance_check(&rec, &ctrl.barrier, 0.05).unwrap().holds);
        let out = invariance_check(&rec, &ctrl.barrier, 0.01).unwrap();
        assert_eq!(out, InvarianceOutcome { holds: false, first_violation: Some(2) });
        assert!(invariance_check(&rec, &ctrl.barrier, -1.0).is_err());
    }

    #[test]
    fn grid_is_row_major_with_endpoints() {
        let spec = InitialConditionSpec::Grid { ranges: vec![(-1.0, 1.0), (-5.0, 5.0)], shape: vec![41, 41] };
        let pts = sample_initial_conditions(&spec).unwrap();
        assert_eq!(pts.len(), 1681);
        assert_eq!(pts[0], v(&[-1.0, -5.0]));
        assert_eq!(pts[1], v(&[-1.0, -4.75]));
        assert_eq!(pts[40], v(&[-1.0, 5.0]));
        assert_eq!(pts[41], v(&[-0.95, -5.0]));
        assert_eq!(pts[1680], v(&[1.0, 5.0]));
        let half = InitialConditionSpec::Grid { ranges: vec![(-0.1, 1.0), (-5.0, 5.0)], shape: vec![9, 9] };
        let pts = sample_initial_conditions(&half).unwrap();
        assert_eq!(pts[0][0], -0.1);
        assert_eq!(pts[80], v(&[1.0, 5.0]));
    }

    #[test]
    fn uniform_sampling_is_seeded_and_inside() {
        let set = SafeSet::from_name("config_ball").unwrap();
        let spec =
            InitialConditionSpec::UniformInSet { ranges: vec![(-1.0, 1.0); 4], set: set.clone(), count: 100, seed: 7 };
        let a = sample_initial_conditions(&spec).unwrap();
        let b = sample_initial_conditions(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        assert!(a.iter().all(|x| set.contains(x).unwrap()));
        let other = InitialConditionSpec::UniformInSet { ranges: vec![(-1.0, 1.0); 4], set, count: 100, seed: 8 };
        assert_ne!(a, sample_initial_conditions(&other).unwrap());
    }

    #[test]
    fn hopeless_rejection_sampling_errors() {
        let set = SafeSet::from_name("config_ellipsoid").unwrap();
        let spec = InitialConditionSpec::UniformInSet { ranges: vec![(5.0, 6.0), (0.0, 1.0)], set, count: 3, seed: 1 };
        assert!(matches!(sample_initial_conditions(&spec), Err(Error::Sampling { .. })));
    }

    #[test]
    fn sweep_rows_are_nonnegative_and_job_independent() {
        let ctrl = controller("config_ellipsoid", ButcherTableau::midpoint());
        let ics = sample_initial_conditions(&InitialConditionSpec::Grid {
            ranges: vec![(-1.0, 1.0), (-5.0, 5.0)],
            shape: vec![3, 3],
        })
        .unwrap();
        let periods = [0.1, 0.3];
        let o = ExactMapOracle::default();
        let one = sweep_max_distance(&ctrl, &o, &ics, &periods, 2.0, &SweepOptions { jobs: Some(1), ..Default::default() })
            .unwrap();
        let four = sweep_max_distance(&ctrl, &o, &ics, &periods, 2.0, &SweepOptions { jobs: Some(4), ..Default::default() })
            .unwrap();
        for (a, b) in one.iter().zip(&four) {
            assert!(a.max_distance >= 0.0);
            assert_eq!(a.max_distance.to_bits(), b.max_distance.to_bits());
            assert_eq!(a.n_failures, 0);
            assert!(a.max_residual <= 1e-8);
        }
        assert!(sweep_max_distance(&ctrl, &o, &ics, &[0.3, 0.1], 2.0, &SweepOptions::default()).is_err());
    }

    #[test]
    fn sweep_keeps_records_and_intersample_peaks() {
        let ctrl = controller("config_ellipsoid", ButcherTableau::midpoint());
        let ics = vec![v(&[0.9, 3.0]), v(&[0.0, 0.0])];
        let opts = SweepOptions { jobs: Some(2), keep_records: true, intersample: true };
        let rows = sweep_max_distance(&ctrl, &ExactMapOracle::default(), &ics, &[0.5], 2.0, &opts).unwrap();
        assert_eq!(rows[0].records.len(), 2);
        assert_eq!(rows[0].records[0].intersample_peaks.as_ref().unwrap().len(), 4);
        assert!(rows[0].max_intersample.unwrap() >= rows[0].max_distance);
    }

    #[test]
    fn consistency_slopes_on_small_grid() {
        let sys = to_control_affine(&pendulum_model(PendulumKind::Single));
        let grid = sample_initial_conditions(&InitialConditionSpec::Grid {
            ranges: vec![(-1.0, 1.0), (-1.0, 1.0)],
            shape: vec![3, 3],
        })
        .unwrap();
        let hs: Vec<f64> = (0..5).map(|i| 10f64.powf(-2.0 - 0.5 * i as f64)).collect();
        let zero = |_: &Vector| Ok(v(&[0.0]));
        for (tab, expected) in [(ButcherTableau::euler(), 2.0), (ButcherTableau::midpoint(), 3.0)] {
            let rep = consistency_order(&sys, zero, &tab, &ExactMapOracle::default(), &grid, &hs).unwrap();
            assert!((rep.slope - expected).abs() < 0.3, "{} {}", tab.name(), rep.slope);
            assert!(!rep.is_partial());
            // E(h)/h shrinks with h.
            for w in rep.max_errors.windows(2) {
                assert!(w[1] < w[0]);
            }
        }
        assert!(consistency_order(&sys, zero, &ButcherTableau::euler(), &ExactMapOracle::default(), &grid, &[0.01, 0.005])
            .is_err());
    }

    #[test]
    fn log_log_fit_recovers_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powi(3)).collect();
        let (s, c) = log_log_fit(&xs, &ys).unwrap();
        assert!((s - 3.0).abs() < 1e-12);
        assert!((c - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn convexity_probe_examples() {
        let sys = to_control_affine(&pendulum_model(PendulumKind::Single));
        let x = v(&[0.4, -1.0]);
        let half = controller("halfspace", ButcherTableau::midpoint());
        let gap = convexity_probe(&half.barrier, &half.tableau, &sys, &x, 0.3, 2000, 3).unwrap();
        assert!(gap <= 1e-12, "{gap}");
        let ell = controller("config_ellipsoid", ButcherTableau::midpoint());
        let gap = convexity_probe(&ell.barrier, &ell.tableau, &sys, &x, 0.3, 2000, 3).unwrap();
        assert!(gap <= 1e-9, "{gap}");
        let u1 = v(&[3.0]);
        let u2 = v(&[-7.0]);
        for lam in [0.0, 1.0] {
            assert_eq!(convexity_gap(&ell.barrier, &ell.tableau, &sys, &x, 0.3, &u1, &u2, lam).unwrap(), 0.0);
        }
        // Euler leaves s̃ of the configuration set untouched by u: p ≠ γ − q + 1.
        assert!(matches!(
            convexity_probe(&ell.barrier, &ButcherTableau::euler(), &sys, &x, 0.3, 10, 3),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn lyapunov_with_euler_passes_probe() {
        let lyap = controller("lyapunov", ButcherTableau::euler());
        let gap =
            convexity_probe(&lyap.barrier, &lyap.tableau, &lyap.system, &v(&[FRAC_PI_2 / 3.0, 0.2]), 0.1, 2000, 5)
                .unwrap();
        assert!(gap <= 1e-9, "{gap}");
    }
}
