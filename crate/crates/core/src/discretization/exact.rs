use crate::discretization::{rk_step, ButcherTableau};
use crate::dynamics::{ControlAffineSystem, WorkingRegion};
use crate::{Error, Result, Vector};

// Dormand-Prince 5(4) coefficients. The system is autonomous under a held
// input, so the nodes are not needed.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

/// Adaptive Dormand-Prince integrator used as the exact sample-to-sample map.
#[derive(Debug, Clone)]
pub struct ExactMapOracle {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
    /// When set, leaving the box marks the step as inadmissible.
    pub working_region: Option<WorkingRegion>,
}

impl Default for ExactMapOracle {
    fn default() -> Self {
        Self { rel_tol: 1e-10, abs_tol: 1e-12, max_steps: 100_000, working_region: None }
    }
}

/// Result of integrating across one sample period.
#[derive(Debug, Clone)]
pub struct ExactStep {
    pub state: Vector,
    /// False if any accepted intermediate state left the working region.
    pub admissible: bool,
    pub steps: usize,
}

impl ExactMapOracle {
    pub fn with_working_region(mut self, region: WorkingRegion) -> Self {
        self.working_region = Some(region);
        self
    }

    fn inside(&self, x: &Vector) -> bool {
        self.working_region.as_ref().is_none_or(|r| r.contains(x))
    }

    /// Integrates `ẋ = f(x) + g(x)u` from `x` over `[0, h]` with `u` held.
    pub fn step(&self, sys: &ControlAffineSystem, x: &Vector, u: &Vector, h: f64) -> Result<ExactStep> {
        if !(h >= 0.0) || !h.is_finite() {
            return Err(Error::Contract(format!("sample period must be finite and nonnegative, got {h}")));
        }
        sys.check_state(x)?;
        sys.check_input(u)?;
        let mut admissible = self.inside(x);
        let mut y = x.clone();
        if h == 0.0 {
            return Ok(ExactStep { state: y, admissible, steps: 0 });
        }

        let n = y.len();
        let mut t = 0.0;
        let mut dt = h;
        let mut steps = 0usize;
        let mut k: Vec<Vector> = vec![Vector::zeros(n); 7];
        k[0] = sys.vector_field(&y, u)?;
        let mut last_rejected = false;

        while t < h {
            if steps >= self.max_steps {
                return Err(Error::IntegrationFailure { steps, t, reason: "step budget exhausted".into() });
            }
            let last = t + dt >= h;
            if last {
                dt = h - t;
            }
            if dt <= f64::EPSILON * h {
                return Err(Error::IntegrationFailure { steps, t, reason: "step size underflow".into() });
            }

            for i in 1..7 {
                let mut z = y.clone();
                for j in 0..i {
                    if A[i][j] != 0.0 {
                        z.axpy(dt * A[i][j], &k[j], 1.0);
                    }
                }
                k[i] = sys.vector_field(&z, u)?;
            }
            let mut y5 = y.clone();
            let mut err = Vector::zeros(n);
            for i in 0..7 {
                if B5[i] != 0.0 {
                    y5.axpy(dt * B5[i], &k[i], 1.0);
                }
                err.axpy(dt * (B5[i] - B4[i]), &k[i], 1.0);
            }
            let err_norm = (err
                .iter()
                .zip(y.iter().zip(y5.iter()))
                .map(|(e, (a, b))| {
                    let scale = self.abs_tol + self.rel_tol * a.abs().max(b.abs());
                    (e / scale).powi(2)
                })
                .sum::<f64>()
                / n as f64)
                .sqrt();
            steps += 1;
            if !err_norm.is_finite() {
                return Err(Error::IntegrationFailure { steps, t, reason: "non-finite error estimate".into() });
            }

            if err_norm <= 1.0 {
                t = if last { h } else { t + dt };
                y = y5;
                admissible &= self.inside(&y);
                // FSAL: the seventh stage is the derivative at the new point.
                k[0] = k[6].clone();
                let grow = if err_norm == 0.0 { MAX_FACTOR } else { SAFETY * err_norm.powf(-0.2) };
                let cap = if last_rejected { 1.0 } else { MAX_FACTOR };
                dt *= grow.clamp(MIN_FACTOR, cap);
                last_rejected = false;
            } else {
                dt *= (SAFETY * err_norm.powf(-0.2)).max(MIN_FACTOR);
                last_rejected = true;
            }
        }
        Ok(ExactStep { state: y, admissible, steps })
    }

    /// States at `count` equally spaced points of `(0, h]`, integrated
    /// sequentially. Diagnostic only.
    pub fn sub_samples(
        &self,
        sys: &ControlAffineSystem,
        x: &Vector,
        u: &Vector,
        h: f64,
        count: usize,
    ) -> Result<Vec<ExactStep>> {
        let dt = h / count.max(1) as f64;
        let mut out = Vec::with_capacity(count);
        let mut cur = x.clone();
        for _ in 0..count.max(1) {
            let s = self.step(sys, &cur, u, dt)?;
            cur = s.state.clone();
            out.push(s);
        }
        Ok(out)
    }
}

pub fn exact_step(oracle: &ExactMapOracle, sys: &ControlAffineSystem, x: &Vector, u: &Vector, h: f64) -> Result<ExactStep> {
    oracle.step(sys, x, u, h)
}

/// `‖F_exact(x, k(x)) − F_rk(x, k(x))‖₂`.
pub fn one_step_error<K>(
    sys: &ControlAffineSystem,
    controller: K,
    tab: &ButcherTableau,
    oracle: &ExactMapOracle,
    x: &Vector,
    h: f64,
) -> Result<f64>
where
    K: Fn(&Vector) -> Result<Vector>,
{
    let u = controller(x)?;
    let exact = oracle.step(sys, x, &u, h)?;
    let approx = rk_step(tab, sys, x, &u, h)?;
    Ok((exact.state - approx).norm())
}
