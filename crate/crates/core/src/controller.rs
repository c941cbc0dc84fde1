//! Nominal controllers and the sampled-data CBF safety filter
//!
//! ```text
//! k_h(x) = argmin_u ½‖u − k_d(x)‖²  s.t.  φ_h(x, u) ≤ 0
//! ```
//!
//! With a single scalar constraint the dual is one-dimensional, so the filter
//! is a nearest-point projection onto a convex sublevel set: an outer root
//! find on the multiplier `λ` wrapped around a damped Newton solve of the
//! penalized problem.

use std::fmt;
use std::str::FromStr;

use crate::barrier::BarrierFamily;
use crate::discretization::{rk_step, ButcherTableau};
use crate::dynamics::{ControlAffineSystem, MechanicalSystem};
use crate::{Error, Matrix, Result, Vector};

/// Half-width of the input box searched before declaring the constraint infeasible.
pub const INFEASIBILITY_BOX: f64 = 1e3;

const MAX_BRACKET_STEPS: usize = 200;
const MAX_ROOT_STEPS: usize = 200;
const LAMBDA_CEILING: f64 = 1e18;
const KKT_POLISH_STEPS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub feas_tol: f64,
    pub kkt_tol: f64,
    pub max_newton_iters: usize,
    pub bracket_growth: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { feas_tol: 1e-8, kkt_tol: 1e-8, max_newton_iters: 100, bracket_growth: 2.0 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.feas_tol > 0.0) || !(self.kkt_tol > 0.0) {
            return Err(Error::config("solver tolerances must be positive"));
        }
        if self.max_newton_iters == 0 {
            return Err(Error::config("solver.max_newton_iters must be positive"));
        }
        if !(self.bracket_growth > 1.0) {
            return Err(Error::config("solver.bracket_growth must exceed 1"));
        }
        Ok(())
    }
}

/// A convex function `φ: ℝᵐ → ℝ` whose 0-sublevel set is the feasible input set.
///
/// Derivatives default to central differences; implementors with analytic
/// forms should override them.
pub trait ConvexConstraint {
    fn dim(&self) -> usize;

    fn value(&self, u: &Vector) -> Result<f64>;

    fn gradient(&self, u: &Vector) -> Result<Vector> {
        let mut g = Vector::zeros(u.len());
        for i in 0..u.len() {
            let t = 1e-6 * (1.0 + u[i].abs());
            let mut up = u.clone();
            let mut dn = u.clone();
            up[i] += t;
            dn[i] -= t;
            g[i] = (self.value(&up)? - self.value(&dn)?) / (2.0 * t);
        }
        Ok(g)
    }

    fn hessian(&self, u: &Vector) -> Result<Matrix> {
        let m = u.len();
        let mut hess = Matrix::zeros(m, m);
        for i in 0..m {
            let t = 1e-4 * (1.0 + u[i].abs());
            let mut up = u.clone();
            let mut dn = u.clone();
            up[i] += t;
            dn[i] -= t;
            let col = (self.gradient(&up)? - self.gradient(&dn)?) / (2.0 * t);
            hess.set_column(i, &col);
        }
        Ok((&hess + hess.transpose()) * 0.5)
    }

    /// Affine constraints are projected in closed form.
    fn is_affine(&self) -> bool {
        false
    }
}

/// Closure-backed constraint with finite-difference derivatives.
pub struct FnConstraint<F> {
    dim: usize,
    f: F,
    affine: bool,
}

impl<F: Fn(&Vector) -> f64> FnConstraint<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f, affine: false }
    }

    pub fn affine(dim: usize, f: F) -> Self {
        Self { dim, f, affine: true }
    }
}

impl<F: Fn(&Vector) -> f64> ConvexConstraint for FnConstraint<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, u: &Vector) -> Result<f64> {
        Ok((self.f)(u))
    }

    fn is_affine(&self) -> bool {
        self.affine
    }
}

/// `aᵀu ≥ b`, i.e. `φ(u) = b − aᵀu`.
#[derive(Debug, Clone)]
pub struct AffineConstraint {
    pub a: Vector,
    pub b: f64,
}

impl ConvexConstraint for AffineConstraint {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn value(&self, u: &Vector) -> Result<f64> {
        Ok(self.b - self.a.dot(u))
    }

    fn gradient(&self, _u: &Vector) -> Result<Vector> {
        Ok(-&self.a)
    }

    fn hessian(&self, _u: &Vector) -> Result<Matrix> {
        Ok(Matrix::zeros(self.a.len(), self.a.len()))
    }

    fn is_affine(&self) -> bool {
        true
    }
}

/// Output of [`project_single_constraint`].
#[derive(Debug, Clone)]
pub struct Projection {
    pub input: Vector,
    /// Optimal multiplier; zero when the nominal input was already feasible.
    pub multiplier: f64,
    /// `φ` at the returned input.
    pub residual: f64,
    /// `‖u − k_d + λ∇φ(u)‖₂`.
    pub stationarity: f64,
    pub active: bool,
    pub evaluations: usize,
}

struct Penalized<'a, C: ?Sized> {
    phi: &'a C,
    k_d: &'a Vector,
    cfg: &'a SolverConfig,
}

impl<C: ConvexConstraint + ?Sized> Penalized<'_, C> {
    fn objective(&self, u: &Vector, lambda: f64) -> Result<f64> {
        Ok(0.5 * (u - self.k_d).norm_squared() + lambda * self.phi.value(u)?)
    }

    fn stationarity(&self, u: &Vector, lambda: f64) -> Result<Vector> {
        Ok(u - self.k_d + self.phi.gradient(u)? * lambda)
    }

    /// Damped Newton on `½‖u − k_d‖² + λφ(u)` from `start`.
    fn minimize(&self, lambda: f64, start: &Vector) -> Result<Vector> {
        let m = start.len();
        let mut u = start.clone();
        for _ in 0..self.cfg.max_newton_iters {
            let g = self.stationarity(&u, lambda)?;
            let gnorm = g.norm();
            if gnorm <= 0.1 * self.cfg.kkt_tol {
                return Ok(u);
            }
            let mut hess = Matrix::identity(m, m) + self.phi.hessian(&u)? * lambda;
            hess = (&hess + hess.transpose()) * 0.5;
            let mut shift = 0.0;
            let chol = loop {
                let shifted = &hess + Matrix::identity(m, m) * shift;
                match shifted.cholesky() {
                    Some(c) => break c,
                    None => shift = if shift == 0.0 { 1e-8 * (1.0 + lambda) } else { shift * 10.0 },
                }
                if shift > 1e12 * (1.0 + lambda) {
                    return Err(Error::Solver { reason: "Newton system not positive definite".into(), trace: vec![] });
                }
            };
            let dir = -chol.solve(&g);
            let slope = g.dot(&dir);
            let base = self.objective(&u, lambda)?;
            let mut t = 1.0;
            let mut accepted = None;
            while t > 1e-12 {
                let cand = &u + &dir * t;
                if self.objective(&cand, lambda)? <= base + 1e-4 * t * slope {
                    accepted = Some(cand);
                    break;
                }
                t *= 0.5;
            }
            let next = match accepted {
                Some(c) => c,
                None => {
                    // Objective comparisons are at roundoff; fall back to the
                    // stationarity norm.
                    let full = &u + &dir;
                    if self.stationarity(&full, lambda)?.norm() < gnorm {
                        full
                    } else {
                        return Ok(u);
                    }
                }
            };
            let moved = (&next - &u).norm();
            u = next;
            if moved <= 1e-15 * (1.0 + u.norm()) {
                return Ok(u);
            }
        }
        if !u.iter().all(|v| v.is_finite()) {
            return Err(Error::Solver { reason: "Newton diverged".into(), trace: vec![] });
        }
        Ok(u)
    }
}

/// Minimum of `φ` over `‖u‖_∞ ≤ bound` by projected gradient descent.
fn minimize_over_box<C: ConvexConstraint + ?Sized>(phi: &C, start: &Vector, bound: f64) -> Result<f64> {
    let clamp = |u: Vector| u.map(|v| v.clamp(-bound, bound));
    let mut u = clamp(start.clone());
    let mut val = phi.value(&u)?;
    let mut step = 1.0;
    for _ in 0..5_000 {
        let g = phi.gradient(&u)?;
        if g.norm() == 0.0 {
            break;
        }
        let mut improved = false;
        while step > 1e-14 {
            let cand = clamp(&u - &g * step);
            let cv = phi.value(&cand)?;
            if cv < val {
                u = cand;
                val = cv;
                improved = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !improved || val <= 0.0 {
            break;
        }
    }
    Ok(val)
}

/// Nearest point to `k_d` in `{u : φ(u) ≤ 0}`.
pub fn project_single_constraint<C: ConvexConstraint + ?Sized>(
    k_d: &Vector,
    phi: &C,
    cfg: &SolverConfig,
) -> Result<Projection> {
    if k_d.len() != phi.dim() {
        return Err(Error::Contract(format!("input has length {}, constraint expects {}", k_d.len(), phi.dim())));
    }
    let v0 = phi.value(k_d)?;
    if !v0.is_finite() {
        return Err(Error::NumericDomain("constraint at nominal input".into()));
    }
    if v0 <= 0.0 {
        return Ok(Projection {
            input: k_d.clone(),
            multiplier: 0.0,
            residual: v0,
            stationarity: 0.0,
            active: false,
            evaluations: 1,
        });
    }

    let g0 = phi.gradient(k_d)?;
    if phi.is_affine() {
        let nn = g0.norm_squared();
        if nn == 0.0 {
            return Err(Error::SdcbfViolation { min_residual: v0 });
        }
        let lambda = v0 / nn;
        let input = k_d - &g0 * lambda;
        let residual = phi.value(&input)?;
        return Ok(Projection { input, multiplier: lambda, residual, stationarity: 0.0, active: true, evaluations: 3 });
    }

    let pen = Penalized { phi, k_d, cfg };
    let coarse = 0.1 * cfg.feas_tol;
    let mut trace: Vec<(f64, f64)> = Vec::new();

    // Bracket the multiplier: ψ(λ) = φ(u(λ)) is nonincreasing in λ.
    let (mut lo, mut psi_lo, mut u_lo) = (0.0, v0, k_d.clone());
    let mut lam = if g0.norm_squared() > 0.0 { v0 / g0.norm_squared() } else { 1.0 };
    let mut steps = 0;
    let mut bracket = None;
    loop {
        let u = pen.minimize(lam, &u_lo)?;
        let psi = phi.value(&u)?;
        trace.push((lam, psi));
        if psi.abs() <= coarse {
            break;
        }
        if psi < 0.0 {
            bracket = Some((lam, psi, u));
            break;
        }
        (lo, psi_lo, u_lo) = (lam, psi, u);
        lam *= cfg.bracket_growth;
        steps += 1;
        if steps >= MAX_BRACKET_STEPS || lam > LAMBDA_CEILING {
            let min_residual = minimize_over_box(phi, &u_lo, INFEASIBILITY_BOX)?.min(psi_lo);
            if min_residual > cfg.feas_tol {
                return Err(Error::SdcbfViolation { min_residual });
            }
            return Err(Error::Solver { reason: "failed to bracket the multiplier".into(), trace });
        }
    }

    // Illinois false position on [lo, hi] down to a coarse residual.
    let (mut u, mut lam) = match bracket {
        None => (pen.minimize(lam, &u_lo)?, lam),
        Some((mut hi, mut psi_hi, mut u_hi)) => {
            let mut side = 0i8;
            let mut found = None;
            for _ in 0..MAX_ROOT_STEPS {
                let mut mid = hi - psi_hi * (hi - lo) / (psi_hi - psi_lo);
                if !(mid > lo && mid < hi) {
                    mid = 0.5 * (lo + hi);
                }
                let start = if psi_lo.abs() < psi_hi.abs() { &u_lo } else { &u_hi };
                let u = pen.minimize(mid, start)?;
                let psi = phi.value(&u)?;
                trace.push((mid, psi));
                if psi.abs() <= coarse {
                    found = Some((u, mid));
                    break;
                }
                if psi > 0.0 {
                    (lo, psi_lo, u_lo) = (mid, psi, u);
                    if side == 1 {
                        psi_hi *= 0.5;
                    }
                    side = 1;
                } else {
                    (hi, psi_hi, u_hi) = (mid, psi, u);
                    if side == -1 {
                        psi_lo *= 0.5;
                    }
                    side = -1;
                }
                if hi - lo <= 1e-13 * hi {
                    break;
                }
            }
            found.unwrap_or((u_hi, hi))
        }
    };

    // Newton on the KKT system [u − k_d + λ∇φ(u); φ(u)] = 0 polishes both residuals.
    let m = k_d.len();
    let merit = |u: &Vector, lam: f64| -> Result<f64> {
        Ok((pen.stationarity(u, lam)?.norm() / cfg.kkt_tol).max(phi.value(u)?.abs() / cfg.feas_tol))
    };
    let mut best = merit(&u, lam)?;
    for _ in 0..KKT_POLISH_STEPS {
        if best <= 1e-3 {
            break;
        }
        let g = phi.gradient(&u)?;
        let r = pen.stationarity(&u, lam)?;
        let mut kkt = Matrix::zeros(m + 1, m + 1);
        kkt.view_mut((0, 0), (m, m)).copy_from(&(Matrix::identity(m, m) + phi.hessian(&u)? * lam));
        kkt.view_mut((0, m), (m, 1)).copy_from(&g);
        kkt.view_mut((m, 0), (1, m)).copy_from(&g.transpose());
        let mut rhs = Vector::zeros(m + 1);
        rhs.rows_mut(0, m).copy_from(&(-r));
        rhs[m] = -phi.value(&u)?;
        let Some(step) = kkt.lu().solve(&rhs) else { break };
        let cand_u = &u + step.rows(0, m);
        let cand_lam = lam + step[m];
        if !(cand_lam > 0.0) || !cand_u.iter().all(|v| v.is_finite()) {
            break;
        }
        let cand = merit(&cand_u, cand_lam)?;
        trace.push((cand_lam, phi.value(&cand_u)?));
        if cand >= best {
            break;
        }
        (u, lam, best) = (cand_u, cand_lam, cand);
    }

    let psi = phi.value(&u)?;
    let stationarity = pen.stationarity(&u, lam)?.norm();
    if psi > cfg.feas_tol || stationarity > cfg.kkt_tol {
        return Err(Error::Solver {
            reason: format!("converged to residual {psi:.3e}, stationarity {stationarity:.3e}"),
            trace,
        });
    }
    Ok(Projection { input: u, multiplier: lam, residual: psi, stationarity, active: true, evaluations: trace.len() })
}

/// The nominal controllers of the experiments, plus a constant input for
/// fixtures.
#[derive(Debug, Clone)]
pub enum NominalController {
    Zero { input_dim: usize },
    Constant(Vector),
    /// `u = C(q, q̇)q̇ + G(q) + D(q)(−k_p q − k_d q̇)`, giving `q̈ = −k_p q − k_d q̇`.
    FeedbackLinearizingPd { mech: MechanicalSystem, kp: f64, kd: f64 },
}

/// Config names of the nominal controllers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NominalKind {
    Zero,
    FlPd,
}

impl FromStr for NominalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(NominalKind::Zero),
            "fl_pd" => Ok(NominalKind::FlPd),
            other => Err(Error::config(format!("unknown nominal controller `{other}`"))),
        }
    }
}

impl fmt::Display for NominalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NominalKind::Zero => "zero",
            NominalKind::FlPd => "fl_pd",
        })
    }
}

impl NominalController {
    /// Proportional gain 1 and derivative gain 2.
    pub fn new(kind: NominalKind, mech: &MechanicalSystem) -> Self {
        match kind {
            NominalKind::Zero => NominalController::Zero { input_dim: mech.config_dim() },
            NominalKind::FlPd => NominalController::FeedbackLinearizingPd { mech: mech.clone(), kp: 1.0, kd: 2.0 },
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            NominalController::Zero { input_dim } => *input_dim,
            NominalController::Constant(u) => u.len(),
            NominalController::FeedbackLinearizingPd { mech, .. } => mech.config_dim(),
        }
    }

    pub fn eval(&self, x: &Vector) -> Result<Vector> {
        match self {
            NominalController::Zero { input_dim } => Ok(Vector::zeros(*input_dim)),
            NominalController::Constant(u) => Ok(u.clone()),
            NominalController::FeedbackLinearizingPd { mech, kp, kd } => {
                let (q, qd) = mech.split_state(x)?;
                let v = -(&q * *kp) - &qd * *kd;
                Ok(mech.coriolis(&q, &qd) * &qd + mech.gravity(&q) + mech.inertia(&q) * v)
            }
        }
    }
}

pub fn nominal_control(kind: NominalKind, mech: &MechanicalSystem, x: &Vector) -> Result<Vector> {
    NominalController::new(kind, mech).eval(x)
}

struct ReducedDecrement {
    offset: Vector,
    jacobian: Matrix,
}

/// `u ↦ φ_h(x, u)` at a fixed state and period.
///
/// When the system is a block integrator and the tableau has
/// `p = γ − q + 1` stages, the first `q` blocks of the approximate map are
/// affine in `u`; the constraint is then evaluated through `s̃` with exact
/// derivatives instead of re-running the Runge-Kutta step.
pub struct DecrementConstraint<'a> {
    barrier: &'a BarrierFamily,
    tableau: &'a ButcherTableau,
    system: &'a ControlAffineSystem,
    state: Vector,
    h: f64,
    constant: f64,
    reduced: Option<ReducedDecrement>,
}

impl<'a> DecrementConstraint<'a> {
    pub fn new(
        barrier: &'a BarrierFamily,
        tableau: &'a ButcherTableau,
        system: &'a ControlAffineSystem,
        x: &Vector,
        h: f64,
    ) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::Contract(format!("sample period must be positive, got {h}")));
        }
        let s_x = barrier.value(x)?;
        let constant = s_x - h * barrier.alpha.apply(s_x);
        let reduced = match (system.block_structure(), barrier.structure) {
            (Some(blocks), Some(st))
                if st.block_len == blocks.block_len
                    && st.q <= blocks.blocks
                    && tableau.stages() == blocks.blocks - st.q + 1 =>
            {
                let k = st.q * st.block_len;
                let m = system.input_dim();
                let scale = h.powi(-(tableau.stages() as i32)).max(1.0);
                let base = rk_step(tableau, system, x, &Vector::zeros(m), h)?.rows(0, k).into_owned();
                let mut jacobian = Matrix::zeros(k, m);
                for j in 0..m {
                    let mut e = Vector::zeros(m);
                    e[j] = scale;
                    let moved = rk_step(tableau, system, x, &e, h)?.rows(0, k).into_owned();
                    jacobian.set_column(j, &((moved - &base) / scale));
                }
                Some(ReducedDecrement { offset: base, jacobian })
            }
            _ => None,
        };
        Ok(Self { barrier, tableau, system, state: x.clone(), h, constant, reduced })
    }

    pub fn is_reduced(&self) -> bool {
        self.reduced.is_some()
    }
}

impl ConvexConstraint for DecrementConstraint<'_> {
    fn dim(&self) -> usize {
        self.system.input_dim()
    }

    fn value(&self, u: &Vector) -> Result<f64> {
        match &self.reduced {
            Some(r) => Ok(-self.barrier.set.reduced_value(&(&r.offset + &r.jacobian * u)) + self.constant),
            None => {
                let next = rk_step(self.tableau, self.system, &self.state, u, self.h)?;
                Ok(-self.barrier.value(&next)? + self.constant)
            }
        }
    }

    fn gradient(&self, u: &Vector) -> Result<Vector> {
        match &self.reduced {
            Some(r) => {
                let z = &r.offset + &r.jacobian * u;
                Ok(-(r.jacobian.transpose() * self.barrier.set.reduced_gradient(&z)))
            }
            None => {
                let mut g = Vector::zeros(u.len());
                for i in 0..u.len() {
                    let t = 1e-6 * (1.0 + u[i].abs());
                    let (mut up, mut dn) = (u.clone(), u.clone());
                    up[i] += t;
                    dn[i] -= t;
                    g[i] = (self.value(&up)? - self.value(&dn)?) / (2.0 * t);
                }
                Ok(g)
            }
        }
    }

    fn hessian(&self, u: &Vector) -> Result<Matrix> {
        match &self.reduced {
            Some(r) => Ok(-(r.jacobian.transpose() * self.barrier.set.reduced_hessian() * &r.jacobian)),
            None => {
                let m = u.len();
                let mut hess = Matrix::zeros(m, m);
                for i in 0..m {
                    let t = 1e-4 * (1.0 + u[i].abs());
                    let (mut up, mut dn) = (u.clone(), u.clone());
                    up[i] += t;
                    dn[i] -= t;
                    hess.set_column(i, &((self.gradient(&up)? - self.gradient(&dn)?) / (2.0 * t)));
                }
                Ok((&hess + hess.transpose()) * 0.5)
            }
        }
    }

    fn is_affine(&self) -> bool {
        self.reduced.is_some() && self.barrier.structure.is_some_and(|s| s.affine_in_last)
    }
}

/// Nominal controller, barrier, approximate map and solver settings.
#[derive(Debug, Clone)]
pub struct SdcbfController {
    pub system: ControlAffineSystem,
    pub barrier: BarrierFamily,
    pub tableau: ButcherTableau,
    pub nominal: NominalController,
    pub solver: SolverConfig,
}

impl SdcbfController {
    pub fn new(
        system: ControlAffineSystem,
        barrier: BarrierFamily,
        tableau: ButcherTableau,
        nominal: NominalController,
        solver: SolverConfig,
    ) -> Result<Self> {
        solver.validate()?;
        if barrier.set.state_dim() != system.state_dim() {
            return Err(Error::config(format!(
                "safe set `{}` needs state dimension {}, system `{}` has {}",
                barrier.set.name(),
                barrier.set.state_dim(),
                system.name(),
                system.state_dim()
            )));
        }
        if nominal.input_dim() != system.input_dim() {
            return Err(Error::config("nominal controller input dimension does not match the system"));
        }
        Ok(Self { system, barrier, tableau, nominal, solver })
    }

    pub fn project(&self, x: &Vector, h: f64) -> Result<Projection> {
        let k_d = self.nominal.eval(x)?;
        let constraint = DecrementConstraint::new(&self.barrier, &self.tableau, &self.system, x, h)?;
        project_single_constraint(&k_d, &constraint, &self.solver)
    }

    pub fn filter(&self, x: &Vector, h: f64) -> Result<Vector> {
        self.project(x, h).map(|p| p.input)
    }

    /// The filter with `k_d` replaced by a caller-supplied input.
    pub fn filter_from(&self, x: &Vector, k_d: &Vector, h: f64) -> Result<Vector> {
        let constraint = DecrementConstraint::new(&self.barrier, &self.tableau, &self.system, x, h)?;
        project_single_constraint(k_d, &constraint, &self.solver).map(|p| p.input)
    }
}

pub fn sdcbf_filter(ctrl: &SdcbfController, x: &Vector, h: f64) -> Result<Vector> {
    ctrl.filter(x, h)
}
