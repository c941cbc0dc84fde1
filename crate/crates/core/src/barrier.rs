//! Barrier candidates for the four built-in safe sets.
//!
//! Every barrier here is independent of the sample period; `h` only enters the
//! decrement through `h·α(s(x))`. Each set also exposes its reduced form `s̃`
//! over the leading configuration coordinates, which is what makes the
//! decrement constraint convex for block-integrator systems.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::discretization::{rk_step, ButcherTableau};
use crate::dynamics::ControlAffineSystem;
use crate::{Error, Matrix, Result, Vector};

/// Offset of the built-in halfspace `θ + 0.1 ≥ 0`.
pub const HALFSPACE_OFFSET: f64 = 0.1;
/// Velocity range used when sampling sets that leave velocities unconstrained.
pub const VELOCITY_SAMPLE_BOUND: f64 = 5.0;
/// Minimum boundary gradient norm accepted as a regular value.
pub const REGULAR_VALUE_THRESHOLD: f64 = 1e-8;
/// Relative shave applied to `σ·η/2` when picking `δ(η)`.
pub const DELTA_GUARD: f64 = 1e-6;

const PROJECTION_MAX_ITERS: usize = 200;
const PROJECTION_TOL: f64 = 1e-10;

/// Extended class-𝒦 comparison function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComparisonFunction {
    Identity,
    Linear(f64),
}

impl ComparisonFunction {
    pub fn apply(&self, r: f64) -> f64 {
        match self {
            ComparisonFunction::Identity => r,
            ComparisonFunction::Linear(k) => k * r,
        }
    }

    /// `α(0) = 0` and strictly increasing across the grid.
    pub fn is_class_ke_on(&self, grid: &[f64]) -> bool {
        if self.apply(0.0) != 0.0 {
            return false;
        }
        let mut sorted = grid.to_vec();
        sorted.sort_by(f64::total_cmp);
        sorted.windows(2).all(|w| w[0] == w[1] || self.apply(w[0]) < self.apply(w[1]))
    }
}

impl fmt::Display for ComparisonFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ComparisonFunction::Identity => f.write_str("identity"),
            ComparisonFunction::Linear(k) => write!(f, "linear:{k}"),
        }
    }
}

impl FromStr for ComparisonFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "identity" {
            return Ok(ComparisonFunction::Identity);
        }
        if let Some(k) = s.strip_prefix("linear:") {
            let k: f64 = k.trim().parse().map_err(|_| Error::config(format!("bad alpha gain in `{s}`")))?;
            if !(k > 0.0) || !k.is_finite() {
                return Err(Error::config("alpha gain must be positive and finite"));
            }
            return Ok(ComparisonFunction::Linear(k));
        }
        Err(Error::config(format!("unknown alpha `{s}`")))
    }
}

/// The safe sets of the pendulum experiments.
///
/// Apart from `LyapunovSublevel`, which constrains the whole state, the sets
/// only constrain configuration coordinates and leave velocities free.
#[derive(Debug, Clone, PartialEq)]
pub enum SafeSet {
    /// `1 − xᵀPx ≥ 0`.
    LyapunovSublevel { p: Matrix },
    /// `1 − θ² ≥ 0` on `(θ, θ̇)`.
    ConfigEllipsoid1d,
    /// `θ + offset ≥ 0` on `(θ, θ̇)`.
    Halfspace1d { offset: f64 },
    /// `1 − ‖q‖² ≥ 0` on `(q, q̇)`, `q ∈ ℝ²`.
    ConfigBall2d,
}

impl SafeSet {
    pub fn lyapunov(p: Matrix) -> Result<Self> {
        if p.nrows() != p.ncols() || p.nrows() == 0 {
            return Err(Error::config("Lyapunov matrix must be square"));
        }
        if (&p - p.transpose()).amax() > 1e-12 * p.amax().max(1.0) {
            return Err(Error::config("Lyapunov matrix must be symmetric"));
        }
        let eig = SymmetricEigen::new(p.clone()).eigenvalues;
        if eig.iter().any(|&l| l <= 0.0) {
            return Err(Error::config("Lyapunov matrix must be positive definite"));
        }
        Ok(SafeSet::LyapunovSublevel { p })
    }

    /// Built-in sets by config name; the Lyapunov set uses the Riccati
    /// solution of [`care_double_integrator`].
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "lyapunov" => SafeSet::lyapunov(care_double_integrator()),
            "config_ellipsoid" => Ok(SafeSet::ConfigEllipsoid1d),
            "halfspace" => Ok(SafeSet::Halfspace1d { offset: HALFSPACE_OFFSET }),
            "config_ball" => Ok(SafeSet::ConfigBall2d),
            other => Err(Error::config(format!("unknown safe set `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SafeSet::LyapunovSublevel { .. } => "lyapunov",
            SafeSet::ConfigEllipsoid1d => "config_ellipsoid",
            SafeSet::Halfspace1d { .. } => "halfspace",
            SafeSet::ConfigBall2d => "config_ball",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            SafeSet::LyapunovSublevel { p } => p.nrows(),
            SafeSet::ConfigEllipsoid1d | SafeSet::Halfspace1d { .. } => 2,
            SafeSet::ConfigBall2d => 4,
        }
    }

    /// Number of leading coordinates the barrier depends on.
    pub fn constrained_dim(&self) -> usize {
        match self {
            SafeSet::LyapunovSublevel { p } => p.nrows(),
            SafeSet::ConfigEllipsoid1d | SafeSet::Halfspace1d { .. } => 1,
            SafeSet::ConfigBall2d => 2,
        }
    }

    pub fn is_compact(&self) -> bool {
        matches!(self, SafeSet::LyapunovSublevel { .. })
    }

    /// True when `s̃` is affine, which makes the decrement affine in the input.
    pub fn is_affine(&self) -> bool {
        matches!(self, SafeSet::Halfspace1d { .. })
    }

    fn check(&self, x: &Vector) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::Contract(format!(
                "{} barrier expects state length {}, got {}",
                self.name(),
                self.state_dim(),
                x.len()
            )));
        }
        Ok(())
    }

    pub fn value(&self, x: &Vector) -> Result<f64> {
        self.check(x)?;
        Ok(match self {
            SafeSet::LyapunovSublevel { p } => 1.0 - x.dot(&(p * x)),
            SafeSet::ConfigEllipsoid1d => 1.0 - x[0] * x[0],
            SafeSet::Halfspace1d { offset } => x[0] + offset,
            SafeSet::ConfigBall2d => 1.0 - x[0] * x[0] - x[1] * x[1],
        })
    }

    pub fn gradient(&self, x: &Vector) -> Result<Vector> {
        self.check(x)?;
        let mut g = Vector::zeros(x.len());
        match self {
            SafeSet::LyapunovSublevel { p } => g = -2.0 * (p * x),
            SafeSet::ConfigEllipsoid1d => g[0] = -2.0 * x[0],
            SafeSet::Halfspace1d { .. } => g[0] = 1.0,
            SafeSet::ConfigBall2d => {
                g[0] = -2.0 * x[0];
                g[1] = -2.0 * x[1];
            }
        }
        Ok(g)
    }

    pub fn hessian(&self, x: &Vector) -> Result<Matrix> {
        self.check(x)?;
        let n = x.len();
        let mut hess = Matrix::zeros(n, n);
        match self {
            SafeSet::LyapunovSublevel { p } => hess = -2.0 * p,
            SafeSet::ConfigEllipsoid1d => hess[(0, 0)] = -2.0,
            SafeSet::Halfspace1d { .. } => {}
            SafeSet::ConfigBall2d => {
                hess[(0, 0)] = -2.0;
                hess[(1, 1)] = -2.0;
            }
        }
        Ok(hess)
    }

    /// `s̃` evaluated on the leading [`constrained_dim`](Self::constrained_dim) coordinates.
    pub fn reduced_value(&self, z: &Vector) -> f64 {
        match self {
            SafeSet::LyapunovSublevel { p } => 1.0 - (z.transpose() * p * z)[(0, 0)],
            SafeSet::ConfigEllipsoid1d => 1.0 - z[0].powi(2),
            SafeSet::Halfspace1d { offset } => z[0] + offset,
            SafeSet::ConfigBall2d => 1.0 - z.norm_squared(),
        }
    }

    pub fn reduced_gradient(&self, z: &Vector) -> Vector {
        match self {
            SafeSet::LyapunovSublevel { p } => -(p * z + p.transpose() * z),
            SafeSet::ConfigEllipsoid1d | SafeSet::ConfigBall2d => -2.0 * z,
            SafeSet::Halfspace1d { .. } => Vector::from_element(1, 1.0),
        }
    }

    pub fn reduced_hessian(&self) -> Matrix {
        match self {
            SafeSet::LyapunovSublevel { p } => -(p + p.transpose()),
            SafeSet::ConfigEllipsoid1d => Matrix::from_element(1, 1, -2.0),
            SafeSet::Halfspace1d { .. } => Matrix::zeros(1, 1),
            SafeSet::ConfigBall2d => Matrix::identity(2, 2) * -2.0,
        }
    }

    pub fn contains(&self, x: &Vector) -> Result<bool> {
        Ok(self.value(x)? >= 0.0)
    }

    /// Euclidean distance to the set. Velocity fibers are unconstrained, so
    /// only the constrained coordinates contribute.
    pub fn distance(&self, x: &Vector) -> Result<f64> {
        self.check(x)?;
        Ok(match self {
            SafeSet::LyapunovSublevel { p } => ellipsoid_distance(p, x)?,
            SafeSet::ConfigEllipsoid1d => (x[0].abs() - 1.0).max(0.0),
            SafeSet::Halfspace1d { offset } => (-(x[0] + offset)).max(0.0),
            SafeSet::ConfigBall2d => (x.rows(0, 2).norm() - 1.0).max(0.0),
        })
    }

    /// Per-coordinate box containing `𝒞 ⊕ B̄_margin` (velocities clipped to
    /// `±velocity_bound` where the set leaves them free; the halfspace is cut
    /// at `θ ≤ 1`).
    pub fn sampling_box(&self, margin: f64, velocity_bound: f64) -> Vec<(f64, f64)> {
        match self {
            SafeSet::LyapunovSublevel { p } => {
                let p_inv = p.clone().try_inverse().expect("positive definite");
                (0..p.nrows())
                    .map(|i| {
                        let w = p_inv[(i, i)].sqrt() + margin;
                        (-w, w)
                    })
                    .collect()
            }
            SafeSet::ConfigEllipsoid1d => vec![(-1.0 - margin, 1.0 + margin), (-velocity_bound, velocity_bound)],
            SafeSet::Halfspace1d { offset } => vec![(-offset - margin, 1.0), (-velocity_bound, velocity_bound)],
            SafeSet::ConfigBall2d => {
                let w = 1.0 + margin;
                vec![(-w, w), (-w, w), (-velocity_bound, velocity_bound), (-velocity_bound, velocity_bound)]
            }
        }
    }

    /// Deterministic parametric samples of the zero level set.
    pub fn boundary_samples(&self, count: usize) -> Vec<Vector> {
        let count = count.max(2);
        let vel = |k: usize| -VELOCITY_SAMPLE_BOUND + 2.0 * VELOCITY_SAMPLE_BOUND * k as f64 / (count - 1) as f64;
        match self {
            SafeSet::LyapunovSublevel { p } => {
                let n = p.nrows();
                let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
                (0..count)
                    .map(|k| {
                        let d = if n == 2 {
                            let t = std::f64::consts::TAU * k as f64 / count as f64;
                            Vector::from_column_slice(&[t.cos(), t.sin()])
                        } else {
                            Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
                        };
                        let scale = d.dot(&(p * &d)).sqrt();
                        d / scale
                    })
                    .collect()
            }
            SafeSet::ConfigEllipsoid1d => (0..count)
                .map(|k| Vector::from_column_slice(&[if k % 2 == 0 { 1.0 } else { -1.0 }, vel(k)]))
                .collect(),
            SafeSet::Halfspace1d { offset } => {
                (0..count).map(|k| Vector::from_column_slice(&[-offset, vel(k)])).collect()
            }
            SafeSet::ConfigBall2d => (0..count)
                .map(|k| {
                    let t = std::f64::consts::TAU * k as f64 / count as f64;
                    let w = vel((k * 7919) % count);
                    Vector::from_column_slice(&[t.cos(), t.sin(), w, -w])
                })
                .collect(),
        }
    }

    /// Seeded uniform samples from [`sampling_box`](Self::sampling_box)
    /// filtered to `d_𝒞 ≤ margin`.
    pub fn neighborhood_samples(&self, margin: f64, count: usize, seed: u64) -> Result<Vec<Vector>> {
        let bounds = self.sampling_box(margin, VELOCITY_SAMPLE_BOUND);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        let mut attempts = 0usize;
        while out.len() < count {
            attempts += 1;
            if attempts > 1000 * count.max(1) {
                return Err(Error::Sampling { rate: out.len() as f64 / attempts as f64, attempts });
            }
            let x = Vector::from_iterator(bounds.len(), bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)));
            if self.distance(&x)? <= margin {
                out.push(x);
            }
        }
        Ok(out)
    }

    /// Points `y + t·n(y)` pushed outward from sampled boundary points `y`
    /// along the unit outward normal, with `t` uniform in `(0, depth]`. For
    /// these convex sets `d_𝒞 = t`.
    pub fn outward_collar_samples(&self, count: usize, depth: f64, seed: u64) -> Result<Vec<Vector>> {
        let boundary = self.boundary_samples(count);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        boundary
            .into_iter()
            .map(|y| {
                let g = self.gradient(&y)?;
                let normal = -&g / g.norm();
                let t = depth * (1.0 - rng.random::<f64>());
                Ok(y + normal * t)
            })
            .collect()
    }
}

impl fmt::Display for SafeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn ellipsoid_distance(p: &Matrix, x: &Vector) -> Result<f64> {
    if x.dot(&(p * x)) <= 1.0 {
        return Ok(0.0);
    }
    // y(t) = (I + tP)⁻¹x; find t ≥ 0 with y(t)ᵀPy(t) = 1 in the eigenbasis.
    let eig = SymmetricEigen::new(p.clone());
    let z = eig.eigenvectors.transpose() * x;
    let lam = &eig.eigenvalues;
    let residual = |t: f64| -> (f64, f64) {
        let mut g = -1.0;
        let mut dg = 0.0;
        for (zi, li) in z.iter().zip(lam.iter()) {
            let d = 1.0 + t * li;
            g += li * zi * zi / (d * d);
            dg -= 2.0 * li * li * zi * zi / (d * d * d);
        }
        (g, dg)
    };
    let mut t = 0.0;
    for _ in 0..PROJECTION_MAX_ITERS {
        let (g, dg) = residual(t);
        let step = -g / dg;
        t += step;
        if step.abs() <= PROJECTION_TOL * 1e-3 * (1.0 + t) || g.abs() <= 1e-15 {
            let dist = z
                .iter()
                .zip(lam.iter())
                .map(|(zi, li)| {
                    let shift = zi * t * li / (1.0 + t * li);
                    shift * shift
                })
                .sum::<f64>()
                .sqrt();
            return Ok(dist);
        }
    }
    Err(Error::ProjectionNonConvergence { iterations: PROJECTION_MAX_ITERS })
}

pub fn distance_to_set(set: &SafeSet, x: &Vector) -> Result<f64> {
    set.distance(x)
}

/// Structural metadata: `s(x) = s̃(ζ₁, …, ζ_q)` on the first `q` state blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BarrierStructure {
    pub q: usize,
    pub block_len: usize,
    pub concave_in_last: bool,
    pub affine_in_last: bool,
}

/// A barrier candidate with its comparison function.
#[derive(Debug, Clone)]
pub struct BarrierFamily {
    pub set: SafeSet,
    pub alpha: ComparisonFunction,
    pub structure: Option<BarrierStructure>,
    pub lipschitz_m: Option<f64>,
    pub margin_eps: f64,
}

impl BarrierFamily {
    /// `block_len` is the block size `ℓ` of the system, when it has one; the
    /// structure is recorded only if the constrained coordinates tile into
    /// whole blocks.
    pub fn new(set: SafeSet, alpha: ComparisonFunction, block_len: Option<usize>) -> Self {
        let structure = block_len.and_then(|l| {
            let c = set.constrained_dim();
            (l > 0 && c.is_multiple_of(l)).then(|| BarrierStructure {
                q: c / l,
                block_len: l,
                // Every built-in s̃ is concave in all its arguments.
                concave_in_last: true,
                affine_in_last: set.is_affine(),
            })
        });
        Self { set, alpha, structure, lipschitz_m: None, margin_eps: 0.1 }
    }

    pub fn value(&self, x: &Vector) -> Result<f64> {
        self.set.value(x)
    }

    /// `s(x) = s̃(ζ₁,…,ζ_q)` using the reduced evaluator.
    pub fn reduced_value(&self, x: &Vector) -> Result<f64> {
        self.set.check(x)?;
        let c = self.set.constrained_dim();
        Ok(self.set.reduced_value(&x.rows(0, c).into_owned()))
    }
}

pub fn eval_barrier(b: &BarrierFamily, x: &Vector) -> Result<f64> {
    b.value(x)
}

/// `φ_h(x, u) = −s(F(x, u)) + s(x) − h·α(s(x))`; the decrement condition holds
/// iff the residual is nonpositive.
pub fn decrement_residual(
    b: &BarrierFamily,
    tab: &ButcherTableau,
    sys: &ControlAffineSystem,
    x: &Vector,
    u: &Vector,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Contract(format!("sample period must be positive, got {h}")));
    }
    let next = rk_step(tab, sys, x, u, h)?;
    let s_x = b.value(x)?;
    Ok(-b.value(&next)? + s_x - h * b.alpha.apply(s_x))
}

/// Sampled estimate of the constants behind the coercivity property.
#[derive(Debug, Clone, PartialEq)]
pub struct CoercivityReport {
    pub set: String,
    /// Minimum of `‖∇s‖₂` over the sampled boundary.
    pub sigma: f64,
    /// Maximum spectral norm of `∇²s` over the sampled neighborhood.
    pub mu: f64,
    /// `min(ε′, σ/μ)`.
    pub eps: f64,
    pub collar: f64,
    pub boundary_points: usize,
    pub collar_points: usize,
}

impl CoercivityReport {
    /// `δ(η) = σ·η/2·(1 − 10⁻⁶)`.
    pub fn delta_of_eta(&self, eta: f64) -> f64 {
        self.sigma * eta / 2.0 * (1.0 - DELTA_GUARD)
    }

    /// `σ/μ`, infinite when the Hessian vanishes.
    pub fn radius(&self) -> f64 {
        if self.mu == 0.0 {
            f64::INFINITY
        } else {
            self.sigma / self.mu
        }
    }

    pub fn to_report_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "[coercivity]");
        let _ = writeln!(out, "set = {}", self.set);
        let _ = writeln!(out, "sigma = {}", self.sigma);
        let _ = writeln!(out, "mu = {}", self.mu);
        let _ = writeln!(out, "sigma_over_mu = {}", self.radius());
        let _ = writeln!(out, "collar = {}", self.collar);
        let _ = writeln!(out, "eps = {}", self.eps);
        let _ = writeln!(out, "delta_per_eta = {}", self.delta_of_eta(1.0));
        let _ = writeln!(out, "boundary_points = {}", self.boundary_points);
        let _ = writeln!(out, "collar_points = {}", self.collar_points);
        out
    }
}

/// Estimates `σ`, `μ` and `ε` by sampling `resolution` boundary points and
/// `resolution` points of `𝒞 ⊕ B̄_collar`.
pub fn coercivity_constants(b: &BarrierFamily, collar: f64, resolution: usize) -> Result<CoercivityReport> {
    if !(collar > 0.0) {
        return Err(Error::Contract("collar width must be positive".into()));
    }
    let set = &b.set;
    let boundary = set.boundary_samples(resolution);
    let mut sigma = f64::INFINITY;
    for y in &boundary {
        sigma = sigma.min(set.gradient(y)?.norm());
    }
    if !(sigma > REGULAR_VALUE_THRESHOLD) {
        return Err(Error::NotRegularValue { sigma });
    }
    let neighborhood = set.neighborhood_samples(collar, resolution, 0xc011a)?;
    let mut mu: f64 = 0.0;
    for x in &neighborhood {
        let eig = SymmetricEigen::new(set.hessian(x)?).eigenvalues;
        mu = mu.max(eig.amax());
    }
    let eps = if mu == 0.0 { collar } else { collar.min(sigma / mu) };
    Ok(CoercivityReport {
        set: set.name().to_string(),
        sigma,
        mu,
        eps,
        collar,
        boundary_points: boundary.len(),
        collar_points: neighborhood.len(),
    })
}

/// `1.05 × max ‖∇s‖₂` over seeded samples of `𝒞 ⊕ B̄_margin`.
pub fn estimate_lipschitz(set: &SafeSet, margin: f64, samples: usize, seed: u64) -> Result<f64> {
    let mut best: f64 = 0.0;
    for x in set.neighborhood_samples(margin, samples, seed)? {
        best = best.max(set.gradient(&x)?.norm());
    }
    Ok(1.05 * best)
}

/// Stabilizing solution of `AᵀP + PA − PBR⁻¹BᵀP + Q = 0` for the feedback
/// linearized pendulum: `A = [[0,1],[0,0]]`, `B = [0,1]ᵀ`, `Q = I₂`, `R = 1`.
///
/// Entrywise the equation reads `p₂² = 1`, `p₁ = p₂p₃`, `p₃² = 2p₂ + 1`, so the
/// positive definite root is `p₂ = 1`, `p₁ = p₃ = √3`.
pub fn care_double_integrator() -> Matrix {
    let r3 = 3f64.sqrt();
    Matrix::from_row_slice(2, 2, &[r3, 1.0, 1.0, r3])
}

/// `AᵀP + PA − PBR⁻¹BᵀP + Q`.
pub fn care_residual(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Matrix {
    let r_inv = r.clone().try_inverse().expect("input cost must be invertible");
    a.transpose() * p + p * a - p * b * r_inv * b.transpose() * p + q
}
