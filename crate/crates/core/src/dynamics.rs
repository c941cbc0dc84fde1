//! Control-affine systems `ẋ = f(x) + g(x)u`, fully actuated mechanical
//! systems `D(q)q̈ + C(q, q̇)q̇ + G(q) = u`, and the two pendulum models used by
//! the built-in scenarios.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::SymmetricEigen;

use crate::{Error, Matrix, Result, Vector};

/// Largest inertia condition number accepted before inversion is refused.
pub const INERTIA_CONDITION_LIMIT: f64 = 1e12;

type FieldFn = dyn Fn(&Vector) -> Result<(Vector, Matrix)> + Send + Sync;

/// Chain-of-integrators layout: the state is `γ` blocks of length `ℓ`, each
/// block the derivative of the previous one, with the last block actuated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockStructure {
    pub block_len: usize,
    pub blocks: usize,
}

impl BlockStructure {
    pub fn state_dim(&self) -> usize {
        self.block_len * self.blocks
    }

    /// Index range of block `j` (zero based).
    pub fn block_range(&self, j: usize) -> std::ops::Range<usize> {
        j * self.block_len..(j + 1) * self.block_len
    }
}

/// Axis-aligned box playing the role of the open working region.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkingRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl WorkingRegion {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::Contract("working region bounds must satisfy lower < upper".into()));
        }
        Ok(Self { lower, upper })
    }

    /// The cube `[-bound, bound]^n`.
    pub fn symmetric(n: usize, bound: f64) -> Self {
        Self { lower: vec![-bound; n], upper: vec![bound; n] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &Vector) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *l < *v && *v < *u)
    }
}

/// `ẋ = f(x) + g(x)u` with `x ∈ ℝⁿ`, `u ∈ ℝᵐ`.
#[derive(Clone)]
pub struct ControlAffineSystem {
    name: String,
    state_dim: usize,
    input_dim: usize,
    fields: Arc<FieldFn>,
    block_structure: Option<BlockStructure>,
}

impl fmt::Debug for ControlAffineSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlAffineSystem")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("block_structure", &self.block_structure)
            .finish()
    }
}

impl ControlAffineSystem {
    pub fn new<F, G>(name: impl Into<String>, state_dim: usize, input_dim: usize, drift: F, actuation: G) -> Result<Self>
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
        G: Fn(&Vector) -> Matrix + Send + Sync + 'static,
    {
        Self::from_fields(name, state_dim, input_dim, move |x: &Vector| Ok((drift(x), actuation(x))))
    }

    /// Builds a system from a closure returning `(f(x), g(x))` together, which
    /// lets both share intermediate work such as an inertia solve.
    pub fn from_fields<F>(name: impl Into<String>, state_dim: usize, input_dim: usize, fields: F) -> Result<Self>
    where
        F: Fn(&Vector) -> Result<(Vector, Matrix)> + Send + Sync + 'static,
    {
        if state_dim == 0 || input_dim == 0 {
            return Err(Error::Contract("state and input dimensions must be positive".into()));
        }
        Ok(Self { name: name.into(), state_dim, input_dim, fields: Arc::new(fields), block_structure: None })
    }

    /// `ẋ = Ax + Bu`.
    pub fn linear(name: impl Into<String>, a: Matrix, b: Matrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n {
            return Err(Error::Contract("linear system matrices have inconsistent shapes".into()));
        }
        let m = b.ncols();
        Self::new(name, n, m, move |x| &a * x, move |_| b.clone())
    }

    pub fn with_block_structure(mut self, blocks: BlockStructure) -> Result<Self> {
        if blocks.block_len == 0 || blocks.blocks == 0 || blocks.state_dim() != self.state_dim {
            return Err(Error::Contract(format!(
                "block structure {}x{} does not tile state dimension {}",
                blocks.block_len, blocks.blocks, self.state_dim
            )));
        }
        self.block_structure = Some(blocks);
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn block_structure(&self) -> Option<BlockStructure> {
        self.block_structure
    }

    pub(crate) fn check_state(&self, x: &Vector) -> Result<()> {
        if x.len() != self.state_dim {
            return Err(Error::Contract(format!("state has length {}, expected {}", x.len(), self.state_dim)));
        }
        Ok(())
    }

    pub(crate) fn check_input(&self, u: &Vector) -> Result<()> {
        if u.len() != self.input_dim {
            return Err(Error::Contract(format!("input has length {}, expected {}", u.len(), self.input_dim)));
        }
        Ok(())
    }

    /// Evaluates `(f(x), g(x))`, checking shapes and finiteness.
    pub fn fields(&self, x: &Vector) -> Result<(Vector, Matrix)> {
        self.check_state(x)?;
        let (f, g) = (self.fields)(x)?;
        if f.len() != self.state_dim || g.nrows() != self.state_dim || g.ncols() != self.input_dim {
            return Err(Error::Contract(format!("{}: drift/actuation returned wrong shapes", self.name)));
        }
        if !f.iter().chain(g.iter()).all(|v| v.is_finite()) {
            return Err(Error::NumericDomain(format!("{} vector field", self.name)));
        }
        Ok((f, g))
    }

    pub fn drift(&self, x: &Vector) -> Result<Vector> {
        self.fields(x).map(|(f, _)| f)
    }

    pub fn actuation(&self, x: &Vector) -> Result<Matrix> {
        self.fields(x).map(|(_, g)| g)
    }

    /// `f(x) + g(x)u`.
    pub fn vector_field(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        self.check_input(u)?;
        let (f, g) = self.fields(x)?;
        let dx = f + g * u;
        if !dx.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericDomain(format!("{} vector field", self.name)));
        }
        Ok(dx)
    }
}

pub fn eval_vector_field(system: &ControlAffineSystem, x: &Vector, u: &Vector) -> Result<Vector> {
    system.vector_field(x, u)
}

type InertiaFn = dyn Fn(&Vector) -> Matrix + Send + Sync;
type CoriolisFn = dyn Fn(&Vector, &Vector) -> Matrix + Send + Sync;
type GravityFn = dyn Fn(&Vector) -> Vector + Send + Sync;

/// Fully actuated Lagrangian system `D(q)q̈ + C(q, q̇)q̇ + G(q) = u`.
#[derive(Clone)]
pub struct MechanicalSystem {
    name: String,
    config_dim: usize,
    inertia: Arc<InertiaFn>,
    coriolis: Arc<CoriolisFn>,
    gravity: Arc<GravityFn>,
}

impl fmt::Debug for MechanicalSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MechanicalSystem").field("name", &self.name).field("config_dim", &self.config_dim).finish()
    }
}

impl MechanicalSystem {
    pub fn new<D, C, G>(name: impl Into<String>, config_dim: usize, inertia: D, coriolis: C, gravity: G) -> Result<Self>
    where
        D: Fn(&Vector) -> Matrix + Send + Sync + 'static,
        C: Fn(&Vector, &Vector) -> Matrix + Send + Sync + 'static,
        G: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        if config_dim == 0 {
            return Err(Error::Contract("configuration dimension must be positive".into()));
        }
        Ok(Self {
            name: name.into(),
            config_dim,
            inertia: Arc::new(inertia),
            coriolis: Arc::new(coriolis),
            gravity: Arc::new(gravity),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn config_dim(&self) -> usize {
        self.config_dim
    }

    pub fn inertia(&self, q: &Vector) -> Matrix {
        (self.inertia)(q)
    }

    pub fn coriolis(&self, q: &Vector, qdot: &Vector) -> Matrix {
        (self.coriolis)(q, qdot)
    }

    pub fn gravity(&self, q: &Vector) -> Vector {
        (self.gravity)(q)
    }

    /// Splits `x = (q, q̇)`.
    pub fn split_state(&self, x: &Vector) -> Result<(Vector, Vector)> {
        let m = self.config_dim;
        if x.len() != 2 * m {
            return Err(Error::Contract(format!("mechanical state has length {}, expected {}", x.len(), 2 * m)));
        }
        Ok((x.rows(0, m).into_owned(), x.rows(m, m).into_owned()))
    }

    /// `D(q)⁻¹`, refused when the condition estimate exceeds
    /// [`INERTIA_CONDITION_LIMIT`].
    pub fn inverse_inertia(&self, q: &Vector) -> Result<Matrix> {
        let d = self.inertia(q);
        if !d.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericDomain(format!("{} inertia", self.name)));
        }
        let eig = SymmetricEigen::new(d.clone()).eigenvalues;
        let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = eig.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if condition > INERTIA_CONDITION_LIMIT {
            return Err(Error::SingularInertia { condition });
        }
        d.lu().try_inverse().ok_or(Error::SingularInertia { condition: f64::INFINITY })
    }
}

/// The two pendulums of the experiments; angles clockwise from upright, the
/// second joint measured relative to the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PendulumKind {
    Single,
    Double,
}

impl PendulumKind {
    pub fn name(&self) -> &'static str {
        match self {
            PendulumKind::Single => "single_pendulum",
            PendulumKind::Double => "double_pendulum",
        }
    }
}

impl FromStr for PendulumKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_pendulum" | "single" => Ok(PendulumKind::Single),
            "double_pendulum" | "double" => Ok(PendulumKind::Double),
            other => Err(Error::config(format!("unknown system `{other}`"))),
        }
    }
}

impl fmt::Display for PendulumKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn pendulum_model(kind: PendulumKind) -> MechanicalSystem {
    match kind {
        PendulumKind::Single => MechanicalSystem::new(
            kind.name(),
            1,
            |_| Matrix::identity(1, 1),
            |_, _| Matrix::zeros(1, 1),
            |q| Vector::from_element(1, -q[0].sin()),
        ),
        PendulumKind::Double => MechanicalSystem::new(
            kind.name(),
            2,
            |q| {
                let c2 = q[1].cos();
                Matrix::from_row_slice(2, 2, &[3.0 + 2.0 * c2, 1.0 + c2, 1.0 + c2, 1.0])
            },
            |q, qd| {
                let s2 = q[1].sin();
                let w = 2.0 * qd[0] + qd[1];
                Matrix::from_row_slice(2, 2, &[0.0, -w * s2, 0.5 * w * s2, -0.5 * qd[0] * s2])
            },
            |q| {
                let s12 = (q[0] + q[1]).sin();
                Vector::from_column_slice(&[-2.0 * q[0].sin() - s12, -s12])
            },
        ),
    }
    .expect("pendulum dimensions are positive")
}

/// Rewrites the mechanical system in first-order form on `x = (q, q̇)`:
/// `f = (q̇, −D⁻¹(Cq̇ + G))`, `g = (0, D⁻¹)`, blocks `ℓ = m`, `γ = 2`.
pub fn to_control_affine(mech: &MechanicalSystem) -> ControlAffineSystem {
    let m = mech.config_dim();
    let inner = mech.clone();
    ControlAffineSystem::from_fields(mech.name(), 2 * m, m, move |x| {
        let (q, qd) = inner.split_state(x)?;
        let d_inv = inner.inverse_inertia(&q)?;
        let bias = inner.coriolis(&q, &qd) * &qd + inner.gravity(&q);
        let accel = -(&d_inv * bias);
        let mut f = Vector::zeros(2 * m);
        f.rows_mut(0, m).copy_from(&qd);
        f.rows_mut(m, m).copy_from(&accel);
        let mut g = Matrix::zeros(2 * m, m);
        g.view_mut((m, 0), (m, m)).copy_from(&d_inv);
        Ok((f, g))
    })
    .and_then(|sys| sys.with_block_structure(BlockStructure { block_len: m, blocks: 2 }))
    .expect("mechanical state dimension tiles into two blocks")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn single() -> ControlAffineSystem {
        to_control_affine(&pendulum_model(PendulumKind::Single))
    }

    fn close(a: &Vector, b: &Vector, tol: f64) -> bool {
        (a - b).amax() <= tol
    }

    #[test]
    fn single_pendulum_vector_field() {
        let sys = single();
        assert!(close(&eval_vector_field(&sys, &v(&[0.0, 0.0]), &v(&[0.0])).unwrap(), &v(&[0.0, 0.0]), 0.0));
        assert!(close(&eval_vector_field(&sys, &v(&[FRAC_PI_2, 0.0]), &v(&[0.0])).unwrap(), &v(&[0.0, 1.0]), 1e-15));
        assert!(close(&eval_vector_field(&sys, &v(&[0.0, 1.0]), &v(&[2.0])).unwrap(), &v(&[1.0, 2.0]), 0.0));
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let sys = single();
        assert!(matches!(sys.vector_field(&v(&[0.0]), &v(&[0.0])), Err(Error::Contract(_))));
        assert!(matches!(sys.vector_field(&v(&[0.0, 0.0]), &v(&[0.0, 1.0])), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_field_is_numeric_error() {
        let sys = ControlAffineSystem::new("blowup", 1, 1, |x| v(&[1.0 / x[0]]), |_| Matrix::identity(1, 1)).unwrap();
        assert!(matches!(sys.vector_field(&v(&[0.0]), &v(&[0.0])), Err(Error::NumericDomain(_))));
    }

    #[test]
    fn double_pendulum_table_entries() {
        let mech = pendulum_model(PendulumKind::Double);
        let q0 = v(&[0.0, 0.0]);
        assert_eq!(mech.inertia(&q0), Matrix::from_row_slice(2, 2, &[5.0, 2.0, 2.0, 1.0]));
        let d_pi = mech.inertia(&v(&[0.3, PI]));
        assert!((d_pi - Matrix::identity(2, 2)).amax() < 1e-15);
        assert_eq!(mech.coriolis(&v(&[0.4, 1.1]), &v(&[0.0, 0.0])), Matrix::zeros(2, 2));

        let sys = to_control_affine(&mech);
        let (f, g) = sys.fields(&v(&[0.0; 4])).unwrap();
        assert_eq!(f, Vector::zeros(4));
        let lower = g.view((2, 0), (2, 2)).into_owned();
        assert!((lower - Matrix::from_row_slice(2, 2, &[1.0, -2.0, -2.0, 5.0])).amax() < 1e-14);
        assert_eq!(g.view((0, 0), (2, 2)).into_owned(), Matrix::zeros(2, 2));
    }

    #[test]
    fn single_pendulum_table_entries() {
        let mech = pendulum_model(PendulumKind::Single);
        let q = v(&[0.7]);
        assert_eq!(mech.inertia(&q), Matrix::identity(1, 1));
        assert_eq!(mech.coriolis(&q, &v(&[3.0])), Matrix::zeros(1, 1));
        assert_eq!(mech.gravity(&q)[0], -(0.7f64).sin());
    }

    #[test]
    fn coriolis_matches_christoffel_form() {
        // Christoffel symbols of D give C q̇ = (−s₂(2q̇₁q̇₂ + q̇₂²), s₂q̇₁²).
        let mech = pendulum_model(PendulumKind::Double);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let q = v(&[rng.random_range(-PI..PI), rng.random_range(-PI..PI)]);
            let qd = v(&[rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]);
            let s2 = q[1].sin();
            let expected = v(&[-s2 * (2.0 * qd[0] * qd[1] + qd[1] * qd[1]), s2 * qd[0] * qd[0]]);
            assert!(close(&(mech.coriolis(&q, &qd) * &qd), &expected, 1e-12));
        }
    }

    #[test]
    fn inertia_is_positive_definite_on_samples() {
        let mech = pendulum_model(PendulumKind::Double);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let q = v(&[rng.random_range(-PI..=PI), rng.random_range(-PI..=PI)]);
            let eig = SymmetricEigen::new(mech.inertia(&q)).eigenvalues;
            assert!(eig.iter().all(|&l| l > 0.0), "q = {q:?}");
        }
    }

    #[test]
    fn control_affine_form_matches_direct_substitution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in [PendulumKind::Single, PendulumKind::Double] {
            let mech = pendulum_model(kind);
            let sys = to_control_affine(&mech);
            let m = mech.config_dim();
            for _ in 0..500 {
                let x = Vector::from_fn(2 * m, |i, _| if i < m { rng.random_range(-PI..PI) } else { rng.random_range(-5.0..5.0) });
                let u = Vector::from_fn(m, |_, _| rng.random_range(-10.0..10.0));
                let (q, qd) = mech.split_state(&x).unwrap();
                let rhs = &u - mech.coriolis(&q, &qd) * &qd - mech.gravity(&q);
                let qdd = mech.inertia(&q).lu().solve(&rhs).unwrap();
                let dx = sys.vector_field(&x, &u).unwrap();
                assert!(close(&dx.rows(0, m).into_owned(), &qd, 0.0));
                let err = (dx.rows(m, m) - &qdd).norm() / qdd.norm().max(1.0);
                assert!(err < 1e-12, "relative error {err}");
            }
        }
    }

    #[test]
    fn velocity_block_is_input_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for kind in [PendulumKind::Single, PendulumKind::Double] {
            let sys = to_control_affine(&pendulum_model(kind));
            let bs = sys.block_structure().unwrap();
            assert_eq!((bs.block_len, bs.blocks), (sys.input_dim(), 2));
            for _ in 0..200 {
                let x = Vector::from_fn(sys.state_dim(), |_, _| rng.random_range(-3.0..3.0));
                let u = Vector::from_fn(sys.input_dim(), |_, _| rng.random_range(-10.0..10.0));
                let dx = sys.vector_field(&x, &u).unwrap();
                let l = bs.block_len;
                assert_eq!(dx.rows(0, l), x.rows(l, l));
                let g = sys.actuation(&x).unwrap();
                assert!(g.rows(0, l).iter().all(|&e| e == 0.0));
            }
        }
    }

    #[test]
    fn singular_inertia_is_refused() {
        let mech = MechanicalSystem::new(
            "degenerate",
            2,
            |_| Matrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            |_, _| Matrix::zeros(2, 2),
            |_| Vector::zeros(2),
        )
        .unwrap();
        let sys = to_control_affine(&mech);
        assert!(matches!(sys.drift(&Vector::zeros(4)), Err(Error::SingularInertia { .. })));
    }

    #[test]
    fn block_structure_must_tile_state() {
        let sys = ControlAffineSystem::linear("lin", Matrix::identity(3, 3), Matrix::zeros(3, 1)).unwrap();
        assert!(sys.with_block_structure(BlockStructure { block_len: 2, blocks: 2 }).is_err());
    }

    #[test]
    fn working_region_membership() {
        let region = WorkingRegion::symmetric(2, 1.0);
        assert!(region.contains(&v(&[0.5, -0.5])));
        assert!(!region.contains(&v(&[1.0, 0.0])));
        assert!(!region.contains(&v(&[0.0])));
        assert!(WorkingRegion::new(vec![1.0], vec![0.0]).is_err());
    }
}
