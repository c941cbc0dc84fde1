//! Sampled-data control barrier functions.
//!
//! The crate is organised bottom-up:
//!
//! * [`dynamics`]: control-affine and mechanical systems, the pendulum models.
//! * [`discretization`]: explicit Runge-Kutta approximate maps and an adaptive
//!   integrator standing in for the exact zero-order-hold map.
//! * [`barrier`]: barrier candidates over the built-in safe sets, decrement
//!   residuals, distances and coercivity constants.
//! * [`controller`]: nominal controllers and the optimization-based safety filter.
//! * [`analysis`]: closed-loop simulation, sweeps, consistency orders,
//!   invariance and convexity checks.
//! * [`harness`]: scenario configuration, the built-in scenario registry and
//!   artifact emission.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod barrier;
pub mod controller;
pub mod discretization;
pub mod dynamics;
mod error;
pub mod harness;

pub use error::{Error, Result};

pub use analysis::{
    consistency_order, convexity_probe, invariance_check, sample_initial_conditions,
    simulate_closed_loop, sweep_max_distance, ConsistencyReport, InitialConditionSpec,
    InvarianceOutcome, SweepOptions, SweepRow, TrajectoryRecord,
};
pub use barrier::{
    care_double_integrator, coercivity_constants, decrement_residual, distance_to_set,
    eval_barrier, BarrierFamily, CoercivityReport, ComparisonFunction, SafeSet,
};
pub use controller::{
    nominal_control, project_single_constraint, sdcbf_filter, ConvexConstraint,
    NominalController, NominalKind, Projection, SdcbfController, SolverConfig,
};
pub use discretization::{
    exact_step, one_step_error, rk_step, standard_tableau, ButcherTableau, ExactMapOracle,
};
pub use dynamics::{
    eval_vector_field, pendulum_model, to_control_affine, BlockStructure, ControlAffineSystem,
    MechanicalSystem, PendulumKind, WorkingRegion,
};

/// Column vector of state or input coordinates.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix.
pub type Matrix = nalgebra::DMatrix<f64>;
