//! Explicit Runge-Kutta approximate maps and the adaptive exact-map oracle,
//! both under zero-order hold (the input is frozen across the sample period).

mod exact;
mod tableau;

pub use exact::{exact_step, one_step_error, ExactMapOracle, ExactStep};
pub use tableau::{rk_step, standard_tableau, ButcherTableau};
