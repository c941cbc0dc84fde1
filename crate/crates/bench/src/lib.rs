//! Shared fixtures for the criterion benchmarks.

use sdcbf::harness::{build_controller, ScenarioConfig, Scale};
use sdcbf::{SdcbfController, Vector};

/// Controller of a built-in scenario at desk scale.
pub fn controller(scenario: &str) -> SdcbfController {
    let cfg = ScenarioConfig::builtin(scenario, Scale::Desk).expect("builtin scenario");
    build_controller(&cfg).expect("valid builtin")
}

/// A state near the boundary of the scenario's safe set, moving outward.
pub fn boundary_state(scenario: &str) -> Vector {
    match scenario {
        "single_lyapunov" => Vector::from_column_slice(&[0.5, 0.3]),
        "single_halfspace" => Vector::from_column_slice(&[-0.05, -2.0]),
        "double_config_ball" => Vector::from_column_slice(&[0.6, 0.7, 1.5, 1.0]),
        _ => Vector::from_column_slice(&[0.9, 3.0]),
    }
}
