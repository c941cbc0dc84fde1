use proptest::prelude::*;

use sdcbf::controller::AffineConstraint;
use sdcbf::harness::{build_controller, ScenarioConfig, Scale, BUILTIN_SCENARIOS};
use sdcbf::{
    decrement_residual, distance_to_set, pendulum_model, project_single_constraint, rk_step,
    sample_initial_conditions, simulate_closed_loop, to_control_affine, ButcherTableau, ExactMapOracle,
    InitialConditionSpec, PendulumKind, SafeSet, SolverConfig, Vector,
};

fn state(kind: PendulumKind, xs: &[f64]) -> Vector {
    let n = if kind == PendulumKind::Single { 2 } else { 4 };
    Vector::from_column_slice(&xs[..n])
}

fn kinds() -> impl Strategy<Value = PendulumKind> {
    prop_oneof![Just(PendulumKind::Single), Just(PendulumKind::Double)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_period_step_is_identity(kind in kinds(), xs in prop::collection::vec(-3.0f64..3.0, 4), u in -5.0f64..5.0) {
        let sys = to_control_affine(&pendulum_model(kind));
        let x = state(kind, &xs);
        let u = Vector::from_element(sys.input_dim(), u);
        for tab in [ButcherTableau::euler(), ButcherTableau::midpoint()] {
            prop_assert_eq!(rk_step(&tab, &sys, &x, &u, 0.0).unwrap(), x.clone());
        }
        prop_assert_eq!(ExactMapOracle::default().step(&sys, &x, &u, 0.0).unwrap().state, x);
    }

    #[test]
    fn distance_is_zero_exactly_on_the_set(xs in prop::collection::vec(-2.0f64..2.0, 4)) {
        for name in ["lyapunov", "config_ellipsoid", "halfspace", "config_ball"] {
            let set = SafeSet::from_name(name).unwrap();
            let x = Vector::from_column_slice(&xs[..set.state_dim()]);
            let d = distance_to_set(&set, &x).unwrap();
            prop_assert!(d >= 0.0);
            prop_assert_eq!(d == 0.0, set.value(&x).unwrap() >= 0.0, "{}", name);
        }
    }

    #[test]
    fn affine_projection_is_feasible_optimal_and_idempotent(
        a in prop::collection::vec(-3.0f64..3.0, 2), b in -5.0f64..5.0, k in prop::collection::vec(-10.0f64..10.0, 2),
    ) {
        let a = Vector::from_vec(a);
        prop_assume!(a.norm() > 1e-3);
        let phi = AffineConstraint { a: a.clone(), b };
        let k_d = Vector::from_vec(k);
        let cfg = SolverConfig::default();
        let p = project_single_constraint(&k_d, &phi, &cfg).unwrap();
        prop_assert!(b - a.dot(&p.input) <= 1e-8);
        let expected = (b - a.dot(&k_d)).max(0.0) / a.norm();
        prop_assert!(((&p.input - &k_d).norm() - expected).abs() <= 1e-9);
        let again = project_single_constraint(&p.input, &phi, &cfg).unwrap();
        prop_assert!((again.input - &p.input).amax() <= 1e-12);
    }

    #[test]
    fn filter_certifies_decrement_in_every_scenario(
        idx in 0usize..4, xs in prop::collection::vec(-1.5f64..1.5, 4), t in 0.0f64..1.0,
    ) {
        let cfg = ScenarioConfig::builtin(BUILTIN_SCENARIOS[idx], Scale::Desk).unwrap();
        let ctrl = build_controller(&cfg).unwrap();
        let x = Vector::from_column_slice(&xs[..ctrl.system.state_dim()]);
        let h = cfg.periods[0] * (cfg.periods[10] / cfg.periods[0]).powf(t);
        let u = ctrl.filter(&x, h).unwrap();
        let phi = decrement_residual(&ctrl.barrier, &ctrl.tableau, &ctrl.system, &x, &u, h).unwrap();
        prop_assert!(phi <= cfg.solver.feas_tol, "phi {}", phi);
    }

    #[test]
    fn seeded_sampling_is_deterministic(seed in any::<u64>()) {
        let spec = InitialConditionSpec::UniformInSet {
            ranges: vec![(-1.0, 1.0); 2],
            set: SafeSet::from_name("lyapunov").unwrap(),
            count: 20,
            seed,
        };
        prop_assert_eq!(sample_initial_conditions(&spec).unwrap(), sample_initial_conditions(&spec).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn records_follow_the_exact_recursion(theta in -0.9f64..0.9, omega in -3.0f64..3.0, h in 0.05f64..0.5) {
        let cfg = ScenarioConfig::builtin("single_config_ellipsoid", Scale::Desk).unwrap();
        let ctrl = build_controller(&cfg).unwrap();
        let oracle = ExactMapOracle::default();
        let x0 = Vector::from_column_slice(&[theta, omega]);
        let rec = simulate_closed_loop(&ctrl, &oracle, &x0, h, 2.0).unwrap();
        prop_assert!(rec.failure.is_none());
        prop_assert_eq!(rec.states.len(), rec.inputs.len() + 1);
        prop_assert_eq!(rec.sample_times.len(), rec.states.len());
        for k in 0..rec.inputs.len() {
            let next = oracle.step(&ctrl.system, &rec.states[k], &rec.inputs[k], h).unwrap().state;
            prop_assert!((next - &rec.states[k + 1]).amax() <= 1e-12);
            prop_assert!(rec.decrement_residuals[k] <= 1e-8);
        }
    }
}
