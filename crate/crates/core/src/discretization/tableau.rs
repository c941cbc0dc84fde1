use std::fmt;

use crate::dynamics::ControlAffineSystem;
use crate::{Error, Matrix, Result, Vector};

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Coefficients `(b, a)` of an explicit `p`-stage Runge-Kutta scheme.
///
/// The weights are nonnegative and sum to one; `a` is strictly lower
/// triangular so every stage only depends on earlier ones.
#[derive(Clone, PartialEq)]
pub struct ButcherTableau {
    name: String,
    weights: Vec<f64>,
    coefficients: Matrix,
}

impl fmt::Debug for ButcherTableau {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ButcherTableau")
            .field("name", &self.name)
            .field("b", &self.weights)
            .field("a", &self.coefficients.as_slice())
            .finish()
    }
}

impl ButcherTableau {
    pub fn new(name: impl Into<String>, weights: Vec<f64>, coefficients: Matrix) -> Result<Self> {
        let p = weights.len();
        if p == 0 {
            return Err(Error::config("tableau needs at least one stage"));
        }
        if coefficients.nrows() != p || coefficients.ncols() != p {
            return Err(Error::config(format!("tableau `a` must be {p}x{p}")));
        }
        if weights.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::config("tableau weights must be finite and nonnegative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::config(format!("tableau weights sum to {sum}, expected 1")));
        }
        for i in 0..p {
            for j in i..p {
                if coefficients[(i, j)] != 0.0 {
                    return Err(Error::config("tableau `a` must be strictly lower triangular"));
                }
            }
        }
        if coefficients.iter().any(|a| !a.is_finite()) {
            return Err(Error::config("tableau coefficients must be finite"));
        }
        Ok(Self { name: name.into(), weights, coefficients })
    }

    /// Forward Euler.
    pub fn euler() -> Self {
        Self::new("euler", vec![1.0], Matrix::zeros(1, 1)).expect("valid tableau")
    }

    /// Explicit midpoint rule: `z₂ = x + (h/2)k₁`, `F = x + h·k₂`.
    pub fn midpoint() -> Self {
        Self::new("midpoint", vec![0.0, 1.0], Matrix::from_row_slice(2, 2, &[0.0, 0.0, 0.5, 0.0])).expect("valid tableau")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn stages(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn coefficients(&self) -> &Matrix {
        &self.coefficients
    }

    /// Row sums `cᵢ = Σⱼ aᵢⱼ`.
    pub fn nodes(&self) -> Vec<f64> {
        (0..self.stages()).map(|i| self.coefficients.row(i).sum()).collect()
    }
}

/// Looks up a built-in tableau by name.
pub fn standard_tableau(kind: &str) -> Result<ButcherTableau> {
    match kind {
        "euler" => Ok(ButcherTableau::euler()),
        "midpoint" => Ok(ButcherTableau::midpoint()),
        other => Err(Error::config(format!("unknown tableau `{other}`"))),
    }
}

/// One step of the approximate map `x + h Σ bᵢ (f(zᵢ) + g(zᵢ)u)`.
pub fn rk_step(tab: &ButcherTableau, sys: &ControlAffineSystem, x: &Vector, u: &Vector, h: f64) -> Result<Vector> {
    if !(h >= 0.0) || !h.is_finite() {
        return Err(Error::Contract(format!("sample period must be finite and nonnegative, got {h}")));
    }
    sys.check_state(x)?;
    sys.check_input(u)?;
    let p = tab.stages();
    let mut slopes: Vec<Vector> = Vec::with_capacity(p);
    for i in 0..p {
        let mut z = x.clone();
        for (j, k) in slopes.iter().enumerate() {
            let a = tab.coefficients[(i, j)];
            if a != 0.0 {
                z.axpy(h * a, k, 1.0);
            }
        }
        slopes.push(sys.vector_field(&z, u)?);
    }
    let mut next = x.clone();
    for (b, k) in tab.weights.iter().zip(&slopes) {
        if *b != 0.0 {
            next.axpy(h * b, k, 1.0);
        }
    }
    if !next.iter().all(|v| v.is_finite()) {
        return Err(Error::NumericDomain("Runge-Kutta step".into()));
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{pendulum_model, to_control_affine, PendulumKind};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn single() -> ControlAffineSystem {
        to_control_affine(&pendulum_model(PendulumKind::Single))
    }

    #[test]
    fn zero_period_is_identity() {
        let sys = single();
        let x = v(&[0.3, -1.2]);
        for tab in [ButcherTableau::euler(), ButcherTableau::midpoint()] {
            assert_eq!(rk_step(&tab, &sys, &x, &v(&[4.0]), 0.0).unwrap(), x);
        }
    }

    #[test]
    fn euler_step_example() {
        let next = rk_step(&ButcherTableau::euler(), &single(), &v(&[FRAC_PI_2, 0.0]), &v(&[0.0]), 0.1).unwrap();
        assert!((next - v(&[FRAC_PI_2, 0.1])).amax() < 1e-15);
    }

    #[test]
    fn midpoint_step_example() {
        let next = rk_step(&ButcherTableau::midpoint(), &single(), &v(&[0.0, 0.0]), &v(&[1.0]), 0.2).unwrap();
        assert!((next - v(&[0.02, 0.2])).amax() < 1e-15);
    }

    #[test]
    fn negative_period_rejected() {
        let err = rk_step(&ButcherTableau::euler(), &single(), &v(&[0.0, 0.0]), &v(&[0.0]), -0.1);
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn standard_tableaux_satisfy_order_conditions() {
        let euler = standard_tableau("euler").unwrap();
        assert_eq!(euler.stages(), 1);
        assert_eq!(euler.weights(), &[1.0]);
        assert_eq!(euler.coefficients()[(0, 0)], 0.0);

        let mid = standard_tableau("midpoint").unwrap();
        let b = mid.weights();
        let c = mid.nodes();
        assert_eq!(b.iter().sum::<f64>(), 1.0);
        assert_eq!(b.iter().zip(&c).map(|(b, c)| b * c).sum::<f64>(), 0.5);
        assert_eq!(mid.coefficients()[(1, 0)], 0.5);

        for tab in [euler, mid] {
            let a = tab.coefficients();
            for i in 0..tab.stages() {
                for j in i..tab.stages() {
                    assert_eq!(a[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn invalid_tableaux_rejected() {
        assert!(matches!(standard_tableau("rk9"), Err(Error::Config { .. })));
        assert!(ButcherTableau::new("bad", vec![0.5, 0.4], Matrix::zeros(2, 2)).is_err());
        assert!(ButcherTableau::new("neg", vec![1.5, -0.5], Matrix::zeros(2, 2)).is_err());
        let upper = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(ButcherTableau::new("implicit", vec![0.5, 0.5], upper).is_err());
        let heun = ButcherTableau::new("heun", vec![0.5, 0.5], Matrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]));
        assert!(heun.is_ok());
    }

    #[test]
    fn midpoint_first_block_depends_on_input_through_half_h_squared_g() {
        for kind in [PendulumKind::Single, PendulumKind::Double] {
            let sys = to_control_affine(&pendulum_model(kind));
            let m = sys.input_dim();
            let x = Vector::from_fn(2 * m, |i, _| 0.3 * (i as f64 + 1.0) - 0.5);
            let h = 0.07;
            let tab = ButcherTableau::midpoint();
            let base = rk_step(&tab, &sys, &x, &Vector::zeros(m), h).unwrap();
            let g = sys.actuation(&x).unwrap();
            let g_last = g.rows(m, m).into_owned();
            for j in 0..m {
                let mut e = Vector::zeros(m);
                e[j] = 1.0;
                let col = rk_step(&tab, &sys, &x, &e, h).unwrap() - &base;
                let expected = g_last.column(j) * (h * h / 2.0);
                assert!((col.rows(0, m) - expected).amax() < 1e-14);
            }
        }
    }

    proptest! {
        #[test]
        fn euler_step_is_affine_in_input(
            th in -3.0f64..3.0, om in -5.0f64..5.0,
            u1 in -10.0f64..10.0, u2 in -10.0f64..10.0,
            lam in 0.0f64..1.0, h in 0.0f64..0.5,
        ) {
            let sys = single();
            let tab = ButcherTableau::euler();
            let x = v(&[th, om]);
            let mix = rk_step(&tab, &sys, &x, &v(&[lam * u1 + (1.0 - lam) * u2]), h).unwrap();
            let a = rk_step(&tab, &sys, &x, &v(&[u1]), h).unwrap();
            let b = rk_step(&tab, &sys, &x, &v(&[u2]), h).unwrap();
            prop_assert!((mix - (a * lam + b * (1.0 - lam))).amax() < 1e-12);
        }
    }
}
