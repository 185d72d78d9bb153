//! Time-varying quadratic program with one moving halfspace constraint.
//!
//! `f0 = ½(x1 + sin t)² + 3/2 (x2 + cos t)²` subject to
//! `f1 = x2 - x1 - cos t <= 0`. The unconstrained minimizer `(-sin t, -cos t)`
//! leaves the feasible set periodically, so the constraint switches between
//! active and inactive.

use crate::barrier::BarrierSchedules;
use crate::dynamics::GainSettings;
use crate::error::Result;
use crate::integrator::{InitialState, IntegratorConfig};
use crate::problem::{FnField, Matrix, TimePartials, TimeVaryingProblem, Vector};

/// Settings of the published run.
#[derive(Debug, Clone)]
pub struct TvqpScenario {
    pub problem: TimeVaryingProblem,
    pub x0: Vector,
    pub alpha: f64,
    pub c0: f64,
    pub gamma_c: f64,
    pub s0: f64,
    pub gamma_s: f64,
    pub tau: f64,
    pub t_end: f64,
}

impl TvqpScenario {
    pub fn paper() -> Self {
        Self {
            problem: build_tvqp(),
            x0: Vector::from_vec(vec![-2.0, 0.0]),
            alpha: 5.0,
            c0: 10.0,
            gamma_c: 1.0,
            s0: 2.0,
            gamma_s: 5.0,
            tau: 0.1,
            t_end: 2.0 * std::f64::consts::PI,
        }
    }

    pub fn schedules(&self) -> Result<BarrierSchedules> {
        BarrierSchedules::new(self.c0, self.gamma_c, self.s0, self.gamma_s)
    }

    pub fn gains(&self) -> GainSettings {
        GainSettings::with_alpha(self.alpha)
    }

    pub fn integrator_config(&self) -> IntegratorConfig {
        IntegratorConfig::new(self.tau, self.t_end)
    }

    pub fn initial_state(&self) -> InitialState {
        InitialState::new(self.x0.clone())
    }
}

pub fn build_tvqp() -> TimeVaryingProblem {
    let objective = FnField::new(
        |x: &Vector, t: f64| 0.5 * (x[0] + t.sin()).powi(2) + 1.5 * (x[1] + t.cos()).powi(2),
        |x: &Vector, t: f64| Vector::from_vec(vec![x[0] + t.sin(), 3.0 * (x[1] + t.cos())]),
    )
    .with_hessian(|_, _| Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 3.0])))
    .with_time_partials(|x: &Vector, t: f64| TimePartials {
        value: (x[0] + t.sin()) * t.cos() - 3.0 * (x[1] + t.cos()) * t.sin(),
        grad: Vector::from_vec(vec![t.cos(), -3.0 * t.sin()]),
    });
    let constraint = FnField::new(
        |x: &Vector, t: f64| x[1] - x[0] - t.cos(),
        |_, _| Vector::from_vec(vec![-1.0, 1.0]),
    )
    .with_time_partials(|_, t: f64| TimePartials {
        value: t.sin(),
        grad: Vector::zeros(2),
    });
    TimeVaryingProblem::new(2, objective, 1.0)
        .expect("valid dimension and modulus")
        .with_inequality(constraint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{solve_static, OracleConfig};
    use crate::problem::fd_time_partials;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn start_is_infeasible() {
        let p = build_tvqp();
        let f = p.inequality_values(&Vector::from_vec(vec![-2.0, 0.0]), 0.0).unwrap();
        assert_eq!(f[0], 1.0);
    }

    #[test]
    fn hessian_is_constant() {
        let p = build_tvqp();
        for (x0, x1, t) in [(0.0, 0.0, 0.0), (3.0, -1.0, 2.5), (-7.0, 4.0, 10.0)] {
            let b = p.bundle(&Vector::from_vec(vec![x0, x1]), t).unwrap();
            assert_eq!(b.hess_f0, Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 3.0])));
            assert!(b.hess_ineq[0].is_none());
        }
    }

    #[test]
    fn analytic_partials_match_differences() {
        let p = build_tvqp();
        let x = Vector::from_vec(vec![0.3, -1.1]);
        for t in [0.5, 1.7, 4.0] {
            let fd = fd_time_partials(p.objective(), &x, t, 1e-5).unwrap();
            let b = p.bundle(&x, t).unwrap();
            assert_abs_diff_eq!(fd.grad, b.grad_t_f0, epsilon = 1e-8);
            let fd1 = fd_time_partials(p.inequality(0), &x, t, 1e-5).unwrap();
            assert_abs_diff_eq!(fd1.value, b.dt_ineq[0], epsilon = 1e-8);
        }
    }

    #[test]
    fn optimum_at_half_pi() {
        let sol = solve_static(&build_tvqp(), FRAC_PI_2, &OracleConfig::default()).unwrap();
        assert_abs_diff_eq!(sol.x, Vector::from_vec(vec![-0.25, -0.25]), epsilon = 1e-8);
    }

    #[test]
    fn paper_preset() {
        let s = TvqpScenario::paper();
        let v = s.schedules().unwrap().eval(0.0);
        assert_eq!((v.c, v.s), (10.0, 2.0));
        assert_eq!(s.integrator_config().steps(), 63);
    }
}
