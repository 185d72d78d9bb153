//! Prediction-correction vector fields.
//!
//! Each field is a pure map from an evaluated point to a state derivative.
//! The correction term drives the gradient to zero at rate `α`; the prediction
//! term cancels the drift of the optimum caused by the time dependence of the
//! problem, the barrier weight and the slack.

use serde::{Deserialize, Serialize};

use crate::barrier::PhiEvaluation;
use crate::error::{Error, Result};
use crate::linalg::{solve_kkt, solve_spd_regularized};
use crate::problem::{DerivativeBundle, Vector};

/// Gains of the correction term and of the robust and filtered variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSettings {
    pub alpha: f64,
    pub alpha0: f64,
    pub epsilon: f64,
    pub gamma_filter: f64,
    pub eta_bound: f64,
}

impl Default for GainSettings {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            alpha0: 1.0,
            epsilon: 0.01,
            gamma_filter: 2.0,
            eta_bound: 0.0,
        }
    }
}

impl GainSettings {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(pos(self.alpha) && pos(self.alpha0) && pos(self.epsilon) && pos(self.gamma_filter)) {
            return Err(Error::InvalidInput(format!("gains must be positive: {self:?}")));
        }
        if !(self.eta_bound >= 0.0 && self.eta_bound.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "prediction error bound must be >= 0, got {}",
                self.eta_bound
            )));
        }
        Ok(())
    }

    /// Extra requirement of the robust field: `α0 > η`.
    pub fn validate_robust(&self) -> Result<()> {
        self.validate()?;
        if self.alpha0 <= self.eta_bound {
            return Err(Error::InvalidInput(format!(
                "robust gain alpha0 = {} must exceed the error bound {}",
                self.alpha0, self.eta_bound
            )));
        }
        Ok(())
    }
}

/// Primal-dual state `z = [x; ν]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KktState {
    pub x: Vector,
    pub nu: Vector,
}

impl KktState {
    pub fn new(x: Vector, nu: Vector) -> Self {
        Self { x, nu }
    }

    pub fn pack(&self) -> Vector {
        let n = self.x.len();
        let mut z = Vector::zeros(n + self.nu.len());
        z.rows_mut(0, n).copy_from(&self.x);
        z.rows_mut(n, self.nu.len()).copy_from(&self.nu);
        z
    }

    pub fn unpack(z: &Vector, n: usize) -> Self {
        Self {
            x: z.rows(0, n).clone_owned(),
            nu: z.rows(n, z.len() - n).clone_owned(),
        }
    }
}

/// Filtered gradient state `y` of the second-order dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub y: Vector,
}

fn check_dims(state: &KktState, bundle: &DerivativeBundle) -> Result<()> {
    if state.x.len() != bundle.dim() || state.nu.len() != bundle.num_equalities() {
        return Err(Error::InvalidInput(format!(
            "state has dimensions ({}, {}), problem has ({}, {})",
            state.x.len(),
            state.nu.len(),
            bundle.dim(),
            bundle.num_equalities()
        )));
    }
    Ok(())
}

/// `ẋ = -∇xx f0⁻¹ [α ∇x f0 + ∇xt f0]`.
pub fn unconstrained_field(bundle: &DerivativeBundle, alpha: f64) -> Result<Vector> {
    let rhs = &bundle.grad_f0 * alpha + &bundle.grad_t_f0;
    Ok(-solve_spd_regularized(&bundle.hess_f0, &rhs)?)
}

/// Gradient of the Lagrangian `[∇f0 + Aᵀν; Ax - b]` for the equality field.
pub fn lagrangian_gradient(state: &KktState, bundle: &DerivativeBundle) -> Vector {
    let primal = &bundle.grad_f0 + bundle.eq_a.tr_mul(&state.nu);
    let dual = &bundle.eq_a * &state.x - &bundle.eq_b;
    KktState::new(primal, dual).pack()
}

/// `ż = -∇zz L⁻¹ [α ∇z L + ∇zt L]` for `L = f0 + νᵀ(Ax - b)`.
pub fn equality_field(state: &KktState, bundle: &DerivativeBundle, alpha: f64) -> Result<Vector> {
    check_dims(state, bundle)?;
    let grad = lagrangian_gradient(state, bundle);
    let n = bundle.dim();
    let mut rhs = grad * alpha;
    let pred_x = &bundle.grad_t_f0 + bundle.eq_a_dot.tr_mul(&state.nu);
    let pred_nu = &bundle.eq_a_dot * &state.x - &bundle.eq_b_dot;
    rhs.rows_mut(0, n).axpy(1.0, &pred_x, 1.0);
    rhs.rows_mut(n, bundle.num_equalities()).axpy(1.0, &pred_nu, 1.0);
    Ok(-solve_kkt(&bundle.hess_f0, &bundle.eq_a, &rhs)?)
}

/// Prediction term `∇xsΦ ṡ + ∇xcΦ ċ + ∇xtΦ`.
pub fn barrier_prediction(phi: &PhiEvaluation, c_dot: f64, s_dot: f64) -> Vector {
    let mut pred = phi.d_dt.clone();
    pred.axpy(s_dot, &phi.d_ds, 1.0);
    pred.axpy(c_dot, &phi.d_dc, 1.0);
    pred
}

/// `ẋ = -∇xxΦ⁻¹ [α∇xΦ + ∇xsΦ ṡ + ∇xcΦ ċ + ∇xtΦ]`.
pub fn barrier_field(phi: &PhiEvaluation, c_dot: f64, s_dot: f64, alpha: f64) -> Result<Vector> {
    let mut rhs = barrier_prediction(phi, c_dot, s_dot);
    rhs.axpy(alpha, &phi.grad, 1.0);
    Ok(-solve_spd_regularized(&phi.hess, &rhs)?)
}

/// Gradient of `L = Φ + νᵀ(Ax - b)` over `z`.
pub fn combined_gradient(state: &KktState, bundle: &DerivativeBundle, phi: &PhiEvaluation) -> Vector {
    let primal = &phi.grad + bundle.eq_a.tr_mul(&state.nu);
    let dual = &bundle.eq_a * &state.x - &bundle.eq_b;
    KktState::new(primal, dual).pack()
}

/// Block-KKT analogue of [`barrier_field`] over `z = [x; ν]`.
pub fn combined_field(
    state: &KktState,
    bundle: &DerivativeBundle,
    phi: &PhiEvaluation,
    c_dot: f64,
    s_dot: f64,
    alpha: f64,
) -> Result<Vector> {
    check_dims(state, bundle)?;
    if bundle.num_equalities() == 0 {
        return barrier_field(phi, c_dot, s_dot, alpha);
    }
    let n = bundle.dim();
    let q = bundle.num_equalities();
    let mut rhs = combined_gradient(state, bundle, phi) * alpha;
    let pred_x = barrier_prediction(phi, c_dot, s_dot) + bundle.eq_a_dot.tr_mul(&state.nu);
    let pred_nu = &bundle.eq_a_dot * &state.x - &bundle.eq_b_dot;
    rhs.rows_mut(0, n).axpy(1.0, &pred_x, 1.0);
    rhs.rows_mut(n, q).axpy(1.0, &pred_nu, 1.0);
    Ok(-solve_kkt(&phi.hess, &bundle.eq_a, &rhs)?)
}

/// Filtered dynamics: `ẋ = -∇xxΦ⁻¹ [αy + prediction]`, `ẏ = -γy + α∇xΦ`.
pub fn second_order_field(
    filter: &FilterState,
    phi: &PhiEvaluation,
    c_dot: f64,
    s_dot: f64,
    gains: &GainSettings,
) -> Result<(Vector, Vector)> {
    let mut rhs = barrier_prediction(phi, c_dot, s_dot);
    rhs.axpy(gains.alpha, &filter.y, 1.0);
    let x_dot = -solve_spd_regularized(&phi.hess, &rhs)?;
    let y_dot = &phi.grad * gains.alpha - &filter.y * gains.gamma_filter;
    Ok((x_dot, y_dot))
}

/// State-dependent gain `α0 / max(‖∇xΦ‖, ε)`.
pub fn adaptive_alpha(grad_norm: f64, gains: &GainSettings) -> f64 {
    gains.alpha0 / grad_norm.max(gains.epsilon)
}

/// [`barrier_field`] with an inexact time partial and the adaptive gain.
pub fn robust_field(
    phi: &PhiEvaluation,
    c_dot: f64,
    s_dot: f64,
    noisy_d_dt: &Vector,
    gains: &GainSettings,
) -> Result<Vector> {
    let alpha = adaptive_alpha(phi.grad.norm(), gains);
    let mut rhs = noisy_d_dt.clone();
    rhs.axpy(s_dot, &phi.d_ds, 1.0);
    rhs.axpy(c_dot, &phi.d_dc, 1.0);
    rhs.axpy(alpha, &phi.grad, 1.0);
    Ok(-solve_spd_regularized(&phi.hess, &rhs)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::eval_phi;
    use crate::problem::{FnField, LinearConstraint, LinearEquality, Matrix, TimeVaryingProblem};
    use approx::assert_abs_diff_eq;

    fn sine_tracking() -> TimeVaryingProblem {
        let f0 = FnField::new(
            |x: &Vector, t: f64| 0.5 * (x[0] - t.sin()).powi(2),
            |x: &Vector, t: f64| Vector::from_element(1, x[0] - t.sin()),
        )
        .with_hessian(|_, _| Matrix::identity(1, 1));
        TimeVaryingProblem::new(1, f0, 1.0).unwrap()
    }

    fn scalar_barrier_phi(x: f64) -> PhiEvaluation {
        let f0 = FnField::new(|x: &Vector, _| 0.5 * x[0] * x[0], |x: &Vector, _| x.clone())
            .with_hessian(|_, _| Matrix::identity(1, 1));
        let b = TimeVaryingProblem::new(1, f0, 1.0)
            .unwrap()
            .with_inequality(LinearConstraint::new(Vector::from_element(1, 1.0), 1.0))
            .bundle(&Vector::from_element(1, x), 0.0)
            .unwrap();
        eval_phi(&b, 1.0, 0.0).unwrap()
    }

    fn equality_problem() -> TimeVaryingProblem {
        let f0 = FnField::new(|x: &Vector, _| 0.5 * x.norm_squared(), |x: &Vector, _| x.clone())
            .with_hessian(|_, _| Matrix::identity(2, 2))
            .with_time_partials(|_, _| crate::problem::TimePartials {
                value: 0.0,
                grad: Vector::zeros(2),
            });
        let eq = LinearEquality::new(Matrix::from_row_slice(1, 2, &[1.0, 1.0]), Vector::zeros(1))
            .with_rhs_rate(Vector::from_element(1, 1.0));
        TimeVaryingProblem::new(2, f0, 1.0).unwrap().with_equality(eq).unwrap()
    }

    #[test]
    fn unconstrained_examples() {
        let p = sine_tracking();
        let b = p.bundle(&Vector::zeros(1), 0.0).unwrap();
        for alpha in [0.5, 2.0, 10.0] {
            assert_abs_diff_eq!(unconstrained_field(&b, alpha).unwrap()[0], 1.0, epsilon = 1e-9);
        }
        let b = p.bundle(&Vector::from_element(1, 1.0), 0.0).unwrap();
        assert_abs_diff_eq!(unconstrained_field(&b, 2.0).unwrap()[0], -1.0, epsilon = 1e-9);
    }

    #[test]
    fn unconstrained_static_is_newton_flow() {
        let f0 = FnField::new(
            |x: &Vector, _| x[0] * x[0] + 2.0 * x[1] * x[1],
            |x: &Vector, _| Vector::from_vec(vec![2.0 * x[0], 4.0 * x[1]]),
        )
        .with_hessian(|_, _| Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 4.0])));
        let p = TimeVaryingProblem::new(2, f0, 2.0).unwrap();
        let x = Vector::from_vec(vec![1.0, -3.0]);
        let f = unconstrained_field(&p.bundle(&x, 1.0).unwrap(), 3.0).unwrap();
        assert_abs_diff_eq!(f, -3.0 * &x, epsilon = 1e-12);
    }

    #[test]
    fn equality_examples() {
        let p = equality_problem();
        let b = p.bundle(&Vector::zeros(2), 0.0).unwrap();
        let s = KktState::new(Vector::zeros(2), Vector::zeros(1));
        for alpha in [1.0, 7.0] {
            let z = equality_field(&s, &b, alpha).unwrap();
            assert_abs_diff_eq!(z, Vector::from_vec(vec![0.5, 0.5, -0.5]), epsilon = 1e-14);
        }
        // at the optimum (t/2, t/2), ν = -t/2 the field is pure prediction
        let t = 1.4;
        let b = p.bundle(&Vector::from_element(2, t / 2.0), t).unwrap();
        let s = KktState::new(Vector::from_element(2, t / 2.0), Vector::from_element(1, -t / 2.0));
        assert!(lagrangian_gradient(&s, &b).norm() < 1e-15);
        let z = equality_field(&s, &b, 3.0).unwrap();
        assert_abs_diff_eq!(z, Vector::from_vec(vec![0.5, 0.5, -0.5]), epsilon = 1e-14);
    }

    #[test]
    fn equality_stationary_problem_at_optimum() {
        let f0 = FnField::new(|x: &Vector, _| 0.5 * x.norm_squared(), |x: &Vector, _| x.clone())
            .with_hessian(|_, _| Matrix::identity(2, 2));
        let eq = LinearEquality::new(Matrix::from_row_slice(1, 2, &[1.0, 1.0]), Vector::from_element(1, 2.0));
        let p = TimeVaryingProblem::new(2, f0, 1.0).unwrap().with_equality(eq).unwrap();
        let x = Vector::from_element(2, 1.0);
        let s = KktState::new(x.clone(), Vector::from_element(1, -1.0));
        let z = equality_field(&s, &p.bundle(&x, 3.0).unwrap(), 2.0).unwrap();
        assert!(z.norm() < 1e-12);
    }

    #[test]
    fn barrier_examples() {
        let phi = scalar_barrier_phi(0.0);
        assert_abs_diff_eq!(barrier_field(&phi, 0.0, 0.0, 1.0).unwrap()[0], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(barrier_field(&phi, 1.0, 0.0, 1.0).unwrap()[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn barrier_zero_at_static_minimizer() {
        // minimizer of ½x² - log(1 - x): x = (1 - √5)/2
        let x = 0.5 * (1.0 - 5f64.sqrt());
        let phi = scalar_barrier_phi(x);
        assert!(phi.grad.norm() < 1e-15);
        assert!(barrier_field(&phi, 0.0, 0.0, 4.0).unwrap().norm() < 1e-15);
    }

    #[test]
    fn second_order_examples() {
        let phi = scalar_barrier_phi(0.0);
        let gains = GainSettings {
            alpha: 1.0,
            gamma_filter: 2.0,
            ..GainSettings::default()
        };
        let (xd, yd) = second_order_field(
            &FilterState {
                y: Vector::from_element(1, 1.0),
            },
            &phi,
            0.0,
            0.0,
            &gains,
        )
        .unwrap();
        assert_abs_diff_eq!(xd[0], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(yd[0], -1.0, epsilon = 1e-15);

        // steady filter state y = (α/γ)∇Φ
        let y = &phi.grad * (gains.alpha / gains.gamma_filter);
        let (_, yd) = second_order_field(&FilterState { y }, &phi, 0.0, 0.0, &gains).unwrap();
        assert_abs_diff_eq!(yd[0], 0.0, epsilon = 1e-15);

        let x = 0.5 * (1.0 - 5f64.sqrt());
        let phi = scalar_barrier_phi(x);
        let (xd, yd) = second_order_field(&FilterState { y: Vector::zeros(1) }, &phi, 0.0, 0.0, &gains).unwrap();
        assert!(xd.norm() < 1e-15 && yd.norm() < 1e-15);
    }

    #[test]
    fn adaptive_alpha_examples() {
        let g = GainSettings {
            alpha0: 1.0,
            epsilon: 0.01,
            ..GainSettings::default()
        };
        assert_eq!(adaptive_alpha(2.0, &g), 0.5);
        assert_abs_diff_eq!(adaptive_alpha(0.005, &g), 100.0, epsilon = 1e-12);
        assert_eq!(adaptive_alpha(0.01, &g), 1.0 / 0.01);
    }

    #[test]
    fn robust_examples() {
        let phi = scalar_barrier_phi(0.0);
        let g = GainSettings {
            alpha0: 1.0,
            epsilon: 0.01,
            ..GainSettings::default()
        };
        let clean = robust_field(&phi, 0.0, 0.0, &phi.d_dt, &g).unwrap();
        let alpha = adaptive_alpha(phi.grad.norm(), &g);
        assert_eq!(alpha, 1.0);
        assert_eq!(clean, barrier_field(&phi, 0.0, 0.0, alpha).unwrap());
        let noisy = &phi.d_dt + Vector::from_element(1, 0.1);
        let shifted = robust_field(&phi, 0.0, 0.0, &noisy, &g).unwrap();
        assert_abs_diff_eq!(shifted[0] - clean[0], -0.05, epsilon = 1e-15);
    }

    #[test]
    fn combined_reduces_to_components() {
        // q = 0
        let phi = scalar_barrier_phi(0.0);
        let f0 = FnField::new(|x: &Vector, _| 0.5 * x[0] * x[0], |x: &Vector, _| x.clone())
            .with_hessian(|_, _| Matrix::identity(1, 1));
        let b = TimeVaryingProblem::new(1, f0, 1.0)
            .unwrap()
            .with_inequality(LinearConstraint::new(Vector::from_element(1, 1.0), 1.0))
            .bundle(&Vector::zeros(1), 0.0)
            .unwrap();
        let s = KktState::new(Vector::zeros(1), Vector::zeros(0));
        assert_eq!(
            combined_field(&s, &b, &phi, 0.3, -0.2, 1.0).unwrap(),
            barrier_field(&phi, 0.3, -0.2, 1.0).unwrap()
        );

        // p = 0
        let p = equality_problem();
        let x = Vector::from_vec(vec![0.3, -0.1]);
        let b = p.bundle(&x, 0.5).unwrap();
        let phi = eval_phi(&b, 10.0, 1.0).unwrap();
        let s = KktState::new(x, Vector::from_element(1, 0.2));
        let a = combined_field(&s, &b, &phi, 5.0, -1.0, 2.0).unwrap();
        let e = equality_field(&s, &b, 2.0).unwrap();
        assert!((a - e).amax() < 1e-12);
    }

    #[test]
    fn gain_validation() {
        assert!(GainSettings::default().validate().is_ok());
        let g = GainSettings {
            alpha0: 0.1,
            eta_bound: 0.2,
            ..GainSettings::default()
        };
        assert!(g.validate().is_ok());
        assert!(g.validate_robust().is_err());
        assert!(GainSettings::with_alpha(-1.0).validate().is_err());
    }
}
