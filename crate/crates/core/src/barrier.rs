//! Logarithmic barrier with time-varying slack.
//!
//! The augmented objective is
//! `Φ(x, c, s, t) = f0(x, t) - (1/c) Σ log(s - fi(x, t))`,
//! defined on the enlarged domain where every residual `ψi = s - fi` is
//! positive. [`eval_phi`] returns `Φ` together with its gradient, Hessian and
//! the mixed partials in `s`, `c` and `t` that drive the prediction term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{DerivativeBundle, Matrix, Vector};

/// Default overflow cap on the barrier weight.
pub const DEFAULT_C_CAP: f64 = 1e12;

/// Exponential schedules `c(t) = c0 e^{γc t}` and `s(t) = s0 e^{-γs t}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierSchedules {
    pub c0: f64,
    pub gamma_c: f64,
    pub s0: f64,
    pub gamma_s: f64,
    pub c_cap: f64,
}

/// Values of the schedules at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleValues {
    pub c: f64,
    pub c_dot: f64,
    pub s: f64,
    pub s_dot: f64,
}

impl BarrierSchedules {
    pub fn new(c0: f64, gamma_c: f64, s0: f64, gamma_s: f64) -> Result<Self> {
        let out = Self {
            c0,
            gamma_c,
            s0,
            gamma_s,
            c_cap: DEFAULT_C_CAP,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn with_cap(mut self, c_cap: f64) -> Result<Self> {
        self.c_cap = c_cap;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.c0 > 0.0
            && self.c0.is_finite()
            && self.gamma_c >= 0.0
            && self.gamma_c.is_finite()
            && self.s0 >= 0.0
            && self.s0.is_finite()
            && self.gamma_s >= 0.0
            && self.gamma_s.is_finite()
            && self.c_cap >= self.c0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid barrier schedules {self:?}")))
        }
    }

    /// Evaluates `(c, ċ, s, ṡ)` at `t`.
    ///
    /// ```
    /// use tvipm::barrier::BarrierSchedules;
    /// let v = BarrierSchedules::new(10.0, 1.0, 2.0, 5.0).unwrap().eval(0.0);
    /// assert_eq!((v.c, v.c_dot, v.s, v.s_dot), (10.0, 10.0, 2.0, -10.0));
    /// ```
    pub fn eval(&self, t: f64) -> ScheduleValues {
        let raw = self.c0 * (self.gamma_c * t).exp();
        let (c, c_dot) = if raw >= self.c_cap {
            (self.c_cap, 0.0)
        } else {
            (raw, self.gamma_c * raw)
        };
        let s = self.s0 * (-self.gamma_s * t).exp();
        ScheduleValues {
            c,
            c_dot,
            s,
            s_dot: -self.gamma_s * s,
        }
    }
}

/// Initial slack `max(0, maxᵢ fi(x0, 0)) + 1` for an arbitrary start.
pub fn auto_slack(f_ineq_at_start: &Vector) -> f64 {
    f_ineq_at_start.iter().copied().fold(0.0, f64::max) + 1.0
}

/// `Φ` and its partial derivatives at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiEvaluation {
    pub phi: f64,
    pub psi: Vector,
    pub grad: Vector,
    pub hess: Matrix,
    pub d_ds: Vector,
    pub d_dc: Vector,
    pub d_dt: Vector,
}

fn first_nonpositive(psi: &Vector) -> Option<(usize, f64)> {
    psi.iter().enumerate().find(|(_, v)| !(**v > 0.0)).map(|(i, v)| (i, *v))
}

/// Evaluates `Φ` and its partials from a derivative bundle.
pub fn eval_phi(bundle: &DerivativeBundle, c: f64, s: f64) -> Result<PhiEvaluation> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidInput(format!("barrier weight must be positive, got {c}")));
    }
    let n = bundle.dim();
    let p = bundle.num_inequalities();
    let psi = bundle.f_ineq.map(|fi| s - fi);
    if let Some((index, v)) = first_nonpositive(&psi) {
        return Err(Error::DomainViolation { index, psi: v });
    }
    let inv_c = 1.0 / c;

    let mut phi = bundle.f0;
    let mut grad = bundle.grad_f0.clone();
    let mut hess = bundle.hess_f0.clone();
    let mut d_ds = Vector::zeros(n);
    let mut d_dc = Vector::zeros(n);
    let mut d_dt = bundle.grad_t_f0.clone();
    let mut support = Vec::with_capacity(n);

    for i in 0..p {
        let g = &bundle.grads_ineq[i];
        let r = psi[i];
        let inv_r = 1.0 / r;
        let inv_r2 = inv_r * inv_r;
        phi -= inv_c * r.ln();
        grad.axpy(inv_c * inv_r, g, 1.0);
        d_ds.axpy(-inv_c * inv_r2, g, 1.0);
        d_dc.axpy(-inv_c * inv_c * inv_r, g, 1.0);
        d_dt.axpy(inv_c * inv_r, &bundle.grad_t_ineq[i], 1.0);
        d_dt.axpy(inv_c * bundle.dt_ineq[i] * inv_r2, g, 1.0);
        if let Some(hi) = &bundle.hess_ineq[i] {
            hess += hi * (inv_c * inv_r);
        }
        // rank-one term restricted to the gradient's support
        support.clear();
        support.extend((0..n).filter(|&k| g[k] != 0.0));
        let w = inv_c * inv_r2;
        for &b in &support {
            let gb = w * g[b];
            for &a in &support {
                hess[(a, b)] += g[a] * gb;
            }
        }
    }

    Ok(PhiEvaluation {
        phi,
        psi,
        grad,
        hess,
        d_ds,
        d_dc,
        d_dt,
    })
}

/// Barrier value only, without derivatives. `None` outside the domain.
pub fn phi_value(f0: f64, f_ineq: &Vector, c: f64, s: f64) -> Option<f64> {
    let mut phi = f0;
    for fi in f_ineq.iter() {
        let r = s - fi;
        if !(r > 0.0) {
            return None;
        }
        phi -= r.ln() / c;
    }
    Some(phi)
}

/// Central-path multipliers `λ̂i = 1/(c ψi)`.
pub fn estimate_duals(psi: &Vector, c: f64) -> Result<Vector> {
    if let Some((index, v)) = first_nonpositive(psi) {
        return Err(Error::DomainViolation { index, psi: v });
    }
    Ok(psi.map(|r| 1.0 / (c * r)))
}

/// Suboptimality bound `p/c + s Σ λi`.
pub fn suboptimality_bound(p: usize, c: f64, lambdas: &Vector, s: f64) -> f64 {
    if p == 0 {
        return 0.0;
    }
    p as f64 / c + lambdas.sum() * s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{FnField, LinearConstraint, TimeVaryingProblem};
    use approx::assert_abs_diff_eq;

    fn scalar_bundle(x: f64) -> DerivativeBundle {
        let f0 = FnField::new(|x: &Vector, _| 0.5 * x[0] * x[0], |x: &Vector, _| x.clone())
            .with_hessian(|_, _| Matrix::identity(1, 1));
        TimeVaryingProblem::new(1, f0, 1.0)
            .unwrap()
            .with_inequality(LinearConstraint::new(Vector::from_element(1, 1.0), 1.0))
            .bundle(&Vector::from_element(1, x), 0.0)
            .unwrap()
    }

    #[test]
    fn schedule_examples() {
        let sched = BarrierSchedules::new(10.0, 1.0, 2.0, 5.0).unwrap();
        let v = sched.eval(0.0);
        assert_eq!(v.c, 10.0);
        assert_eq!(v.c_dot, 10.0);
        assert_eq!(v.s, 2.0);
        assert_eq!(v.s_dot, -10.0);
        let frozen = BarrierSchedules::new(3.0, 0.0, 0.0, 0.0).unwrap();
        for t in [0.0, 1.0, 100.0] {
            let v = frozen.eval(t);
            assert_eq!((v.c, v.c_dot), (3.0, 0.0));
        }
    }

    #[test]
    fn schedule_caps_weight() {
        let sched = BarrierSchedules::new(10.0, 1.0, 0.0, 0.0).unwrap();
        let v = sched.eval(100.0);
        assert_eq!(v.c, DEFAULT_C_CAP);
        assert_eq!(v.c_dot, 0.0);
    }

    #[test]
    fn auto_slack_examples() {
        assert_eq!(auto_slack(&Vector::from_vec(vec![-3.0, -1.0])), 1.0);
        assert_eq!(auto_slack(&Vector::from_vec(vec![-3.0, 2.5])), 3.5);
        assert_eq!(auto_slack(&Vector::zeros(0)), 1.0);
    }

    #[test]
    fn phi_scalar_example() {
        let e = eval_phi(&scalar_bundle(0.0), 1.0, 0.0).unwrap();
        assert_eq!(e.psi[0], 1.0);
        assert_eq!(e.phi, 0.0);
        assert_eq!(e.grad[0], 1.0);
        assert_eq!(e.hess[(0, 0)], 2.0);
        assert_eq!(e.d_ds[0], -1.0);
        assert_eq!(e.d_dc[0], -1.0);

        let e = eval_phi(&scalar_bundle(0.5), 1.0, 0.0).unwrap();
        assert_eq!(e.psi[0], 0.5);
        assert_abs_diff_eq!(e.grad[0], 2.5, epsilon = 1e-15);
    }

    #[test]
    fn phi_without_constraints() {
        let f0 = FnField::new(|x: &Vector, _| 0.5 * x[0] * x[0], |x: &Vector, _| x.clone())
            .with_hessian(|_, _| Matrix::identity(1, 1));
        let b = TimeVaryingProblem::new(1, f0, 1.0)
            .unwrap()
            .bundle(&Vector::from_element(1, 2.0), 0.0)
            .unwrap();
        let e = eval_phi(&b, 7.0, 3.0).unwrap();
        assert_eq!(e.phi, 2.0);
        assert_eq!(e.grad[0], 2.0);
        assert_eq!(e.d_ds[0], 0.0);
        assert_eq!(e.d_dc[0], 0.0);
    }

    #[test]
    fn phi_outside_domain() {
        let err = eval_phi(&scalar_bundle(1.0), 1.0, 0.0).unwrap_err();
        assert_eq!(err, Error::DomainViolation { index: 0, psi: 0.0 });
    }

    #[test]
    fn dual_and_bound_examples() {
        assert_eq!(estimate_duals(&Vector::from_element(1, 1.0), 1.0).unwrap()[0], 1.0);
        let l = estimate_duals(&Vector::from_vec(vec![0.5, 2.0]), 10.0).unwrap();
        assert_abs_diff_eq!(l[0], 0.2, epsilon = 1e-16);
        assert_abs_diff_eq!(l[1], 0.05, epsilon = 1e-16);
        assert!(estimate_duals(&Vector::from_element(1, -1.0), 1.0).is_err());

        let b = suboptimality_bound(1, 10.0, &Vector::from_element(1, 0.75), 2.0);
        assert_abs_diff_eq!(b, 1.6, epsilon = 1e-15);
        assert_eq!(suboptimality_bound(0, 1e-3, &Vector::zeros(0), 5.0), 0.0);
        assert!(suboptimality_bound(1, DEFAULT_C_CAP, &Vector::from_element(1, 1.0), 0.0) < 1e-11);
    }

    #[test]
    fn phi_value_matches_eval() {
        let b = scalar_bundle(0.3);
        let e = eval_phi(&b, 4.0, 0.2).unwrap();
        assert_eq!(phi_value(b.f0, &b.f_ineq, 4.0, 0.2), Some(e.phi));
        assert_eq!(phi_value(b.f0, &b.f_ineq, 4.0, -0.8), None);
    }
}
