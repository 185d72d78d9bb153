//! Reference solutions of the frozen problem at sampled times.
//!
//! [`solve_static`] is a classical barrier method: a slack phase finds a
//! strictly feasible point, then damped Newton centering runs for each weight
//! of the geometric sequence `c_k = c0 · factor^k` until the duality measure
//! `p / c_k` drops below the tolerance. Equalities are handled by
//! infeasible-start Newton steps on the KKT residual.
//!
//! When the barrier point misses the KKT tolerance it seeds an active-set
//! Newton polish, with constraints whose multiplier dominates their residual
//! held as equalities. A polished point that is not primal and dual feasible
//! is discarded, and the solve fails if the tolerance is still missed.

use log::debug;
use rayon::prelude::*;

use crate::barrier::{estimate_duals, eval_phi};
use crate::error::{Error, Result};
use crate::integrator::Trajectory;
use crate::linalg::{assemble_kkt, factor_spd_regularized, solve_kkt};
use crate::problem::{Matrix, TimeVaryingProblem, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub tol: f64,
    pub c0: f64,
    pub factor: f64,
    pub max_newton_iters: usize,
    /// Starting point; zero when absent.
    pub start: Option<Vector>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            c0: 10.0,
            factor: 5.0,
            max_newton_iters: 200,
            start: None,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.c0 > 0.0 && self.factor > 1.0 && self.max_newton_iters > 0) {
            return Err(Error::InvalidInput(format!("invalid oracle config {self:?}")));
        }
        Ok(())
    }
}

/// Optimal primal-dual triple of the problem frozen at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticSolution {
    pub x: Vector,
    pub lambda: Vector,
    pub nu: Vector,
    /// Final barrier weight.
    pub c: f64,
    /// Largest of stationarity, complementarity and feasibility residuals.
    pub kkt_residual: f64,
    pub newton_steps: usize,
}

struct Centered {
    w: Vector,
    nu: Vector,
    steps: usize,
}

/// Value, gradient and Hessian of a centering objective; `None` outside its
/// domain.
type Local = Option<(f64, Vector, Matrix)>;

/// Damped Newton on `F` subject to `Aw = b`.
///
/// While `Aw != b` the steps are infeasible-start steps with a backtracking
/// search on the KKT residual norm; once feasible the search enforces the
/// Armijo condition on `F`. `stop` ends the iteration as soon as it accepts
/// the current point.
#[allow(clippy::too_many_arguments)]
fn newton_center<E, S>(
    w0: Vector,
    nu0: Vector,
    eval: E,
    a: &Matrix,
    b: &Vector,
    max_iter: usize,
    stop: S,
) -> Result<Centered>
where
    E: Fn(&Vector) -> Result<Local>,
    S: Fn(&Vector) -> bool,
{
    let n = w0.len();
    let q = a.nrows();
    let feas_tol = 1e-12 * (1.0 + b.amax());
    let kkt_norm = |g: &Vector, w: &Vector, nu: &Vector| -> f64 {
        let primal = g + a.tr_mul(nu);
        let dual = a * w - b;
        (primal.norm_squared() + dual.norm_squared()).sqrt()
    };
    let mut w = w0;
    let mut nu = nu0;
    let (mut f, mut g, mut h) = eval(&w)?.ok_or_else(|| Error::OracleFailure("start outside domain".into()))?;
    let mut steps = 0;
    loop {
        if stop(&w) {
            break;
        }
        let infeasible = q > 0 && (a * &w - b).amax() > feas_tol;
        let (dw, nu_plus) = if q == 0 {
            (-factor_spd_regularized(&h)?.solve(&g), Vector::zeros(0))
        } else {
            let mut rhs = Vector::zeros(n + q);
            rhs.rows_mut(0, n).copy_from(&(-&g));
            rhs.rows_mut(n, q).copy_from(&(b - a * &w));
            let sol = solve_kkt(&h, a, &rhs)?;
            (sol.rows(0, n).clone_owned(), sol.rows(n, q).clone_owned())
        };
        let slope = g.dot(&dw);
        if !infeasible && -slope <= 1e-20 {
            nu = nu_plus;
            break;
        }
        if steps == max_iter {
            if infeasible {
                return Err(Error::OracleFailure(format!(
                    "newton did not reach Aw = b in {max_iter} steps"
                )));
            }
            debug!("newton hit the step cap at decrement {:e}", -slope);
            nu = nu_plus;
            break;
        }
        steps += 1;
        let dnu = &nu_plus - &nu;
        let r0 = kkt_norm(&g, &w, &nu);
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-14 {
            let wt = &w + &dw * step;
            if let Some((ft, gt, ht)) = eval(&wt)? {
                let nut = &nu + &dnu * step;
                let ok = if infeasible {
                    kkt_norm(&gt, &wt, &nut) <= (1.0 - 0.01 * step) * r0
                } else {
                    ft <= f + 0.01 * step * slope
                };
                if ok {
                    accepted = Some((wt, nut, ft, gt, ht));
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((wt, nut, ft, gt, ht)) => {
                let stalled = !infeasible && f - ft <= 1e-15 * (1.0 + f.abs());
                if stalled {
                    w = wt;
                    nu = nu_plus;
                    break;
                }
                w = wt;
                nu = nut;
                f = ft;
                g = gt;
                h = ht;
            }
            None if infeasible => {
                return Err(Error::OracleFailure("infeasible-start newton stalled".into()));
            }
            None => {
                debug!("newton stalled at decrement {:e}", -slope);
                nu = nu_plus;
                break;
            }
        }
    }
    Ok(Centered { w, nu, steps })
}

/// Finds `x` with `max_i fi(x, t) < 0` by centering `ω σ + ½‖x - x0‖²`
/// subject to `fi(x, t) <= σ` for growing `ω`.
fn phase_one(problem: &TimeVaryingProblem, x0: &Vector, t: f64, config: &OracleConfig) -> Result<(Vector, usize)> {
    let n = problem.dim();
    let p = problem.num_inequalities();
    let f0 = problem.inequality_values(x0, t)?;
    if p == 0 {
        return Ok((x0.clone(), 0));
    }
    let fmax = f0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w = Vector::zeros(n + 1);
    w.rows_mut(0, n).copy_from(x0);
    w[n] = fmax + 1.0;
    let empty_a = Matrix::zeros(0, n + 1);
    let empty_b = Vector::zeros(0);
    let mut total = 0;
    let mut weight = 1.0;
    while weight <= 1e12 {
        let eval = |wv: &Vector| -> Result<Local> {
            let x = wv.rows(0, n).clone_owned();
            let sigma = wv[n];
            let bundle = problem.bundle(&x, t)?;
            let dx = &x - x0;
            let mut f = weight * sigma + 0.5 * dx.norm_squared();
            let mut g = Vector::zeros(n + 1);
            let mut h = Matrix::zeros(n + 1, n + 1);
            g.rows_mut(0, n).copy_from(&dx);
            g[n] = weight;
            h.view_mut((0, 0), (n, n)).fill_with_identity();
            for i in 0..p {
                let psi = sigma - bundle.f_ineq[i];
                if !(psi > 0.0) {
                    return Ok(None);
                }
                f -= psi.ln();
                // gradient of -log(σ - fi) over (x, σ) is (∇fi, -1) / ψ
                let mut d = Vector::zeros(n + 1);
                d.rows_mut(0, n).copy_from(&bundle.grads_ineq[i]);
                d[n] = -1.0;
                g.axpy(1.0 / psi, &d, 1.0);
                h.ger(1.0 / (psi * psi), &d, &d, 1.0);
                if let Some(hi) = &bundle.hess_ineq[i] {
                    let mut block = h.view_mut((0, 0), (n, n));
                    block += hi / psi;
                }
            }
            Ok(Some((f, g, h)))
        };
        let out = newton_center(
            w,
            Vector::zeros(0),
            eval,
            &empty_a,
            &empty_b,
            config.max_newton_iters,
            |_| false,
        )?;
        total += out.steps;
        w = out.w;
        let x = w.rows(0, n).clone_owned();
        if problem.max_inequality(&x, t)? < 0.0 {
            return Ok((x, total));
        }
        weight *= 10.0;
    }
    Err(Error::OracleFailure(format!(
        "no strictly feasible point found at t = {t}"
    )))
}

/// KKT residual `max(‖∇f0 + Σλ∇fi + Aᵀν‖, max(fi, 0), max|λi fi|, ‖Ax - b‖)`.
pub fn kkt_residual(problem: &TimeVaryingProblem, t: f64, x: &Vector, lambda: &Vector, nu: &Vector) -> Result<f64> {
    let bundle = problem.bundle(x, t)?;
    let mut stat = bundle.grad_f0.clone();
    for (i, g) in bundle.grads_ineq.iter().enumerate() {
        stat.axpy(lambda[i], g, 1.0);
    }
    stat += bundle.eq_a.tr_mul(nu);
    let mut r = stat.norm();
    for i in 0..bundle.num_inequalities() {
        r = r
            .max(bundle.f_ineq[i].max(0.0))
            .max((lambda[i] * bundle.f_ineq[i]).abs());
        if lambda[i] < 0.0 {
            r = r.max(-lambda[i]);
        }
    }
    if bundle.num_equalities() > 0 {
        r = r.max((&bundle.eq_a * x - &bundle.eq_b).norm());
    }
    Ok(r)
}

/// Newton on the KKT system with the constraints in `active` held as
/// equalities. Returns `None` if the active set turns out to be wrong.
fn polish(
    problem: &TimeVaryingProblem,
    t: f64,
    x0: &Vector,
    nu0: &Vector,
    active: &[usize],
    tol: f64,
) -> Result<Option<(Vector, Vector, Vector)>> {
    let n = problem.dim();
    let p = problem.num_inequalities();
    let qe = problem.num_equalities();
    let k = active.len() + qe;
    if k > n {
        return Ok(None);
    }
    let mut x = x0.clone();
    let mut lam_a = Vector::zeros(active.len());
    let mut nu = nu0.clone();
    for _ in 0..30 {
        let bundle = problem.bundle(&x, t)?;
        let mut lag_hess = bundle.hess_f0.clone();
        let mut jac = Matrix::zeros(k, n);
        let mut cons = Vector::zeros(k);
        for (j, &i) in active.iter().enumerate() {
            jac.set_row(j, &bundle.grads_ineq[i].transpose());
            cons[j] = bundle.f_ineq[i];
        }
        if qe > 0 {
            jac.view_mut((active.len(), 0), (qe, n)).copy_from(&bundle.eq_a);
            cons.rows_mut(active.len(), qe)
                .copy_from(&(&bundle.eq_a * &x - &bundle.eq_b));
        }
        // Lagrangian Hessian with the current multipliers
        for (j, &i) in active.iter().enumerate() {
            if let Some(hi) = &bundle.hess_ineq[i] {
                lag_hess += hi * lam_a[j];
            }
        }
        let mut rhs = Vector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(&lag_hess * &x - &bundle.grad_f0));
        rhs.rows_mut(n, k).copy_from(&(jac.clone() * &x - cons));
        let Some(sol) = assemble_kkt(&lag_hess, &jac).lu().solve(&rhs) else {
            return Ok(None);
        };
        let x_new = sol.rows(0, n).clone_owned();
        let mult = sol.rows(n, k).clone_owned();
        let moved = (&x_new - &x).norm();
        x = x_new;
        lam_a = mult.rows(0, active.len()).clone_owned();
        nu = mult.rows(active.len(), qe).clone_owned();
        if moved <= 1e-15 * (1.0 + x.norm()) {
            break;
        }
    }
    if lam_a.iter().any(|l| *l < 0.0) {
        return Ok(None);
    }
    let mut lambda = Vector::zeros(p);
    for (j, &i) in active.iter().enumerate() {
        lambda[i] = lam_a[j];
    }
    let f = problem.inequality_values(&x, t)?;
    let inactive_ok = (0..p).filter(|i| !active.contains(i)).all(|i| f[i] < 0.0);
    if !inactive_ok || kkt_residual(problem, t, &x, &lambda, &nu)? > tol {
        return Ok(None);
    }
    Ok(Some((x, lambda, nu)))
}

/// Solves the problem frozen at time `t` to KKT residual `config.tol`.
pub fn solve_static(problem: &TimeVaryingProblem, t: f64, config: &OracleConfig) -> Result<StaticSolution> {
    config.validate()?;
    let n = problem.dim();
    let p = problem.num_inequalities();
    let x0 = config.start.clone().unwrap_or_else(|| Vector::zeros(n));
    if x0.len() != n {
        return Err(Error::InvalidInput(format!(
            "oracle start has dimension {}, expected {n}",
            x0.len()
        )));
    }
    let (mut x, mut steps) = phase_one(problem, &x0, t, config)?;
    let (a, b) = match problem.equality() {
        Some(e) => (e.matrix(t), e.rhs(t)),
        None => (Matrix::zeros(0, n), Vector::zeros(0)),
    };
    let mut nu = Vector::zeros(a.nrows());
    let mut c = config.c0;
    loop {
        let eval = |xv: &Vector| -> Result<Local> {
            let bundle = problem.bundle(xv, t)?;
            match eval_phi(&bundle, c, 0.0) {
                Ok(phi) => Ok(Some((phi.phi, phi.grad, phi.hess))),
                Err(Error::DomainViolation { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        };
        let out = newton_center(x, nu, eval, &a, &b, config.max_newton_iters, |_| false)?;
        steps += out.steps;
        x = out.w;
        nu = out.nu;
        if p == 0 || p as f64 / c <= config.tol {
            break;
        }
        c *= config.factor;
    }

    let psi = problem.inequality_values(&x, t)?.map(|f| -f);
    let mut lambda = estimate_duals(&psi, c)?;
    let mut residual = kkt_residual(problem, t, &x, &lambda, &nu)?;
    if residual > config.tol {
        let active: Vec<usize> = (0..p).filter(|&i| lambda[i] >= psi[i]).collect();
        if let Some((xp, lp, np)) = polish(problem, t, &x, &nu, &active, config.tol)? {
            x = xp;
            lambda = lp;
            nu = np;
            residual = kkt_residual(problem, t, &x, &lambda, &nu)?;
        }
    }
    if residual > config.tol {
        return Err(Error::OracleFailure(format!(
            "kkt residual {residual:e} above tolerance {:e} at t = {t}",
            config.tol
        )));
    }
    Ok(StaticSolution {
        x,
        lambda,
        nu,
        c,
        kkt_residual: residual,
        newton_steps: steps,
    })
}

/// Minimizer of `½xᵀHx + gᵀx` subject to `Ax = b`, with its multiplier.
pub fn solve_equality_qp(h: &Matrix, g: &Vector, a: &Matrix, b: &Vector) -> Result<(Vector, Vector)> {
    let n = h.nrows();
    let q = a.nrows();
    if g.len() != n || b.len() != q {
        return Err(Error::InvalidInput("equality QP dimensions do not match".into()));
    }
    let mut rhs = Vector::zeros(n + q);
    rhs.rows_mut(0, n).copy_from(&(-g));
    rhs.rows_mut(n, q).copy_from(b);
    let sol = solve_kkt(h, a, &rhs)?;
    Ok((sol.rows(0, n).clone_owned(), sol.rows(n, q).clone_owned()))
}

/// Tracking error of one sample; `None` when the oracle failed there.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingPoint {
    pub t: f64,
    pub error: Option<f64>,
}

/// `‖x(t_k) - x*(t_k)‖` at every `stride`-th sample, solved in parallel.
pub fn tracking_error(
    traj: &Trajectory,
    problem: &TimeVaryingProblem,
    stride: usize,
    config: &OracleConfig,
) -> Result<Vec<TrackingPoint>> {
    if traj.is_empty() {
        return Err(Error::InvalidInput("trajectory is empty".into()));
    }
    if stride == 0 {
        return Err(Error::InvalidInput("sample stride must be positive".into()));
    }
    let picked: Vec<_> = traj.samples.iter().step_by(stride).collect();
    Ok(picked
        .par_iter()
        .map(|s| {
            let error = match solve_static(problem, s.t, config) {
                Ok(sol) => Some((&s.x - sol.x).norm()),
                Err(e) => {
                    debug!("oracle failed at t = {}: {e}", s.t);
                    None
                }
            };
            TrackingPoint { t: s.t, error }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{FnField, LinearConstraint, LinearEquality, TimePartials};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    /// ½(x1 + sin t)² + (3/2)(x2 + cos t)² subject to x2 - x1 - cos t ≤ 0.
    fn tvqp() -> TimeVaryingProblem {
        let f0 = FnField::new(
            |x: &Vector, t: f64| 0.5 * (x[0] + t.sin()).powi(2) + 1.5 * (x[1] + t.cos()).powi(2),
            |x: &Vector, t: f64| v(&[x[0] + t.sin(), 3.0 * (x[1] + t.cos())]),
        )
        .with_hessian(|_, _| Matrix::from_diagonal(&v(&[1.0, 3.0])));
        let f1 = FnField::new(
            |x: &Vector, t: f64| x[1] - x[0] - t.cos(),
            |_: &Vector, _| v(&[-1.0, 1.0]),
        )
        .with_time_partials(|_, t| TimePartials {
            value: t.sin(),
            grad: Vector::zeros(2),
        });
        TimeVaryingProblem::new(2, f0, 1.0).unwrap().with_inequality(f1)
    }

    #[test]
    fn tvqp_inactive_at_zero() {
        let sol = solve_static(&tvqp(), 0.0, &OracleConfig::default()).unwrap();
        assert_abs_diff_eq!(sol.x, v(&[0.0, -1.0]), epsilon = 1e-8);
        assert!(sol.lambda[0].abs() < 1e-8);
        assert!(sol.kkt_residual <= 1e-10);
    }

    #[test]
    fn tvqp_active_at_half_pi() {
        let sol = solve_static(&tvqp(), FRAC_PI_2, &OracleConfig::default()).unwrap();
        assert_abs_diff_eq!(sol.x, v(&[-0.25, -0.25]), epsilon = 1e-8);
        assert_abs_diff_eq!(sol.lambda[0], 0.75, epsilon = 1e-7);
    }

    #[test]
    fn matches_equality_qp_when_active() {
        // active constraint x2 - x1 = cos t gives an equality QP
        for t in [1.2, FRAC_PI_2, 2.5] {
            let sol = solve_static(&tvqp(), t, &OracleConfig::default()).unwrap();
            let h = Matrix::from_diagonal(&v(&[1.0, 3.0]));
            let g = v(&[t.sin(), 3.0 * t.cos()]);
            let a = Matrix::from_row_slice(1, 2, &[-1.0, 1.0]);
            let (x, nu) = solve_equality_qp(&h, &g, &a, &v(&[t.cos()])).unwrap();
            assert!(nu[0] > 0.0);
            assert!((sol.x - x).norm() <= 1e-7);
        }
    }

    #[test]
    fn equality_qp_examples() {
        let h = Matrix::identity(2, 2);
        let a = Matrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let (x, nu) = solve_equality_qp(&h, &Vector::zeros(2), &a, &v(&[1.0])).unwrap();
        assert_abs_diff_eq!(x, v(&[0.5, 0.5]), epsilon = 1e-15);
        assert_abs_diff_eq!(nu[0], -0.5, epsilon = 1e-15);
        let (x, nu) = solve_equality_qp(&h, &Vector::zeros(2), &a, &v(&[0.0])).unwrap();
        assert_eq!(x, Vector::zeros(2));
        assert_eq!(nu, Vector::zeros(1));
    }

    #[test]
    fn static_with_equality_and_infeasible_start() {
        let f0 = FnField::new(|x: &Vector, _| 0.5 * x.norm_squared(), |x: &Vector, _| x.clone())
            .with_hessian(|_, _| Matrix::identity(2, 2));
        let eq = LinearEquality::new(Matrix::from_row_slice(1, 2, &[1.0, 1.0]), v(&[2.0]));
        let p = TimeVaryingProblem::new(2, f0, 1.0)
            .unwrap()
            .with_equality(eq)
            .unwrap()
            .with_inequality(LinearConstraint::new(v(&[1.0, 0.0]), 0.5));
        let cfg = OracleConfig {
            start: Some(v(&[3.0, 3.0])),
            ..OracleConfig::default()
        };
        let sol = solve_static(&p, 0.0, &cfg).unwrap();
        assert_abs_diff_eq!(sol.x, v(&[0.5, 1.5]), epsilon = 1e-8);
        assert_abs_diff_eq!(sol.lambda[0], 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(sol.nu[0], -1.5, epsilon = 1e-7);
    }

    #[test]
    fn infeasible_problem_fails() {
        let f0 = FnField::new(|x: &Vector, _| 0.5 * x.norm_squared(), |x: &Vector, _| x.clone())
            .with_hessian(|_, _| Matrix::identity(1, 1));
        let p = TimeVaryingProblem::new(1, f0, 1.0)
            .unwrap()
            .with_inequality(LinearConstraint::new(v(&[1.0]), -1.0))
            .with_inequality(LinearConstraint::new(v(&[-1.0]), -1.0));
        assert!(matches!(
            solve_static(&p, 0.0, &OracleConfig::default()),
            Err(Error::OracleFailure(_))
        ));
    }

    #[test]
    fn complementary_slackness() {
        let p = tvqp();
        for t in [0.3, 1.0, 2.0, 4.0] {
            let sol = solve_static(&p, t, &OracleConfig::default()).unwrap();
            let f = p.inequality_values(&sol.x, t).unwrap();
            assert!((sol.lambda[0] * f[0]).abs() <= 10.0 / sol.c);
        }
    }
}
