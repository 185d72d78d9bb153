//! ℓ1-regularized least squares as a smooth inequality-constrained program.
//!
//! `min ‖Ax - b‖² + λ‖x‖₁` is lifted to variables `z = (x, u)` with
//! objective `‖Ax - b‖² + λ Σ uᵢ` and constraints `±xᵢ - uᵢ <= 0`. A ridge
//! `RIDGE · ‖z‖²` makes the objective strongly convex.
//!
//! Two barrier methods are compared on the lifted program, both starting from
//! `x = 0, u = 1` and both stopping on the duality-gap surrogate:
//! - SNIPM: Newton centering with backtracking for `c_k = c0 · factor^k`.
//! - ANIPM: Euler steps of the barrier dynamics with `c(t) = c0 e^t`, so the
//!   prediction term follows the central path as the weight grows.

use std::ops::ControlFlow;
use std::sync::Arc;

use log::debug;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::barrier::{eval_phi, phi_value, BarrierSchedules};
use crate::dynamics::GainSettings;
use crate::error::{Error, Result};
use crate::integrator::{InitialState, Integrator, IntegratorConfig, Mode};
use crate::linalg::factor_spd_regularized;
use crate::problem::{FnField, LinearConstraint, Matrix, TimeVaryingProblem, Vector};

/// Ridge weight on `‖(x, u)‖²`.
pub const RIDGE: f64 = 1e-8;

/// Name of the generator behind [`build_l1ls`], recorded in reports.
pub const RNG_NAME: &str = "ChaCha8";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct L1lsParams {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub noise_sigma: f64,
    pub lambda: f64,
}

impl L1lsParams {
    pub fn desk() -> Self {
        Self {
            m: 64,
            n: 256,
            k: 5,
            noise_sigma: 0.1,
            lambda: 2.0,
        }
    }

    pub fn paper() -> Self {
        Self {
            m: 256,
            n: 1024,
            k: 10,
            noise_sigma: 0.1,
            lambda: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct L1lsInstance {
    pub a: Matrix,
    pub b: Vector,
    pub lambda: f64,
    /// Support of the generating sparse vector, for reporting only.
    pub support: Vec<usize>,
    pub x_true: Vector,
    pub seed: u64,
}

impl L1lsInstance {
    /// Instance from explicit data, without ground truth.
    pub fn from_parts(a: Matrix, b: Vector, lambda: f64) -> Result<Self> {
        if a.nrows() != b.len() || a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::InvalidInput(format!(
                "A is {}x{} but b has length {}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
        }
        let n = a.ncols();
        Ok(Self {
            a,
            b,
            lambda,
            support: Vec::new(),
            x_true: Vector::zeros(n),
            seed: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    /// `‖2Aᵀb‖∞`; for `λ` at or above it the optimum is `x = 0`.
    pub fn lambda_max(&self) -> f64 {
        (self.a.tr_mul(&self.b) * 2.0).amax()
    }

    /// The lifted program over `z = (x, u)`.
    pub fn problem(&self) -> TimeVaryingProblem {
        let n = self.n();
        let a = Arc::new(self.a.clone());
        let b = Arc::new(self.b.clone());
        let ata2 = Arc::new(self.a.tr_mul(&self.a) * 2.0);
        let atb2 = Arc::new(self.a.tr_mul(&self.b) * 2.0);
        let lambda = self.lambda;

        let (av, bv) = (a.clone(), b.clone());
        let value = move |z: &Vector, _t: f64| {
            let x = z.rows(0, n);
            let r = &*av * x - &*bv;
            r.norm_squared() + lambda * z.rows(n, n).sum() + RIDGE * z.norm_squared()
        };
        let (ag, bg) = (ata2.clone(), atb2.clone());
        let gradient = move |z: &Vector, _t: f64| {
            let mut g = z * (2.0 * RIDGE);
            let gx = &*ag * z.rows(0, n) - &*bg;
            let mut head = g.rows_mut(0, n);
            head += &gx;
            g.rows_mut(n, n).add_scalar_mut(lambda);
            g
        };
        let hessian = move |_: &Vector, _t: f64| {
            let mut h = Matrix::identity(2 * n, 2 * n) * (2.0 * RIDGE);
            let mut block = h.view_mut((0, 0), (n, n));
            block += &*ata2;
            h
        };
        let objective = FnField::new(value, gradient).with_hessian(hessian);

        let mut problem =
            TimeVaryingProblem::new(2 * n, objective, 2.0 * RIDGE).expect("positive dimension and modulus");
        for i in 0..n {
            for sign in [1.0, -1.0] {
                let mut normal = Vector::zeros(2 * n);
                normal[i] = sign;
                normal[n + i] = -1.0;
                problem = problem.with_inequality(LinearConstraint::new(normal, 0.0));
            }
        }
        problem
    }
}

/// Random instance: standard-normal `A`, a `k`-sparse `±1` ground truth and
/// `b = A x_true + σ·N(0, I)`, all drawn from one seeded generator.
pub fn build_l1ls(
    seed: u64,
    m: usize,
    n: usize,
    k: usize,
    noise_sigma: f64,
    lambda: f64,
) -> Result<(L1lsInstance, TimeVaryingProblem)> {
    if m == 0 || n == 0 || k == 0 || k > n {
        return Err(Error::InvalidInput(format!("invalid sizes m={m} n={n} k={k}")));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "noise sigma must be >= 0, got {noise_sigma}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries: Vec<f64> = (0..m * n).map(|_| rng.sample(StandardNormal)).collect();
    let a = Matrix::from_row_slice(m, n, &entries);
    let mut support = sample(&mut rng, n, k).into_vec();
    support.sort_unstable();
    let mut x_true = Vector::zeros(n);
    for &i in &support {
        x_true[i] = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    }
    let noise = Vector::from_fn(m, |_, _| noise_sigma * rng.sample::<f64, _>(StandardNormal));
    let b = &a * &x_true + noise;

    let mut instance = L1lsInstance::from_parts(a, b, lambda)?;
    instance.support = support;
    instance.x_true = x_true;
    instance.seed = seed;
    let problem = instance.problem();
    Ok((instance, problem))
}

/// Upper bound `η / g(ν)` on the relative suboptimality of `x`.
///
/// `ν = 2(Ax - b)` is scaled so that `‖Aᵀν‖∞ <= λ`, which makes it dual
/// feasible with `g(ν) = -¼νᵀν - νᵀb`. Returns `+∞` when `g(ν) <= 0`.
pub fn relative_gap(instance: &L1lsInstance, x: &Vector) -> f64 {
    let r = &instance.a * x - &instance.b;
    let at_nu = instance.a.tr_mul(&r) * 2.0;
    let norm = at_nu.amax();
    let scale = if norm > 0.0 {
        (instance.lambda / norm).min(1.0)
    } else {
        1.0
    };
    let nu = &r * (2.0 * scale);
    let dual = -0.25 * nu.norm_squared() - nu.dot(&instance.b);
    if !(dual > 0.0) {
        return f64::INFINITY;
    }
    let primal = r.norm_squared() + instance.lambda * x.lp_norm(1);
    (primal - dual) / dual
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum IpmMethod {
    Snipm,
    Anipm,
}

impl IpmMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            IpmMethod::Snipm => "snipm",
            IpmMethod::Anipm => "anipm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IpmConfig {
    pub gap_tol: f64,
    /// Cap on Newton iterations (linear solves) for either method.
    pub max_iters: usize,
    pub c0: f64,
    /// SNIPM weight ratio between consecutive centerings.
    pub factor: f64,
    /// SNIPM centering stops once `decrement² / 2` falls below this.
    pub centering_tol: f64,
    /// ANIPM step size.
    pub tau: f64,
    /// ANIPM correction gain.
    pub alpha: f64,
    /// ANIPM weight growth rate.
    pub gamma_c: f64,
}

impl Default for IpmConfig {
    fn default() -> Self {
        Self {
            gap_tol: 1e-4,
            max_iters: 500,
            c0: 10.0,
            factor: 5.0,
            centering_tol: 1e-6,
            tau: 0.5,
            alpha: 2.0,
            gamma_c: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub method: IpmMethod,
    /// Newton iterations (one linear solve each) until the gap test passed.
    pub iterations: usize,
    pub converged: bool,
    pub final_gap: f64,
    /// Gap at the start point followed by the gap after every iteration.
    pub gap_trace: Vec<f64>,
    /// SNIPM only: gap at the end of every centering.
    pub stage_gaps: Vec<f64>,
    #[serde(skip)]
    pub z: Vector,
}

/// `x = 0, u = 1`: strictly inside every constraint.
pub fn initial_point(n: usize) -> Vector {
    let mut z = Vector::zeros(2 * n);
    z.rows_mut(n, n).fill(1.0);
    z
}

pub fn run_ipm_comparison(instance: &L1lsInstance, method: IpmMethod, config: &IpmConfig) -> Result<ConvergenceReport> {
    if !(config.gap_tol > 0.0 && config.c0 > 0.0 && config.factor > 1.0 && config.max_iters > 0) {
        return Err(Error::InvalidInput(format!("invalid ipm config {config:?}")));
    }
    let problem = instance.problem();
    match method {
        IpmMethod::Snipm => snipm(instance, &problem, config),
        IpmMethod::Anipm => anipm(instance, &problem, config),
    }
}

fn snipm(instance: &L1lsInstance, problem: &TimeVaryingProblem, config: &IpmConfig) -> Result<ConvergenceReport> {
    let n = instance.n();
    let mut z = initial_point(n);
    let gap_of = |z: &Vector| relative_gap(instance, &z.rows(0, n).clone_owned());
    let barrier_at = |z: &Vector, c: f64| -> Result<Option<f64>> {
        let f = problem.inequality_values(z, 0.0)?;
        Ok(phi_value(problem.objective().value(z, 0.0), &f, c, 0.0))
    };
    let mut gap = gap_of(&z);
    let mut trace = vec![gap];
    let mut stage_gaps = Vec::new();
    let mut iterations = 0;
    let mut c = config.c0;
    while gap > config.gap_tol && iterations < config.max_iters {
        let bundle = problem.bundle(&z, 0.0)?;
        let phi = eval_phi(&bundle, c, 0.0)?;
        let dz = -factor_spd_regularized(&phi.hess)?.solve(&phi.grad);
        let slope = phi.grad.dot(&dz);
        if -slope / 2.0 <= config.centering_tol {
            stage_gaps.push(gap);
            c *= config.factor;
            continue;
        }
        let mut step = 1.0;
        let mut next = None;
        while step > 1e-12 {
            let trial = &z + &dz * step;
            if let Some(v) = barrier_at(&trial, c)? {
                if v <= phi.phi + 0.01 * step * slope {
                    next = Some(trial);
                    break;
                }
            }
            step *= 0.5;
        }
        iterations += 1;
        match next {
            Some(trial) => z = trial,
            None => {
                debug!("snipm: line search stalled at c = {c:e}; advancing the weight");
                stage_gaps.push(gap);
                c *= config.factor;
            }
        }
        gap = gap_of(&z);
        trace.push(gap);
    }
    Ok(ConvergenceReport {
        method: IpmMethod::Snipm,
        iterations,
        converged: gap <= config.gap_tol,
        final_gap: gap,
        gap_trace: trace,
        stage_gaps,
        z,
    })
}

fn anipm(instance: &L1lsInstance, problem: &TimeVaryingProblem, config: &IpmConfig) -> Result<ConvergenceReport> {
    let n = instance.n();
    let schedules = BarrierSchedules::new(config.c0, config.gamma_c, 0.0, 0.0)?;
    let mut cfg = IntegratorConfig::new(config.tau, config.tau * config.max_iters as f64);
    cfg.line_search = true;
    let mut integrator = Integrator::new(problem, Mode::Barrier, cfg)
        .gains(GainSettings::with_alpha(config.alpha))
        .schedules(schedules);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut gap = f64::INFINITY;
    let traj = integrator
        .run_with(&InitialState::new(initial_point(n)), |sample| {
            gap = relative_gap(instance, &sample.x.rows(0, n).clone_owned());
            trace.push(gap);
            iterations = sample.solves;
            if gap <= config.gap_tol {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })
        .map_err(Error::from)?;
    let z = traj.last().map(|s| s.x.clone()).unwrap_or_else(|| initial_point(n));
    Ok(ConvergenceReport {
        method: IpmMethod::Anipm,
        iterations,
        converged: gap <= config.gap_tol,
        final_gap: gap,
        gap_trace: trace,
        stage_gaps: Vec::new(),
        z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar(lambda: f64) -> L1lsInstance {
        L1lsInstance::from_parts(Matrix::from_element(1, 1, 1.0), Vector::from_element(1, 1.0), lambda).unwrap()
    }

    #[test]
    fn gap_examples() {
        let zero = Vector::zeros(1);
        assert_abs_diff_eq!(relative_gap(&scalar(2.0), &zero), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(relative_gap(&scalar(1.0), &zero), 1.0 / 3.0, epsilon = 1e-15);
        // optimum of (x - 1)² + |x| is x = 1/2
        assert_abs_diff_eq!(
            relative_gap(&scalar(1.0), &Vector::from_element(1, 0.5)),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn nonpositive_dual_is_flagged() {
        let inst =
            L1lsInstance::from_parts(Matrix::from_element(1, 1, 1.0), Vector::from_element(1, 1.0), 1.0).unwrap();
        assert_eq!(relative_gap(&inst, &Vector::from_element(1, 3.0)), f64::INFINITY);
    }

    #[test]
    fn generation_is_seeded() {
        let (a, _) = build_l1ls(3, 8, 16, 2, 0.1, 2.0).unwrap();
        let (b, _) = build_l1ls(3, 8, 16, 2, 0.1, 2.0).unwrap();
        let (c, _) = build_l1ls(4, 8, 16, 2, 0.1, 2.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.a, c.a);
        assert_eq!(a.support.len(), 2);
        assert_eq!(a.x_true.iter().filter(|v| v.abs() == 1.0).count(), 2);
        assert!(build_l1ls(3, 8, 16, 17, 0.1, 2.0).is_err());
    }

    #[test]
    fn lifted_problem_shape() {
        let (inst, p) = build_l1ls(1, 4, 6, 2, 0.1, 2.0).unwrap();
        assert_eq!(p.dim(), 12);
        assert_eq!(p.num_inequalities(), 12);
        let z = initial_point(6);
        assert_eq!(p.max_inequality(&z, 0.0).unwrap(), -1.0);
        let b = p.bundle(&z, 0.0).unwrap();
        let expected = inst.b.norm_squared() + 2.0 * 6.0 + RIDGE * 6.0;
        assert_abs_diff_eq!(b.f0, expected, epsilon = 1e-12);
    }

    #[test]
    fn both_methods_converge_on_small_instance() {
        let (inst, _) = build_l1ls(11, 16, 32, 3, 0.1, 2.0).unwrap();
        let cfg = IpmConfig::default();
        let s = run_ipm_comparison(&inst, IpmMethod::Snipm, &cfg).unwrap();
        let a = run_ipm_comparison(&inst, IpmMethod::Anipm, &cfg).unwrap();
        assert!(s.converged && a.converged, "{} {}", s.final_gap, a.final_gap);
        assert!(s.final_gap <= 1e-4 && a.final_gap <= 1e-4);
        for w in s.stage_gaps.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", s.stage_gaps);
        }
    }

    #[test]
    fn large_lambda_gives_zero() {
        let (mut inst, _) = build_l1ls(2, 16, 32, 3, 0.1, 2.0).unwrap();
        inst.lambda = 1.01 * inst.lambda_max();
        assert_abs_diff_eq!(relative_gap(&inst, &Vector::zeros(32)), 0.0, epsilon = 1e-12);
        let cfg = IpmConfig::default();
        for m in [IpmMethod::Snipm, IpmMethod::Anipm] {
            let r = run_ipm_comparison(&inst, m, &cfg).unwrap();
            assert!(r.converged);
            assert!(r.z.rows(0, 32).amax() < 1e-2);
        }
    }
}
