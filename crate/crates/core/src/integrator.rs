//! Fixed-step integration of the prediction-correction dynamics.
//!
//! Each step evaluates the schedules, the derivative bundle and (in barrier
//! modes) the augmented objective, computes the vector field, advances the
//! state and then pulls the candidate back toward the previous iterate until
//! every residual `ψi` is strictly positive again.

use std::fmt;
use std::ops::ControlFlow;
use std::str::FromStr;

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::barrier::{auto_slack, estimate_duals, eval_phi, BarrierSchedules, PhiEvaluation, ScheduleValues};
use crate::dynamics::{
    barrier_field, barrier_prediction, combined_field, combined_gradient, equality_field, lagrangian_gradient,
    robust_field, second_order_field, unconstrained_field, FilterState, GainSettings, KktState,
};
use crate::error::{Error, Result};
use crate::linalg::factor_spd_regularized;
use crate::problem::{DerivativeBundle, TimeVaryingProblem, Vector};

/// Which vector field drives the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Unconstrained,
    Equality,
    Barrier,
    Combined,
    SecondOrder,
    Robust,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Unconstrained,
        Mode::Equality,
        Mode::Barrier,
        Mode::Combined,
        Mode::SecondOrder,
        Mode::Robust,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Unconstrained => "unconstrained",
            Mode::Equality => "equality",
            Mode::Barrier => "barrier",
            Mode::Combined => "combined",
            Mode::SecondOrder => "second_order",
            Mode::Robust => "robust",
        }
    }

    pub fn uses_barrier(self) -> bool {
        matches!(self, Mode::Barrier | Mode::Combined | Mode::SecondOrder | Mode::Robust)
    }

    pub fn uses_dual(self) -> bool {
        matches!(self, Mode::Equality | Mode::Combined)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown mode '{s}'")))
    }
}

/// Time-stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Euler,
    /// Classical four-stage Runge-Kutta, for accuracy studies.
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub tau: f64,
    pub t_end: f64,
    pub guard_shrink: f64,
    pub max_backtracks: usize,
    pub line_search: bool,
    pub armijo_c: f64,
    pub scheme: Scheme,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            t_end: 1.0,
            guard_shrink: 0.5,
            max_backtracks: 40,
            line_search: false,
            armijo_c: 1e-4,
            scheme: Scheme::Euler,
        }
    }
}

impl IntegratorConfig {
    pub fn new(tau: f64, t_end: f64) -> Self {
        Self {
            tau,
            t_end,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.t_end.is_finite() && self.t_end >= self.tau) {
            return bad(format!(
                "t_end = {} must be finite and >= tau = {}",
                self.t_end, self.tau
            ));
        }
        if !(self.guard_shrink > 0.0 && self.guard_shrink < 1.0) {
            return bad(format!("guard_shrink must lie in (0, 1), got {}", self.guard_shrink));
        }
        if self.max_backtracks == 0 {
            return bad("max_backtracks must be positive".into());
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad(format!("armijo_c must lie in (0, 1), got {}", self.armijo_c));
        }
        Ok(())
    }

    /// Number of steps `N`, with sample times `t_k = k τ`.
    pub fn steps(&self) -> usize {
        (self.t_end / self.tau).round() as usize
    }
}

/// Source of errors injected into the prediction term of the robust field.
pub trait PredictionNoise {
    fn sample(&mut self, t: f64, dim: usize) -> Vector;
}

/// Noise of norm exactly `eta` in a uniformly random direction.
#[derive(Debug, Clone)]
pub struct BoundedNoise {
    eta: f64,
    rng: ChaCha8Rng,
}

impl BoundedNoise {
    pub fn new(eta: f64, seed: u64) -> Self {
        Self {
            eta,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl PredictionNoise for BoundedNoise {
    fn sample(&mut self, _t: f64, dim: usize) -> Vector {
        loop {
            let v = Vector::from_fn(dim, |_, _| self.rng.sample::<f64, _>(StandardNormal));
            let norm = v.norm();
            if norm > 1e-12 {
                return v * (self.eta / norm);
            }
        }
    }
}

/// Constant additive error, mainly for tests.
#[derive(Debug, Clone)]
pub struct ConstantNoise(pub Vector);

impl PredictionNoise for ConstantNoise {
    fn sample(&mut self, _t: f64, _dim: usize) -> Vector {
        self.0.clone()
    }
}

/// Initial condition. Missing `ν` and `y` start at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub x: Vector,
    pub nu: Option<Vector>,
    pub y: Option<Vector>,
}

impl InitialState {
    pub fn new(x: Vector) -> Self {
        Self { x, nu: None, y: None }
    }

    pub fn with_nu(mut self, nu: Vector) -> Self {
        self.nu = Some(nu);
        self
    }

    pub fn with_y(mut self, y: Vector) -> Self {
        self.y = Some(y);
        self
    }
}

/// Corrections applied while producing one sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepEvents {
    pub guard_shrinks: usize,
    pub line_search_backtracks: usize,
}

/// One recorded point of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Vector,
    pub nu: Option<Vector>,
    pub y: Option<Vector>,
    /// Residuals `s - fi`; empty outside barrier modes.
    pub psi: Vector,
    pub lambdas: Vector,
    pub c: Option<f64>,
    pub s: Option<f64>,
    /// Norm of the optimality residual the mode drives to zero.
    pub grad_norm: f64,
    pub eq_residual: f64,
    pub events: StepEvents,
    /// Cumulative number of Hessian or KKT factorizations.
    pub solves: usize,
}

impl Sample {
    pub fn min_psi(&self) -> f64 {
        self.psi.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub mode: Mode,
    pub tau: f64,
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }
}

/// An integration that stopped on an error, with the samples recorded so far.
#[derive(Debug, Clone, PartialEq)]
pub struct Aborted {
    pub trajectory: Trajectory,
    pub error: Error,
}

impl fmt::Display for Aborted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} samples)", self.error, self.trajectory.len())
    }
}

impl std::error::Error for Aborted {}

impl From<Aborted> for Error {
    fn from(a: Aborted) -> Self {
        a.error
    }
}

/// `state + τ · field`.
pub fn euler_step(field: &Vector, state: &Vector, tau: f64) -> Vector {
    state + field * tau
}

/// Result of the feasibility guard.
#[derive(Debug, Clone, PartialEq)]
pub struct GuardOutcome {
    pub state: Vector,
    pub shrinks: usize,
}

fn strictly_interior(problem: &TimeVaryingProblem, x: &Vector, s: f64, t: f64) -> bool {
    match problem.inequality_values(x, t) {
        Ok(f) => f.iter().all(|fi| s - fi > 0.0),
        Err(_) => false,
    }
}

/// Shrinks `candidate` toward `prev` until `s(t_next) - fi(x, t_next) > 0`.
///
/// Only the first `problem.dim()` entries of the states are checked; the
/// shrink applies to the whole vector.
pub fn feasibility_guard(
    prev: &Vector,
    candidate: &Vector,
    problem: &TimeVaryingProblem,
    schedules: &BarrierSchedules,
    t_next: f64,
    config: &IntegratorConfig,
) -> Result<GuardOutcome> {
    let n = problem.dim();
    let s = schedules.eval(t_next).s;
    let step = candidate - prev;
    let mut state = candidate.clone();
    let mut factor = 1.0;
    for shrinks in 0..=config.max_backtracks {
        let x = state.rows(0, n).clone_owned();
        if strictly_interior(problem, &x, s, t_next) {
            if shrinks > 0 {
                debug!("guard: {shrinks} shrinks at t = {t_next}");
            }
            return Ok(GuardOutcome { state, shrinks });
        }
        factor *= config.guard_shrink;
        state = prev + &step * factor;
    }
    Err(Error::StepFailure {
        t: t_next,
        backtracks: config.max_backtracks,
    })
}

/// Barrier schedules whose initial slack makes `x0` strictly interior.
pub fn schedules_with_auto_slack(
    problem: &TimeVaryingProblem,
    x0: &Vector,
    c0: f64,
    gamma_c: f64,
    gamma_s: f64,
) -> Result<BarrierSchedules> {
    let f = problem.inequality_values(x0, 0.0)?;
    BarrierSchedules::new(c0, gamma_c, auto_slack(&f), gamma_s)
}

struct Eval {
    bundle: DerivativeBundle,
    phi: Option<PhiEvaluation>,
    sched: Option<ScheduleValues>,
    residual: Vector,
}

/// Configured integration of one problem.
pub struct Integrator<'a> {
    problem: &'a TimeVaryingProblem,
    mode: Mode,
    gains: GainSettings,
    schedules: Option<BarrierSchedules>,
    config: IntegratorConfig,
    noise: Option<Box<dyn PredictionNoise + 'a>>,
    solves: usize,
}

impl<'a> Integrator<'a> {
    pub fn new(problem: &'a TimeVaryingProblem, mode: Mode, config: IntegratorConfig) -> Self {
        Self {
            problem,
            mode,
            gains: GainSettings::default(),
            schedules: None,
            config,
            noise: None,
            solves: 0,
        }
    }

    pub fn gains(mut self, gains: GainSettings) -> Self {
        self.gains = gains;
        self
    }

    pub fn schedules(mut self, schedules: BarrierSchedules) -> Self {
        self.schedules = Some(schedules);
        self
    }

    pub fn noise(mut self, noise: impl PredictionNoise + 'a) -> Self {
        self.noise = Some(Box::new(noise));
        self
    }

    pub fn run(&mut self, init: &InitialState) -> Result<Trajectory, Aborted> {
        self.run_with(init, |_| ControlFlow::Continue(()))
    }

    /// Runs the integration, calling `observer` after every recorded sample.
    /// Returning `Break` stops early with a successful trajectory.
    pub fn run_with<F>(&mut self, init: &InitialState, mut observer: F) -> Result<Trajectory, Aborted>
    where
        F: FnMut(&Sample) -> ControlFlow<()>,
    {
        let mut traj = Trajectory {
            mode: self.mode,
            tau: self.config.tau,
            samples: Vec::new(),
        };
        self.solves = 0;
        match self.drive(init, &mut traj, &mut observer) {
            Ok(()) => Ok(traj),
            Err(error) => Err(Aborted {
                trajectory: traj,
                error,
            }),
        }
    }

    fn validate(&self, init: &InitialState) -> Result<Vector> {
        self.config.validate()?;
        self.gains.validate()?;
        if self.mode == Mode::Robust {
            self.gains.validate_robust()?;
        }
        let n = self.problem.dim();
        let q = self.problem.num_equalities();
        if init.x.len() != n {
            return Err(Error::InvalidInput(format!(
                "initial state has dimension {}, problem has {n}",
                init.x.len()
            )));
        }
        if self.mode.uses_barrier() {
            match &self.schedules {
                Some(s) => s.validate()?,
                None => {
                    return Err(Error::InvalidInput(format!(
                        "mode {} needs barrier schedules",
                        self.mode
                    )))
                }
            }
        }
        if self.mode.uses_dual() && q == 0 && self.mode == Mode::Equality {
            return Err(Error::InvalidInput("equality mode needs an equality system".into()));
        }
        if matches!(
            self.mode,
            Mode::Barrier | Mode::SecondOrder | Mode::Robust | Mode::Unconstrained
        ) && q > 0
        {
            return Err(Error::InvalidInput(format!(
                "mode {} does not support equality constraints",
                self.mode
            )));
        }
        if self.config.line_search && !matches!(self.mode, Mode::Unconstrained | Mode::Barrier) {
            return Err(Error::InvalidInput(format!(
                "line search is not available in mode {}",
                self.mode
            )));
        }
        if self.config.line_search && self.config.scheme == Scheme::Rk4 {
            return Err(Error::InvalidInput("line search requires the Euler scheme".into()));
        }
        let mut state = init.x.clone();
        if self.mode.uses_dual() {
            let nu = init.nu.clone().unwrap_or_else(|| Vector::zeros(q));
            if nu.len() != q {
                return Err(Error::InvalidInput(format!(
                    "dual has dimension {}, expected {q}",
                    nu.len()
                )));
            }
            state = KktState::new(state, nu).pack();
        }
        if self.mode == Mode::SecondOrder {
            let y = init.y.clone().unwrap_or_else(|| Vector::zeros(n));
            if y.len() != n {
                return Err(Error::InvalidInput(format!(
                    "filter state has dimension {}, expected {n}",
                    y.len()
                )));
            }
            state = KktState::new(state, y).pack();
        }
        Ok(state)
    }

    fn drive<F>(&mut self, init: &InitialState, traj: &mut Trajectory, observer: &mut F) -> Result<()>
    where
        F: FnMut(&Sample) -> ControlFlow<()>,
    {
        let mut state = self.validate(init)?;
        let tau = self.config.tau;
        let steps = self.config.steps();
        let mut ev = self.evaluate(0.0, &state)?;
        let mut events = StepEvents::default();
        for k in 0..=steps {
            let t = k as f64 * tau;
            let sample = self.record(t, &state, &ev, events);
            let flow = observer(&sample);
            traj.samples.push(sample);
            if k == steps || flow.is_break() {
                break;
            }
            let t_next = (k + 1) as f64 * tau;
            events = StepEvents::default();
            let candidate = match self.config.scheme {
                Scheme::Euler if self.config.line_search => {
                    let (cand, bt) = self.line_search_step(t_next, &state, &ev)?;
                    events.line_search_backtracks = bt;
                    cand
                }
                Scheme::Euler => {
                    let f = self.field(&ev, &state)?;
                    euler_step(&f, &state, tau)
                }
                Scheme::Rk4 => self.rk4_step(t, &state, &ev)?,
            };
            state = match (&self.schedules, self.mode.uses_barrier()) {
                (Some(sched), true) => {
                    let g = feasibility_guard(&state, &candidate, self.problem, sched, t_next, &self.config)?;
                    events.guard_shrinks = g.shrinks;
                    g.state
                }
                _ => candidate,
            };
            ev = self.evaluate(t_next, &state)?;
        }
        Ok(())
    }

    fn x_part(&self, state: &Vector) -> Vector {
        state.rows(0, self.problem.dim()).clone_owned()
    }

    fn tail(&self, state: &Vector) -> Vector {
        let n = self.problem.dim();
        state.rows(n, state.len() - n).clone_owned()
    }

    fn evaluate(&self, t: f64, state: &Vector) -> Result<Eval> {
        let x = self.x_part(state);
        let bundle = self.problem.bundle(&x, t)?;
        let (phi, sched) = match (&self.schedules, self.mode.uses_barrier()) {
            (Some(s), true) => {
                let v = s.eval(t);
                (Some(eval_phi(&bundle, v.c, v.s)?), Some(v))
            }
            _ => (None, None),
        };
        let residual = match self.mode {
            Mode::Unconstrained => bundle.grad_f0.clone(),
            Mode::Equality => lagrangian_gradient(&KktState::new(x, self.tail(state)), &bundle),
            Mode::Combined => combined_gradient(&KktState::new(x, self.tail(state)), &bundle, phi.as_ref().unwrap()),
            Mode::Barrier | Mode::SecondOrder | Mode::Robust => phi.as_ref().unwrap().grad.clone(),
        };
        Ok(Eval {
            bundle,
            phi,
            sched,
            residual,
        })
    }

    fn field(&mut self, ev: &Eval, state: &Vector) -> Result<Vector> {
        self.solves += 1;
        let alpha = self.gains.alpha;
        let (c_dot, s_dot) = ev.sched.map_or((0.0, 0.0), |s| (s.c_dot, s.s_dot));
        match self.mode {
            Mode::Unconstrained => unconstrained_field(&ev.bundle, alpha),
            Mode::Equality => {
                let s = KktState::new(self.x_part(state), self.tail(state));
                equality_field(&s, &ev.bundle, alpha)
            }
            Mode::Barrier => barrier_field(ev.phi.as_ref().unwrap(), c_dot, s_dot, alpha),
            Mode::Combined => {
                let s = KktState::new(self.x_part(state), self.tail(state));
                combined_field(&s, &ev.bundle, ev.phi.as_ref().unwrap(), c_dot, s_dot, alpha)
            }
            Mode::SecondOrder => {
                let filter = FilterState { y: self.tail(state) };
                let (xd, yd) = second_order_field(&filter, ev.phi.as_ref().unwrap(), c_dot, s_dot, &self.gains)?;
                Ok(KktState::new(xd, yd).pack())
            }
            Mode::Robust => {
                let phi = ev.phi.as_ref().unwrap();
                let n = self.problem.dim();
                let mut noisy = phi.d_dt.clone();
                if let Some(noise) = self.noise.as_mut() {
                    noisy += noise.sample(ev.bundle.t, n);
                }
                robust_field(phi, c_dot, s_dot, &noisy, &self.gains)
            }
        }
    }

    fn rk4_step(&mut self, t: f64, state: &Vector, ev: &Eval) -> Result<Vector> {
        let tau = self.config.tau;
        let k1 = self.field(ev, state)?;
        let z2 = state + &k1 * (0.5 * tau);
        let k2 = self.field(&self.evaluate(t + 0.5 * tau, &z2)?, &z2)?;
        let z3 = state + &k2 * (0.5 * tau);
        let k3 = self.field(&self.evaluate(t + 0.5 * tau, &z3)?, &z3)?;
        let z4 = state + &k3 * tau;
        let k4 = self.field(&self.evaluate(t + tau, &z4)?, &z4)?;
        Ok(state + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (tau / 6.0))
    }

    /// Euler step with the correction component scaled by `β ∈ {1, ρ, ρ², …}`
    /// until the residual norm satisfies the Armijo condition at `t_next`.
    fn line_search_step(&mut self, t_next: f64, state: &Vector, ev: &Eval) -> Result<(Vector, usize)> {
        self.solves += 1;
        let tau = self.config.tau;
        let alpha = self.gains.alpha;
        let (hess, pred, grad) = match (&ev.phi, ev.sched) {
            (Some(phi), Some(s)) => (&phi.hess, barrier_prediction(phi, s.c_dot, s.s_dot), &phi.grad),
            _ => (&ev.bundle.hess_f0, ev.bundle.grad_t_f0.clone(), &ev.bundle.grad_f0),
        };
        let chol = factor_spd_regularized(hess)?;
        let predict = -chol.solve(&pred);
        let correct = -chol.solve(&(grad * alpha));
        let g0 = grad.norm();
        let decrease = (alpha * tau).min(1.0);

        let mut beta = 1.0;
        let mut best: Option<(f64, Vector, usize)> = None;
        for bt in 0..=self.config.max_backtracks {
            let cand = state + (&predict + &correct * beta) * tau;
            let gn = self.residual_norm(t_next, &cand);
            if gn <= (1.0 - self.config.armijo_c * beta * decrease) * g0 {
                return Ok((cand, bt));
            }
            if best.as_ref().is_none_or(|(b, _, _)| gn < *b) {
                best = Some((gn, cand, bt));
            }
            beta *= self.config.guard_shrink;
        }
        let (_, cand, _) = best.expect("at least one trial");
        debug!("line search exhausted at t = {t_next}; using best trial");
        Ok((cand, self.config.max_backtracks))
    }

    fn residual_norm(&self, t: f64, state: &Vector) -> f64 {
        match self.evaluate(t, state) {
            Ok(ev) => ev.residual.norm(),
            Err(_) => f64::INFINITY,
        }
    }

    fn record(&self, t: f64, state: &Vector, ev: &Eval, events: StepEvents) -> Sample {
        let x = self.x_part(state);
        let (psi, lambdas) = match (&ev.phi, ev.sched) {
            (Some(phi), Some(s)) => (
                phi.psi.clone(),
                estimate_duals(&phi.psi, s.c).unwrap_or_else(|_| Vector::zeros(phi.psi.len())),
            ),
            _ => (Vector::zeros(0), Vector::zeros(0)),
        };
        let eq_residual = if ev.bundle.num_equalities() > 0 {
            (&ev.bundle.eq_a * &x - &ev.bundle.eq_b).norm()
        } else {
            0.0
        };
        Sample {
            t,
            nu: self.mode.uses_dual().then(|| self.tail(state)),
            y: (self.mode == Mode::SecondOrder).then(|| self.tail(state)),
            x,
            psi,
            lambdas,
            c: ev.sched.map(|s| s.c),
            s: ev.sched.map(|s| s.s),
            grad_norm: ev.residual.norm(),
            eq_residual,
            events,
            solves: self.solves,
        }
    }
}

/// Convenience wrapper around [`Integrator`].
pub fn integrate(
    problem: &TimeVaryingProblem,
    mode: Mode,
    gains: GainSettings,
    schedules: Option<BarrierSchedules>,
    config: IntegratorConfig,
    init: &InitialState,
) -> Result<Trajectory, Aborted> {
    let mut integrator = Integrator::new(problem, mode, config).gains(gains);
    if let Some(s) = schedules {
        integrator = integrator.schedules(s);
    }
    integrator.run(init)
}
