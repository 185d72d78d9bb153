//! Time-varying problem model.
//!
//! A [`TimeVaryingProblem`] bundles the objective `f0(x, t)`, the inequality
//! constraints `fi(x, t) <= 0` and an optional affine equality system
//! `A(t) x = b(t)`. Every oracle is a pure function of `(x, t)`; the dynamics
//! only ever see a [`DerivativeBundle`] evaluated at a single point.
//!
//! Time partials (`∂f/∂t` and `∇xt f`) come from the oracle when it supplies
//! them analytically, otherwise from central finite differences in `t`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, OracleId, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Default step of the finite-difference time-partial fallback.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Time partials of a scalar field at one point: `∂g/∂t` and `∇xt g`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimePartials {
    pub value: f64,
    pub grad: Vector,
}

/// A scalar field `g(x, t)` with its spatial derivatives.
pub trait ScalarField: Send + Sync {
    fn value(&self, x: &Vector, t: f64) -> f64;

    fn gradient(&self, x: &Vector, t: f64) -> Vector;

    /// `None` when the Hessian vanishes identically (affine fields).
    fn hessian(&self, x: &Vector, t: f64) -> Option<Matrix>;

    /// Analytic time partials. Returning `None` selects the finite-difference
    /// fallback.
    fn time_partials(&self, _x: &Vector, _t: f64) -> Option<TimePartials> {
        None
    }
}

/// An affine system `A(t) x = b(t)` with `q` rows.
pub trait AffineSystem: Send + Sync {
    fn rows(&self) -> usize;

    fn matrix(&self, t: f64) -> Matrix;

    fn rhs(&self, t: f64) -> Vector;

    /// `Ȧ(t)`; `None` means the matrix is constant.
    fn matrix_rate(&self, _t: f64) -> Option<Matrix> {
        None
    }

    /// `ḃ(t)`; `None` means the right-hand side is constant.
    fn rhs_rate(&self, _t: f64) -> Option<Vector> {
        None
    }
}

type ValueFn = dyn Fn(&Vector, f64) -> f64 + Send + Sync;
type GradFn = dyn Fn(&Vector, f64) -> Vector + Send + Sync;
type HessFn = dyn Fn(&Vector, f64) -> Matrix + Send + Sync;
type PartialsFn = dyn Fn(&Vector, f64) -> TimePartials + Send + Sync;

/// Closure-backed [`ScalarField`].
///
/// ```
/// use tvipm::problem::{FnField, ScalarField, Vector, Matrix};
/// let f = FnField::new(
///     |x: &Vector, t: f64| 0.5 * (x[0] - t.sin()).powi(2),
///     |x: &Vector, t: f64| Vector::from_element(1, x[0] - t.sin()),
/// )
/// .with_hessian(|_, _| Matrix::identity(1, 1));
/// assert_eq!(f.value(&Vector::zeros(1), 0.0), 0.0);
/// ```
pub struct FnField {
    value: Box<ValueFn>,
    gradient: Box<GradFn>,
    hessian: Option<Box<HessFn>>,
    time_partials: Option<Box<PartialsFn>>,
}

impl FnField {
    pub fn new<V, G>(value: V, gradient: G) -> Self
    where
        V: Fn(&Vector, f64) -> f64 + Send + Sync + 'static,
        G: Fn(&Vector, f64) -> Vector + Send + Sync + 'static,
    {
        Self {
            value: Box::new(value),
            gradient: Box::new(gradient),
            hessian: None,
            time_partials: None,
        }
    }

    pub fn with_hessian<H>(mut self, hessian: H) -> Self
    where
        H: Fn(&Vector, f64) -> Matrix + Send + Sync + 'static,
    {
        self.hessian = Some(Box::new(hessian));
        self
    }

    pub fn with_time_partials<P>(mut self, partials: P) -> Self
    where
        P: Fn(&Vector, f64) -> TimePartials + Send + Sync + 'static,
    {
        self.time_partials = Some(Box::new(partials));
        self
    }
}

impl ScalarField for FnField {
    fn value(&self, x: &Vector, t: f64) -> f64 {
        (self.value)(x, t)
    }

    fn gradient(&self, x: &Vector, t: f64) -> Vector {
        (self.gradient)(x, t)
    }

    fn hessian(&self, x: &Vector, t: f64) -> Option<Matrix> {
        self.hessian.as_ref().map(|h| h(x, t))
    }

    fn time_partials(&self, x: &Vector, t: f64) -> Option<TimePartials> {
        self.time_partials.as_ref().map(|p| p(x, t))
    }
}

/// Affine constraint `aᵀx - (b0 + ḃ t)`, with exact time partials.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub normal: Vector,
    pub offset: f64,
    pub offset_rate: f64,
}

impl LinearConstraint {
    pub fn new(normal: Vector, offset: f64) -> Self {
        Self {
            normal,
            offset,
            offset_rate: 0.0,
        }
    }

    pub fn with_offset_rate(mut self, rate: f64) -> Self {
        self.offset_rate = rate;
        self
    }
}

impl ScalarField for LinearConstraint {
    fn value(&self, x: &Vector, t: f64) -> f64 {
        self.normal.dot(x) - (self.offset + self.offset_rate * t)
    }

    fn gradient(&self, _x: &Vector, _t: f64) -> Vector {
        self.normal.clone()
    }

    fn hessian(&self, _x: &Vector, _t: f64) -> Option<Matrix> {
        None
    }

    fn time_partials(&self, x: &Vector, _t: f64) -> Option<TimePartials> {
        Some(TimePartials {
            value: -self.offset_rate,
            grad: Vector::zeros(x.len()),
        })
    }
}

/// Equality system `A x = b0 + t ḃ` with a constant matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEquality {
    pub matrix: Matrix,
    pub rhs: Vector,
    pub rhs_rate: Vector,
}

impl LinearEquality {
    pub fn new(matrix: Matrix, rhs: Vector) -> Self {
        let q = rhs.len();
        Self {
            matrix,
            rhs,
            rhs_rate: Vector::zeros(q),
        }
    }

    pub fn with_rhs_rate(mut self, rate: Vector) -> Self {
        self.rhs_rate = rate;
        self
    }
}

impl AffineSystem for LinearEquality {
    fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    fn matrix(&self, _t: f64) -> Matrix {
        self.matrix.clone()
    }

    fn rhs(&self, t: f64) -> Vector {
        &self.rhs + &self.rhs_rate * t
    }

    fn rhs_rate(&self, _t: f64) -> Option<Vector> {
        Some(self.rhs_rate.clone())
    }
}

/// Objective, inequality constraints and optional affine equalities of a
/// time-varying convex program.
#[derive(Clone)]
pub struct TimeVaryingProblem {
    dim: usize,
    objective: Arc<dyn ScalarField>,
    inequalities: Vec<Arc<dyn ScalarField>>,
    equality: Option<Arc<dyn AffineSystem>>,
    strong_convexity: f64,
    fd_step: f64,
}

impl fmt::Debug for TimeVaryingProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TimeVaryingProblem")
            .field("dim", &self.dim)
            .field("inequalities", &self.inequalities.len())
            .field("equalities", &self.num_equalities())
            .field("strong_convexity", &self.strong_convexity)
            .finish()
    }
}

impl TimeVaryingProblem {
    /// `strong_convexity` is the declared lower bound `m` on the eigenvalues
    /// of `∇xx f0`.
    pub fn new(dim: usize, objective: impl ScalarField + 'static, strong_convexity: f64) -> Result<Self> {
        Self::from_arc(dim, Arc::new(objective), strong_convexity)
    }

    pub fn from_arc(dim: usize, objective: Arc<dyn ScalarField>, strong_convexity: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        if !(strong_convexity > 0.0 && strong_convexity.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "strong convexity modulus must be positive, got {strong_convexity}"
            )));
        }
        Ok(Self {
            dim,
            objective,
            inequalities: Vec::new(),
            equality: None,
            strong_convexity,
            fd_step: DEFAULT_FD_STEP,
        })
    }

    pub fn with_inequality(self, constraint: impl ScalarField + 'static) -> Self {
        self.with_inequality_arc(Arc::new(constraint))
    }

    pub fn with_inequality_arc(mut self, constraint: Arc<dyn ScalarField>) -> Self {
        self.inequalities.push(constraint);
        self
    }

    pub fn with_equality(self, system: impl AffineSystem + 'static) -> Result<Self> {
        self.with_equality_arc(Arc::new(system))
    }

    pub fn with_equality_arc(mut self, system: Arc<dyn AffineSystem>) -> Result<Self> {
        let q = system.rows();
        if q >= self.dim {
            return Err(Error::InvalidInput(format!(
                "equality system needs fewer rows than variables ({q} >= {})",
                self.dim
            )));
        }
        let a = system.matrix(0.0);
        if a.nrows() != q || a.ncols() != self.dim {
            return Err(Error::InvalidInput(format!(
                "equality matrix is {}x{}, expected {q}x{}",
                a.nrows(),
                a.ncols(),
                self.dim
            )));
        }
        self.equality = Some(system);
        Ok(self)
    }

    pub fn with_fd_step(mut self, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidInput(format!("fd step must be positive, got {h}")));
        }
        self.fd_step = h;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_inequalities(&self) -> usize {
        self.inequalities.len()
    }

    pub fn num_equalities(&self) -> usize {
        self.equality.as_ref().map_or(0, |e| e.rows())
    }

    pub fn strong_convexity(&self) -> f64 {
        self.strong_convexity
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn objective(&self) -> &dyn ScalarField {
        self.objective.as_ref()
    }

    pub fn inequality(&self, i: usize) -> &dyn ScalarField {
        self.inequalities[i].as_ref()
    }

    pub fn equality(&self) -> Option<&dyn AffineSystem> {
        self.equality.as_deref()
    }

    /// Values `fi(x, t)` of all inequality constraints.
    pub fn inequality_values(&self, x: &Vector, t: f64) -> Result<Vector> {
        let values = self.inequalities.iter().map(|f| f.value(x, t));
        let out = Vector::from_iterator(self.inequalities.len(), values);
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                oracle: OracleId::Inequality(i),
                t,
            });
        }
        Ok(out)
    }

    /// `max_i fi(x, t)`, or `-inf` without inequality constraints.
    pub fn max_inequality(&self, x: &Vector, t: f64) -> Result<f64> {
        Ok(self
            .inequality_values(x, t)?
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// `‖A(t) x - b(t)‖`, zero without equality constraints.
    pub fn equality_residual(&self, x: &Vector, t: f64) -> f64 {
        self.equality
            .as_ref()
            .map_or(0.0, |e| (e.matrix(t) * x - e.rhs(t)).norm())
    }

    pub fn bundle(&self, x: &Vector, t: f64) -> Result<DerivativeBundle> {
        eval_derivative_bundle(self, x, t)
    }
}

/// All derivative values of a problem at one `(x, t)` point.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeBundle {
    pub t: f64,
    pub f0: f64,
    pub grad_f0: Vector,
    pub hess_f0: Matrix,
    /// `∇xt f0`.
    pub grad_t_f0: Vector,
    pub f_ineq: Vector,
    pub grads_ineq: Vec<Vector>,
    /// `None` entries are identically zero Hessians.
    pub hess_ineq: Vec<Option<Matrix>>,
    /// `∂fi/∂t`.
    pub dt_ineq: Vector,
    /// `∇xt fi`.
    pub grad_t_ineq: Vec<Vector>,
    pub eq_a: Matrix,
    pub eq_b: Vector,
    pub eq_a_dot: Matrix,
    pub eq_b_dot: Vector,
}

impl DerivativeBundle {
    pub fn dim(&self) -> usize {
        self.grad_f0.len()
    }

    pub fn num_inequalities(&self) -> usize {
        self.f_ineq.len()
    }

    pub fn num_equalities(&self) -> usize {
        self.eq_b.len()
    }
}

fn ensure_finite_vec(v: &Vector, oracle: OracleId, t: f64) -> Result<()> {
    if v.iter().all(|e| e.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { oracle, t })
    }
}

fn ensure_finite_mat(m: &Matrix, oracle: OracleId, t: f64) -> Result<()> {
    if m.iter().all(|e| e.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { oracle, t })
    }
}

/// Evaluates every derivative the dynamics need at `(x, t)`.
pub fn eval_derivative_bundle(problem: &TimeVaryingProblem, x: &Vector, t: f64) -> Result<DerivativeBundle> {
    let n = problem.dim;
    if x.len() != n {
        return Err(Error::InvalidInput(format!(
            "state has dimension {}, problem has {n}",
            x.len()
        )));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidInput(format!("time must be finite and >= 0, got {t}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("state contains non-finite entries".into()));
    }
    let h = problem.fd_step;

    let obj = problem.objective.as_ref();
    let f0 = obj.value(x, t);
    if !f0.is_finite() {
        return Err(Error::NonFinite {
            oracle: OracleId::Objective,
            t,
        });
    }
    let grad_f0 = obj.gradient(x, t);
    ensure_finite_vec(&grad_f0, OracleId::Objective, t)?;
    let hess_f0 = obj.hessian(x, t).unwrap_or_else(|| Matrix::zeros(n, n));
    ensure_finite_mat(&hess_f0, OracleId::Objective, t)?;
    let grad_t_f0 = match obj.time_partials(x, t) {
        Some(p) => p.grad,
        None => fd_partials_for(obj, x, t, h, OracleId::Objective)?.grad,
    };
    ensure_finite_vec(&grad_t_f0, OracleId::Objective, t)?;

    let p = problem.inequalities.len();
    let mut f_ineq = Vector::zeros(p);
    let mut grads_ineq = Vec::with_capacity(p);
    let mut hess_ineq = Vec::with_capacity(p);
    let mut dt_ineq = Vector::zeros(p);
    let mut grad_t_ineq = Vec::with_capacity(p);
    for (i, fi) in problem.inequalities.iter().enumerate() {
        let id = OracleId::Inequality(i);
        let v = fi.value(x, t);
        if !v.is_finite() {
            return Err(Error::NonFinite { oracle: id, t });
        }
        f_ineq[i] = v;
        let g = fi.gradient(x, t);
        ensure_finite_vec(&g, id, t)?;
        grads_ineq.push(g);
        let hi = fi.hessian(x, t);
        if let Some(m) = &hi {
            ensure_finite_mat(m, id, t)?;
        }
        hess_ineq.push(hi);
        let partials = match fi.time_partials(x, t) {
            Some(p) => p,
            None => fd_partials_for(fi.as_ref(), x, t, h, id)?,
        };
        if !partials.value.is_finite() {
            return Err(Error::NonFinite { oracle: id, t });
        }
        ensure_finite_vec(&partials.grad, id, t)?;
        dt_ineq[i] = partials.value;
        grad_t_ineq.push(partials.grad);
    }

    let (eq_a, eq_b, eq_a_dot, eq_b_dot) = match &problem.equality {
        Some(sys) => {
            let q = sys.rows();
            let a = sys.matrix(t);
            let b = sys.rhs(t);
            let a_dot = sys.matrix_rate(t).unwrap_or_else(|| Matrix::zeros(q, n));
            let b_dot = sys.rhs_rate(t).unwrap_or_else(|| Vector::zeros(q));
            ensure_finite_mat(&a, OracleId::Equality, t)?;
            ensure_finite_vec(&b, OracleId::Equality, t)?;
            ensure_finite_mat(&a_dot, OracleId::Equality, t)?;
            ensure_finite_vec(&b_dot, OracleId::Equality, t)?;
            (a, b, a_dot, b_dot)
        }
        None => (
            Matrix::zeros(0, n),
            Vector::zeros(0),
            Matrix::zeros(0, n),
            Vector::zeros(0),
        ),
    };

    Ok(DerivativeBundle {
        t,
        f0,
        grad_f0,
        hess_f0,
        grad_t_f0,
        f_ineq,
        grads_ineq,
        hess_ineq,
        dt_ineq,
        grad_t_ineq,
        eq_a,
        eq_b,
        eq_a_dot,
        eq_b_dot,
    })
}

/// Finite-difference time partials of `field` at `(x, t)`.
///
/// Uses the central difference `(g(t+h) - g(t-h)) / 2h` on the value and on
/// every gradient entry; falls back to a forward difference when `t < h` so
/// that no negative time is ever evaluated.
pub fn fd_time_partials(field: &dyn ScalarField, x: &Vector, t: f64, h: f64) -> Result<TimePartials> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!("fd step must be positive, got {h}")));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidInput(format!("time must be finite and >= 0, got {t}")));
    }
    fd_partials_for(field, x, t, h, OracleId::Field)
}

fn fd_partials_for(field: &dyn ScalarField, x: &Vector, t: f64, h: f64, oracle: OracleId) -> Result<TimePartials> {
    let (lo, hi, width) = if t >= h { (t - h, t + h, 2.0 * h) } else { (t, t + h, h) };
    let v_hi = field.value(x, hi);
    let v_lo = field.value(x, lo);
    if !(v_hi.is_finite() && v_lo.is_finite()) {
        return Err(Error::NonFinite { oracle, t });
    }
    let g_hi = field.gradient(x, hi);
    let g_lo = field.gradient(x, lo);
    let grad = (g_hi - g_lo) / width;
    ensure_finite_vec(&grad, oracle, t)?;
    Ok(TimePartials {
        value: (v_hi - v_lo) / width,
        grad,
    })
}
