//! Disk-robot navigation toward a projected goal.
//!
//! The robot center `x_c` follows `ẋ_c = -K (x_c - x̂)`, where `x̂` estimates
//! the projection of the goal `x_d` onto the collision-free local workspace
//! `LF(x_c)`. That set is the polytope cut out by one halfspace per obstacle,
//! built from power distances and shrunk by the robot radius, intersected
//! with the walls of the bounding box. The estimate itself runs the barrier
//! dynamics on `½‖x - x_d(t)‖²` subject to the moving halfspaces, whose rates
//! are known in closed form because `ẋ_c` is.

use std::sync::Arc;

use log::debug;
use nalgebra::Vector2;
use serde::Serialize;

use crate::barrier::{eval_phi, BarrierSchedules};
use crate::dynamics::barrier_field;
use crate::error::{Error, Result};
use crate::integrator::{feasibility_guard, IntegratorConfig};
use crate::problem::{FnField, LinearConstraint, Matrix, ScalarField, TimePartials, TimeVaryingProblem, Vector};

pub type Point = Vector2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Obstacle {
    pub fn new(x: f64, y: f64, radius: f64) -> Self {
        Self { center: [x, y], radius }
    }

    pub fn center(&self) -> Point {
        Point::new(self.center[0], self.center[1])
    }
}

/// Goal position as a function of time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum GoalPath {
    Static([f64; 2]),
    /// Counter-clockwise circle starting at angle zero.
    Circle {
        center: [f64; 2],
        radius: f64,
        period: f64,
    },
}

impl GoalPath {
    pub fn position(&self, t: f64) -> Point {
        match *self {
            GoalPath::Static(p) => Point::new(p[0], p[1]),
            GoalPath::Circle { center, radius, period } => {
                let w = std::f64::consts::TAU / period;
                Point::new(center[0] + radius * (w * t).cos(), center[1] + radius * (w * t).sin())
            }
        }
    }

    pub fn velocity(&self, t: f64) -> Point {
        match *self {
            GoalPath::Static(_) => Point::zeros(),
            GoalPath::Circle { radius, period, .. } => {
                let w = std::f64::consts::TAU / period;
                Point::new(-radius * w * (w * t).sin(), radius * w * (w * t).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Workspace {
    /// Lower-left and upper-right corners.
    pub bounds: ([f64; 2], [f64; 2]),
    pub obstacles: Vec<Obstacle>,
    pub robot_radius: f64,
    pub goal: GoalPath,
    pub gain: f64,
}

/// Obstacle layout of the built-in presets.
pub fn paper_obstacles() -> Vec<Obstacle> {
    vec![
        Obstacle::new(-7.0, -6.5, 2.0),
        Obstacle::new(6.5, 6.5, 2.0),
        Obstacle::new(-7.5, 7.0, 1.5),
        Obstacle::new(7.0, -7.0, 1.5),
        Obstacle::new(7.5, 13.0, 1.5),
        Obstacle::new(-13.0, 7.5, 1.5),
        Obstacle::new(-7.5, -13.0, 1.5),
        Obstacle::new(13.0, -7.5, 1.5),
    ]
}

impl Workspace {
    /// `[-20, 20]²`, unit robot, static goal at the origin, `K = 0.01`.
    pub fn paper_static() -> Self {
        Self {
            bounds: ([-20.0, -20.0], [20.0, 20.0]),
            obstacles: paper_obstacles(),
            robot_radius: 1.0,
            goal: GoalPath::Static([0.0, 0.0]),
            gain: 0.01,
        }
    }

    /// Same layout, goal circling the origin with radius 15 and period 2000,
    /// `K = 0.05`.
    pub fn paper_moving() -> Self {
        Self {
            goal: GoalPath::Circle {
                center: [0.0, 0.0],
                radius: 15.0,
                period: 2000.0,
            },
            gain: 0.05,
            ..Self::paper_static()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.robot_radius;
        let ([x0, y0], [x1, y1]) = self.bounds;
        if !(r > 0.0 && self.gain >= 0.0 && x1 - x0 > 2.0 * r && y1 - y0 > 2.0 * r) {
            return Err(Error::InvalidInput("invalid workspace bounds, radius or gain".into()));
        }
        for (i, oi) in self.obstacles.iter().enumerate() {
            if !(oi.radius > 0.0) {
                return Err(Error::InvalidInput(format!("obstacle {i} has non-positive radius")));
            }
            for (j, oj) in self.obstacles.iter().enumerate().skip(i + 1) {
                let gap = (oi.center() - oj.center()).norm() - oi.radius - oj.radius - 2.0 * r;
                if !(gap > 0.0) {
                    return Err(Error::InvalidInput(format!("obstacles {i} and {j} are too close")));
                }
            }
        }
        let inside = |p: Point| p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1;
        let goal_ok = match self.goal {
            GoalPath::Static(_) => inside(self.goal.position(0.0)),
            GoalPath::Circle { center, radius, period } => {
                period > 0.0
                    && radius >= 0.0
                    && inside(Point::new(center[0] - radius, center[1] - radius))
                    && inside(Point::new(center[0] + radius, center[1] + radius))
            }
        };
        if !goal_ok {
            return Err(Error::InvalidInput("goal leaves the workspace bounds".into()));
        }
        Ok(())
    }

    /// `min_i (‖x_c - x_i‖ - r_i - r)`; positive means collision-free.
    pub fn collision_margin(&self, x_c: &Point) -> f64 {
        self.obstacles
            .iter()
            .map(|o| (x_c - o.center()).norm() - o.radius - self.robot_radius)
            .fold(f64::INFINITY, f64::min)
    }

    /// Walls shrunk by the robot radius, as `aᵀx <= b`.
    fn walls(&self) -> [(Point, f64); 4] {
        let r = self.robot_radius;
        let ([x0, y0], [x1, y1]) = self.bounds;
        [
            (Point::new(1.0, 0.0), x1 - r),
            (Point::new(-1.0, 0.0), -(x0 + r)),
            (Point::new(0.0, 1.0), y1 - r),
            (Point::new(0.0, -1.0), -(y0 + r)),
        ]
    }
}

/// `‖x - center‖² - radius²`.
pub fn power_distance(x: &Point, center: &Point, radius: f64) -> f64 {
    (x - center).norm_squared() - radius * radius
}

/// Halfspace `aᵀx <= b` separating the robot from one obstacle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Halfspace {
    pub a: Point,
    pub b: f64,
    pub theta: f64,
}

impl Halfspace {
    pub fn value(&self, x: &Point) -> f64 {
        self.a.dot(x) - self.b
    }
}

fn check_clear(x_c: &Point, ws: &Workspace) -> Result<()> {
    let margin = ws.collision_margin(x_c);
    if margin > 0.0 {
        Ok(())
    } else {
        Err(Error::Geometry(format!(
            "robot center ({}, {}) overlaps an inflated obstacle (margin {margin:e})",
            x_c.x, x_c.y
        )))
    }
}

/// One halfspace per obstacle, in obstacle order.
pub fn local_workspace_halfspaces(x_c: &Point, ws: &Workspace) -> Result<Vec<Halfspace>> {
    check_clear(x_c, ws)?;
    let r = ws.robot_radius;
    Ok(ws
        .obstacles
        .iter()
        .map(|o| {
            let xi = o.center();
            let a = xi - x_c;
            let d2 = a.norm_squared();
            let theta = 0.5 - (o.radius * o.radius - r * r) / (2.0 * d2);
            let anchor = xi * theta + x_c * (1.0 - theta) + (x_c - xi) * (r / d2.sqrt());
            Halfspace {
                a,
                b: a.dot(&anchor),
                theta,
            }
        })
        .collect())
}

/// Time derivatives of one halfspace under `ẋ_c = -K (x_c - x̂)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfspaceRate {
    pub a_dot: Point,
    pub theta_dot: f64,
    pub b_dot: f64,
}

pub fn eval_workspace_rates(x_c: &Point, x_hat: &Point, ws: &Workspace, gain: f64) -> Result<Vec<HalfspaceRate>> {
    check_clear(x_c, ws)?;
    let r = ws.robot_radius;
    let xc_dot = (x_c - x_hat) * -gain;
    Ok(ws
        .obstacles
        .iter()
        .map(|o| {
            let d = o.center() - x_c;
            let dist = d.norm();
            let spread = o.radius * o.radius - r * r;
            HalfspaceRate {
                a_dot: -xc_dot,
                theta_dot: spread * (-d).dot(&xc_dot) / dist.powi(4),
                b_dot: -xc_dot.dot(x_c) + r * d.dot(&xc_dot) / dist,
            }
        })
        .collect())
}

/// `(a + ȧ (t - t0))ᵀx - (b + ḃ (t - t0))`: exact value and time partials
/// at `t0`.
struct MovingHalfspace {
    a: Vector,
    a_dot: Vector,
    b: f64,
    b_dot: f64,
    t0: f64,
}

impl ScalarField for MovingHalfspace {
    fn value(&self, x: &Vector, t: f64) -> f64 {
        let dt = t - self.t0;
        (&self.a + &self.a_dot * dt).dot(x) - (self.b + self.b_dot * dt)
    }

    fn gradient(&self, _x: &Vector, t: f64) -> Vector {
        &self.a + &self.a_dot * (t - self.t0)
    }

    fn hessian(&self, _x: &Vector, _t: f64) -> Option<Matrix> {
        None
    }

    fn time_partials(&self, x: &Vector, _t: f64) -> Option<TimePartials> {
        Some(TimePartials {
            value: self.a_dot.dot(x) - self.b_dot,
            grad: self.a_dot.clone(),
        })
    }
}

fn dvec(p: &Point) -> Vector {
    Vector::from_column_slice(p.as_slice())
}

/// The projected-goal program at time `t0`: `½‖x - x_d(t)‖²` subject to the
/// obstacle halfspaces of `x_c` (moving as dictated by `x̂`) and the walls.
pub fn build_projected_goal_problem(x_c: &Point, x_hat: &Point, ws: &Workspace, t0: f64) -> Result<TimeVaryingProblem> {
    let halfspaces = local_workspace_halfspaces(x_c, ws)?;
    let rates = eval_workspace_rates(x_c, x_hat, ws, ws.gain)?;
    let goal = ws.goal;
    let objective = FnField::new(
        move |x: &Vector, t: f64| 0.5 * (x - dvec(&goal.position(t))).norm_squared(),
        move |x: &Vector, t: f64| x - dvec(&goal.position(t)),
    )
    .with_hessian(|_, _| Matrix::identity(2, 2))
    .with_time_partials(move |x: &Vector, t: f64| {
        let v = dvec(&goal.velocity(t));
        TimePartials {
            value: -(x - dvec(&goal.position(t))).dot(&v),
            grad: -v,
        }
    });
    let mut problem = TimeVaryingProblem::new(2, objective, 1.0)?;
    for (h, rate) in halfspaces.iter().zip(&rates) {
        problem = problem.with_inequality_arc(Arc::new(MovingHalfspace {
            a: dvec(&h.a),
            a_dot: dvec(&rate.a_dot),
            b: h.b,
            b_dot: rate.b_dot,
            t0,
        }));
    }
    for (a, b) in ws.walls() {
        problem = problem.with_inequality(LinearConstraint::new(dvec(&a), b));
    }
    Ok(problem)
}

/// Largest constraint value of `LF(x_c)` at `x`; non-positive means `x`
/// lies in the collision-free local workspace.
pub fn local_workspace_violation(x: &Point, x_c: &Point, ws: &Workspace) -> Result<f64> {
    let obstacles = local_workspace_halfspaces(x_c, ws)?
        .iter()
        .map(|h| h.value(x))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ws.walls().iter().map(|(a, b)| a.dot(x) - b).fold(obstacles, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RobotConfig {
    pub start: [f64; 2],
    pub alpha: f64,
    pub schedules: BarrierSchedules,
    pub tau: f64,
    pub t_end: f64,
}

impl RobotConfig {
    /// Static-goal run: `α = 5`, `c(t) = e^{0.001 t}`.
    pub fn paper_static(start: [f64; 2]) -> Self {
        Self {
            start,
            alpha: 5.0,
            schedules: BarrierSchedules::new(1.0, 0.001, 0.0, 0.0).expect("valid schedules"),
            tau: 0.1,
            t_end: 3000.0,
        }
    }

    /// Moving-target run over one period: `α = 30`, `c(t) = 100 e^{0.001 t}`.
    pub fn paper_moving() -> Self {
        Self {
            start: [15.0, 0.0],
            alpha: 30.0,
            schedules: BarrierSchedules::new(100.0, 0.001, 0.0, 0.0).expect("valid schedules"),
            tau: 0.02,
            t_end: 2000.0,
        }
    }
}

/// Start points of the static-goal preset.
pub const STATIC_STARTS: [[f64; 2]; 4] = [[-16.0, -14.0], [15.0, -13.0], [-14.0, 16.0], [16.0, 15.0]];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobotSample {
    pub t: f64,
    pub x_c: [f64; 2],
    pub x_hat: [f64; 2],
    pub x_d: [f64; 2],
    pub margin: f64,
    /// Largest constraint value of `LF(x_c)` at `x̂`.
    pub violation: f64,
    pub grad_norm: f64,
    pub c: f64,
}

impl RobotSample {
    pub fn goal_error(&self) -> f64 {
        ((self.x_c[0] - self.x_d[0]).powi(2) + (self.x_c[1] - self.x_d[1]).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RobotTrajectory {
    pub samples: Vec<RobotSample>,
}

/// Co-integrates the controller and the estimator with one shared Euler clock.
///
/// Each step evaluates the barrier field of the estimator at the current
/// geometry, advances `x_c` with the current `x̂`, and pulls the new `x̂` back
/// toward the old one until it is strictly inside `LF(x_c)` again.
pub fn robot_simulate(ws: &Workspace, config: &RobotConfig) -> Result<RobotTrajectory> {
    ws.validate()?;
    config.schedules.validate()?;
    let guard_cfg = IntegratorConfig::new(config.tau, config.t_end);
    guard_cfg.validate()?;
    if !(config.alpha > 0.0) {
        return Err(Error::InvalidInput(format!(
            "alpha must be positive, got {}",
            config.alpha
        )));
    }
    let mut x_c = Point::new(config.start[0], config.start[1]);
    check_clear(&x_c, ws)?;
    let mut x_hat = x_c;
    let steps = guard_cfg.steps();
    let mut traj = RobotTrajectory {
        samples: Vec::with_capacity(steps + 1),
    };
    for k in 0..=steps {
        let t = k as f64 * config.tau;
        let problem = build_projected_goal_problem(&x_c, &x_hat, ws, t)?;
        let bundle = problem.bundle(&dvec(&x_hat), t)?;
        let sched = config.schedules.eval(t);
        let phi = eval_phi(&bundle, sched.c, sched.s)?;
        traj.samples.push(RobotSample {
            t,
            x_c: [x_c.x, x_c.y],
            x_hat: [x_hat.x, x_hat.y],
            x_d: ws.goal.position(t).into(),
            margin: ws.collision_margin(&x_c),
            violation: local_workspace_violation(&x_hat, &x_c, ws)?,
            grad_norm: phi.grad.norm(),
            c: sched.c,
        });
        if k == steps {
            break;
        }
        let field = barrier_field(&phi, sched.c_dot, sched.s_dot, config.alpha)?;
        let candidate = dvec(&x_hat) + field * config.tau;
        let t_next = t + config.tau;
        let next_c = x_c - (x_c - x_hat) * (ws.gain * config.tau);
        let margin = ws.collision_margin(&next_c);
        if !(margin > 0.0) {
            return Err(Error::Collision { t: t_next, margin });
        }
        let next_problem = build_projected_goal_problem(&next_c, &x_hat, ws, t_next)?;
        let guarded = feasibility_guard(
            &dvec(&x_hat),
            &candidate,
            &next_problem,
            &config.schedules,
            t_next,
            &guard_cfg,
        )?;
        if guarded.shrinks > 0 {
            debug!("robot: estimate pulled back {} times at t = {t_next}", guarded.shrinks);
        }
        x_c = next_c;
        x_hat = Point::new(guarded.state[0], guarded.state[1]);
    }
    Ok(traj)
}
