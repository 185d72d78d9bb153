//! Built-in experiments: a time-varying quadratic program, an ℓ1-regularized
//! least-squares comparison of two barrier methods, and disk-robot navigation
//! toward a projected goal.

pub mod l1ls;
pub mod robot;
pub mod tvqp;

pub use l1ls::{
    build_l1ls, relative_gap, run_ipm_comparison, ConvergenceReport, IpmConfig, IpmMethod, L1lsInstance, L1lsParams,
};
pub use robot::{
    build_projected_goal_problem, eval_workspace_rates, local_workspace_halfspaces, power_distance, robot_simulate,
    GoalPath, Halfspace, Obstacle, RobotConfig, RobotTrajectory, Workspace,
};
pub use tvqp::{build_tvqp, TvqpScenario};
