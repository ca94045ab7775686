//! Dense linear algebra and ODE integration.

pub mod linalg;
pub mod ode;
pub mod transition;

pub use linalg::{equilibrium, invert, solve_linear, Matrix};
pub use ode::{
    integrate_ivp, integrate_ivp_with_stops, integrate_sampled, integrate_sampled_with_stops, Method, SolverConfig,
    Trajectory,
};
pub use transition::{pullback_solution, transition_operator, PullbackSolution, TransitionMatrix};
