use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("time {t} is outside the domain (tau = {tau}, ∞)")]
    Domain { t: f64, tau: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("matrix is numerically singular (pivot {pivot:e} at column {column})")]
    Singular { column: usize, pivot: f64 },

    #[error("step size underflow at t = {t} (h = {h:e})")]
    Stiffness { t: f64, h: f64 },

    #[error("step budget of {max_steps} exhausted at t = {t}")]
    Budget { max_steps: usize, t: f64 },

    /// `pool` is zero-based; messages count pools from 1.
    #[error("pool {} has degenerate mass {mass:e} at t = {t}", .pool + 1)]
    DegenerateMass { pool: usize, mass: f64, t: f64 },

    #[error("no outflow from the system: transit time undefined")]
    NoOutflow,

    #[error("total mass is zero")]
    ZeroMass,

    #[error("quadrature failed to converge on [{a}, {b}]")]
    Quadrature { a: f64, b: f64 },

    #[error("equilibrium is not strictly positive (pool {}: {value:e})", .pool + 1)]
    NonPositiveEquilibrium { pool: usize, value: f64 },

    #[error("internal consistency check failed: {0}")]
    Inconsistent(String),

    #[error("system is not compartmental: {0}")]
    NotCompartmental(String),
}

pub type Result<T> = std::result::Result<T, Error>;
