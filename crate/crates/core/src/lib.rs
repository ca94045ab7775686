//! Mean ages and transit times of mass in linear nonautonomous
//! compartmental systems `ẋ = B(t) x + s(t)`.
//!
//! * [`system`] holds the model and its JSON definition format.
//! * [`stability`] checks compartmental structure and certifies exponential
//!   stability from block diagonal dominance.
//! * [`numerics`] provides the linear algebra and Runge–Kutta integrators.
//! * [`ages`] integrates the mean age system alongside the masses and
//!   evaluates transit times and mean ages, including the equilibrium
//!   formulas for constant systems.
//! * [`oracles`] gives closed-form and quadrature reference solutions.
//! * [`casa`] builds the nine-pool terrestrial carbon scenario.

pub mod ages;
pub mod casa;
pub mod error;
pub mod numerics;
pub mod oracles;
pub mod stability;
pub mod system;

pub use error::{Error, Result};
pub use numerics::linalg::Matrix;
pub use system::{CompartmentalSystem, ScalarForcing, SystemDefinition, TimeDomain};
