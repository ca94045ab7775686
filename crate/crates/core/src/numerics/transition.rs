use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::linalg::{norm_inf, Matrix};
use crate::numerics::ode::{integrate_ivp_with_stops, linspace, SolverConfig};
use crate::stability::StabilityCertificate;
use crate::system::CompartmentalSystem;

/// Horizon used for the pullback integral when none is given.
pub const DEFAULT_PULLBACK_HORIZON: f64 = 200.0;

/// `Φ(t1, t0)` of the homogeneous system `ẋ = B(t) x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub t0: f64,
    pub t1: f64,
    pub phi: Matrix,
}

/// Integrates `Ẋ = B(t) X` from `X(t0) = I`; the columns are `d`
/// simultaneous homogeneous solutions.
pub fn transition_operator(
    system: &CompartmentalSystem,
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
) -> Result<TransitionMatrix> {
    let domain = system.domain();
    domain.check(t0)?;
    domain.check(t1)?;
    if t1 < t0 {
        return Err(Error::Argument(format!("t1 = {t1} precedes t0 = {t0}")));
    }
    let d = system.dimension();
    let mut b = Matrix::zeros(d, d);
    let mut s = vec![0.0; d];
    let mut scratch = Vec::new();
    let field = |t: f64, x: &[f64], dx: &mut [f64]| -> Result<()> {
        system.evaluate_into(t, &mut b, &mut s, &mut scratch)?;
        // Row-major d×d state: dX = B X.
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += b[(i, k)] * x[k * d + j];
                }
                dx[i * d + j] = acc;
            }
        }
        Ok(())
    };
    let identity = Matrix::identity(d);
    let traj = integrate_ivp_with_stops(field, t0, identity.as_slice(), t1, &system.breakpoints(), cfg)?;
    let (_, last) = traj.last().expect("trajectory holds the initial state");
    Ok(TransitionMatrix {
        t0,
        t1,
        phi: Matrix::from_row_major(d, d, last.to_vec()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PullbackSolution {
    pub t: f64,
    pub horizon: f64,
    pub value: Vec<f64>,
    /// `e^{-γH} · sup‖s‖ / γ`, available only with a granted certificate.
    pub truncation_bound: Option<f64>,
    pub warning: Option<String>,
}

/// Approximates the pullback attracting solution
/// `ν(t) = ∫_{-∞}^t Φ(t,u) s(u) du` by integrating the full inhomogeneous
/// system from the zero state at `t - H`.
pub fn pullback_solution(
    system: &CompartmentalSystem,
    t: f64,
    horizon: Option<f64>,
    certificate: Option<&StabilityCertificate>,
    cfg: &SolverConfig,
) -> Result<PullbackSolution> {
    let h = horizon.unwrap_or(DEFAULT_PULLBACK_HORIZON);
    if !(h > 0.0) {
        return Err(Error::Argument(format!("pullback horizon must be positive, got {h}")));
    }
    let start = t - h;
    let domain = system.domain();
    domain.check(t)?;
    if domain.tau.is_finite() {
        domain.check(start)?;
    }
    let d = system.dimension();
    let traj = integrate_ivp_with_stops(system.field(), start, &vec![0.0; d], t, &system.breakpoints(), cfg)?;
    let value = traj.last().expect("non-empty trajectory").1.to_vec();

    let gamma = certificate.filter(|c| c.granted).and_then(|c| c.gamma);
    let (truncation_bound, warning) = match gamma {
        Some(gamma) => {
            let mut sup_s = 0.0f64;
            for u in linspace(start, t, 512) {
                let (_, s) = system.evaluate(u)?;
                sup_s = sup_s.max(norm_inf(&s));
            }
            (Some((-gamma * h).exp() * sup_s / gamma), None)
        }
        None => (
            None,
            Some(format!(
                "no stability certificate: truncation error of the {h}-unit pullback horizon is not quantified"
            )),
        ),
    };
    Ok(PullbackSolution { t, horizon: h, value, truncation_bound, warning })
}
