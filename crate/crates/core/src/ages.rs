//! Mean ages of mass per pool, the transit time (mean age of the outflux)
//! and the system mean age.
//!
//! Along a positive solution `x(t)` the pool mean ages solve the linear
//! nonautonomous system `ȧ = A(t, x(t)) ā + 1` with
//!
//! ```text
//! A_ij = b_ij x_j / x_i                      (i ≠ j)
//! A_ii = (-s_i - Σ_{j≠i} b_ij x_j) / x_i
//! ```
//!
//! Masses and ages are integrated together as a `2d`-dimensional skew
//! product: the mass equation does not see the ages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::linalg::{Lu, Matrix};
use crate::numerics::ode::{integrate_sampled_with_stops, SolverConfig};
use crate::system::CompartmentalSystem;

/// Pool masses at or below this value make the mean-age field undefined.
pub const MASS_FLOOR: f64 = 1e-12;

/// Column sums within this relative distance of zero count as no outflow.
const OUTFLOW_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeState {
    pub t: f64,
    pub x: Vec<f64>,
    pub abar: Vec<f64>,
}

impl AgeState {
    pub fn new(t: f64, x: Vec<f64>, abar: Vec<f64>) -> Self {
        Self { t, x, abar }
    }
}

fn check_masses(x: &[f64], t: f64) -> Result<()> {
    match x.iter().position(|&v| !(v > MASS_FLOOR)) {
        Some(pool) => Err(Error::DegenerateMass { pool, mass: x[pool], t }),
        None => Ok(()),
    }
}

/// `g(t, x, ā)` written into `out`, from already evaluated `B(t)`, `s(t)`.
fn age_field_into(b: &Matrix, s: &[f64], x: &[f64], abar: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
    check_masses(x, t)?;
    let d = x.len();
    for i in 0..d {
        let row = b.row(i);
        let mut acc = -abar[i] * s[i];
        for j in 0..d {
            if j != i {
                acc += (abar[j] - abar[i]) * row[j] * x[j];
            }
        }
        out[i] = 1.0 + acc / x[i];
    }
    Ok(())
}

/// Right-hand side of the mean age system at `state`.
pub fn mean_age_rhs(system: &CompartmentalSystem, state: &AgeState) -> Result<Vec<f64>> {
    let (b, s) = system.evaluate(state.t)?;
    let mut out = vec![0.0; system.dimension()];
    age_field_into(&b, &s, &state.x, &state.abar, state.t, &mut out)?;
    Ok(out)
}

/// The matrix `A(t, x)` of the mean age system.
pub fn mean_age_matrix(system: &CompartmentalSystem, t: f64, x: &[f64]) -> Result<Matrix> {
    let (b, s) = system.evaluate(t)?;
    age_matrix_from(&b, &s, x, t)
}

fn age_matrix_from(b: &Matrix, s: &[f64], x: &[f64], t: f64) -> Result<Matrix> {
    check_masses(x, t)?;
    let d = x.len();
    let mut a = Matrix::zeros(d, d);
    for i in 0..d {
        let mut inflow = 0.0;
        for j in 0..d {
            if j != i {
                let v = b[(i, j)] * x[j];
                a[(i, j)] = v / x[i];
                inflow += v;
            }
        }
        a[(i, i)] = (-s[i] - inflow) / x[i];
    }
    Ok(a)
}

/// Column sums of `b` with near-zero sums snapped to exactly zero.
fn outflow_rates(b: &Matrix) -> Vec<f64> {
    (0..b.cols())
        .map(|j| {
            let col = b.column(j);
            let sum: f64 = col.iter().sum();
            let scale = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if sum.abs() <= OUTFLOW_SLACK * scale {
                0.0
            } else {
                sum
            }
        })
        .collect()
}

fn transit_time_from(b: &Matrix, x: &[f64], abar: &[f64]) -> Result<f64> {
    let rates = outflow_rates(b);
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&c, &xi), &ai) in rates.iter().zip(x).zip(abar) {
        if c != 0.0 {
            num += ai * xi * c;
            den += xi * c;
        }
    }
    if den == 0.0 {
        return Err(Error::NoOutflow);
    }
    Ok(num / den)
}

/// Transit time `R_t`: mean age of the mass leaving the system at `state.t`,
/// weighting each pool by its outflux `x_i · Σ_j b_ji`.
pub fn transit_time_at(system: &CompartmentalSystem, state: &AgeState) -> Result<f64> {
    let (b, _) = system.evaluate(state.t)?;
    transit_time_from(&b, &state.x, &state.abar)
}

/// Mass-weighted mean age `M_t` of everything in the system.
pub fn mean_age_at(state: &AgeState) -> Result<f64> {
    let total: f64 = state.x.iter().sum();
    if total == 0.0 {
        return Err(Error::ZeroMass);
    }
    let weighted: f64 = state.x.iter().zip(&state.abar).map(|(x, a)| x * a).sum();
    Ok(weighted / total)
}

fn positive_equilibrium(lu: &Lu, s: &[f64]) -> Result<Vec<f64>> {
    let neg: Vec<f64> = s.iter().map(|v| -v).collect();
    let x = lu.solve(&neg)?;
    if let Some(pool) = x.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::NonPositiveEquilibrium { pool, value: x[pool] });
    }
    Ok(x)
}

/// Equilibrium mean ages `ā* = -(X*)⁻¹ B⁻¹ X* 1` of a constant system.
pub fn equilibrium_mean_ages(b: &Matrix, s: &[f64]) -> Result<Vec<f64>> {
    let lu = Lu::factor(b)?;
    let x_star = positive_equilibrium(&lu, s)?;
    let y = lu.solve(&x_star)?;
    Ok(y.iter().zip(&x_star).map(|(yi, xi)| -yi / xi).collect())
}

/// Equilibrium quantities of a constant compartmental system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutonomousSummary {
    pub x_star: Vec<f64>,
    pub abar_star: Vec<f64>,
    /// Expected remaining time in the system for mass entering pool `i`.
    pub r: Vec<f64>,
    /// `p[(i, j)]`: probability that mass leaving pool `i` goes to pool `j`.
    pub p: Matrix,
    pub beta: Vec<f64>,
    pub eta: Vec<f64>,
    pub transit_time: f64,
    pub mean_age: f64,
    pub turnover_time: f64,
}

const CONSISTENCY_RTOL: f64 = 1e-9;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= CONSISTENCY_RTOL * a.abs().max(b.abs()).max(1.0)
}

pub fn autonomous_summary(b: &Matrix, s: &[f64]) -> Result<AutonomousSummary> {
    let d = s.len();
    if b.rows() != d || b.cols() != d {
        return Err(Error::Argument("matrix and input dimensions differ".into()));
    }
    let total_input: f64 = s.iter().sum();
    if !(total_input > 0.0) {
        return Err(Error::Argument("input vector must be nonzero".into()));
    }
    let lu = Lu::factor(b)?;
    let x_star = positive_equilibrium(&lu, s)?;
    let total_mass: f64 = x_star.iter().sum();

    // rᵀ = -1ᵀ B⁻¹, i.e. Bᵀ r = -1.
    let r = Lu::factor(&b.transpose())?.solve(&vec![-1.0; d])?;
    let y = lu.solve(&x_star)?;
    let abar_star: Vec<f64> = y.iter().zip(&x_star).map(|(yi, xi)| -yi / xi).collect();

    let mut p = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            if i != j {
                p[(i, j)] = -b[(j, i)] / b[(i, i)];
            }
        }
    }
    let beta: Vec<f64> = s.iter().map(|v| v / total_input).collect();
    let eta: Vec<f64> = x_star.iter().map(|v| v / total_mass).collect();
    let dot = |u: &[f64], v: &[f64]| -> f64 { u.iter().zip(v).map(|(a, b)| a * b).sum() };
    let transit_time = dot(&r, &beta);
    let mean_age = dot(&r, &eta);
    let turnover_time = total_mass / total_input;

    if !close(transit_time, turnover_time) {
        return Err(Error::Inconsistent(format!(
            "transit time {transit_time} differs from turnover time {turnover_time}"
        )));
    }
    let mean_from_ages = dot(&eta, &abar_star);
    if !close(mean_age, mean_from_ages) {
        return Err(Error::Inconsistent(format!(
            "mean age {mean_age} differs from Σ η ā* = {mean_from_ages}"
        )));
    }
    Ok(AutonomousSummary {
        x_star,
        abar_star,
        r,
        p,
        beta,
        eta,
        transit_time,
        mean_age,
        turnover_time,
    })
}

/// `(R, M)` of the constant system `(B, s)` at equilibrium, from a single
/// factorization.
pub fn frozen_transit_and_age(b: &Matrix, s: &[f64]) -> Result<(f64, f64)> {
    let total_input: f64 = s.iter().sum();
    if !(total_input > 0.0) {
        return Err(Error::Argument("input vector must be nonzero".into()));
    }
    let lu = Lu::factor(b)?;
    let x_star = positive_equilibrium(&lu, s)?;
    let total_mass: f64 = x_star.iter().sum();
    let y = lu.solve(&x_star)?;
    let mean_age = -y.iter().sum::<f64>() / total_mass;
    Ok((total_mass / total_input, mean_age))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub abar: Vec<f64>,
    pub total: f64,
    /// `None` when the system has no outflow at `t`.
    pub transit_time: Option<f64>,
    pub mean_age: f64,
    /// Equilibrium values of the system frozen at `t`; `None` when the
    /// frozen system has no positive equilibrium.
    pub frozen_transit_time: Option<f64>,
    pub frozen_mean_age: Option<f64>,
}

impl AgeSample {
    pub fn state(&self) -> AgeState {
        AgeState::new(self.t, self.x.clone(), self.abar.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeTimeSeries {
    pub samples: Vec<AgeSample>,
}

impl AgeTimeSeries {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn totals(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.total).collect()
    }

    pub fn transit_times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.transit_time.unwrap_or(f64::NAN)).collect()
    }

    pub fn mean_ages(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.mean_age).collect()
    }

    pub fn frozen_transit_times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.frozen_transit_time.unwrap_or(f64::NAN)).collect()
    }

    pub fn frozen_mean_ages(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.frozen_mean_age.unwrap_or(f64::NAN)).collect()
    }

    pub fn first(&self) -> Option<&AgeSample> {
        self.samples.first()
    }

    pub fn last(&self) -> Option<&AgeSample> {
        self.samples.last()
    }
}

/// Integrates masses and mean ages together from `t0` and reports them at
/// each of `outputs`, along with `R_t`, `M_t` and the frozen-parameter
/// equilibrium values. `abar0 = None` starts from the equilibrium mean ages
/// of the system frozen at `t0`.
pub fn simulate_with_ages(
    system: &CompartmentalSystem,
    t0: f64,
    x0: &[f64],
    abar0: Option<&[f64]>,
    outputs: &[f64],
    cfg: &SolverConfig,
) -> Result<AgeTimeSeries> {
    let d = system.dimension();
    if x0.len() != d {
        return Err(Error::Argument(format!("x0 has length {}, expected {d}", x0.len())));
    }
    system.domain().check(t0)?;
    check_masses(x0, t0)?;
    let abar0 = match abar0 {
        Some(a) if a.len() == d => a.to_vec(),
        Some(a) => return Err(Error::Argument(format!("abar0 has length {}, expected {d}", a.len()))),
        None => {
            let (b, s) = system.evaluate(t0)?;
            equilibrium_mean_ages(&b, &s)?
        }
    };

    let mut state0 = Vec::with_capacity(2 * d);
    state0.extend_from_slice(x0);
    state0.extend_from_slice(&abar0);

    let mut b = Matrix::zeros(d, d);
    let mut s = vec![0.0; d];
    let mut scratch = Vec::new();
    let field = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        system.evaluate_into(t, &mut b, &mut s, &mut scratch)?;
        let (x, abar) = y.split_at(d);
        let (dx, dabar) = dy.split_at_mut(d);
        b.mul_vec_into(x, dx);
        for (o, si) in dx.iter_mut().zip(&s) {
            *o += si;
        }
        age_field_into(&b, &s, x, abar, t, dabar)
    };
    let traj = integrate_sampled_with_stops(field, t0, &state0, outputs, &system.breakpoints(), cfg)?;

    let mut samples = Vec::with_capacity(traj.len());
    for (t, y) in traj.times.iter().zip(&traj.states) {
        let (b, s) = system.evaluate(*t)?;
        let state = AgeState::new(*t, y[..d].to_vec(), y[d..].to_vec());
        let transit_time = match transit_time_from(&b, &state.x, &state.abar) {
            Ok(r) => Some(r),
            Err(Error::NoOutflow) => None,
            Err(e) => return Err(e),
        };
        let mean_age = mean_age_at(&state)?;
        let frozen = frozen_transit_and_age(&b, &s).ok();
        samples.push(AgeSample {
            t: *t,
            total: state.x.iter().sum(),
            x: state.x,
            abar: state.abar,
            transit_time,
            mean_age,
            frozen_transit_time: frozen.map(|f| f.0),
            frozen_mean_age: frozen.map(|f| f.1),
        });
    }
    Ok(AgeTimeSeries { samples })
}
