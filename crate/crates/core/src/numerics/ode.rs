//! Explicit Runge–Kutta integration: classical RK4 with a fixed step and the
//! Dormand–Prince 5(4) embedded pair with step-size control and dense output.
//!
//! Output sampling never alters the internal step sequence: requested output
//! times are filled in from the step interpolant, so the same configuration
//! produces the same accepted steps whatever `dt_out` is.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Rk4Fixed,
    Rk45Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    /// Initial step for the adaptive method; the step for `Rk4Fixed`.
    pub h_init: f64,
    pub h_min: f64,
    /// `None` means one hundredth of the integration horizon.
    pub h_max: Option<f64>,
    pub max_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::Rk45Adaptive,
            rtol: 1e-8,
            atol: 1e-10,
            h_init: 1e-3,
            h_min: 1e-12,
            h_max: None,
            max_steps: 1_000_000,
        }
    }
}

impl SolverConfig {
    pub fn rk4(step: f64) -> Self {
        Self {
            method: Method::Rk4Fixed,
            h_init: step,
            h_min: step.min(1e-12),
            ..Self::default()
        }
    }

    pub fn with_tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::Argument("rtol and atol must be positive".into()));
        }
        if !(self.h_min > 0.0 && self.h_min <= self.h_init) {
            return Err(Error::Argument(format!(
                "step bounds must satisfy 0 < h_min <= h_init (got {} and {})",
                self.h_min, self.h_init
            )));
        }
        if let Some(h_max) = self.h_max {
            if self.h_init > h_max {
                return Err(Error::Argument(format!(
                    "h_init {} exceeds h_max {h_max}",
                    self.h_init
                )));
            }
        }
        if self.max_steps == 0 {
            return Err(Error::Argument("max_steps must be positive".into()));
        }
        Ok(())
    }

    fn h_max_for(&self, horizon: f64) -> f64 {
        self.h_max.unwrap_or(horizon / 100.0).max(self.h_min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// True when samples were produced by interpolation between steps.
    pub dense: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<(f64, &[f64])> {
        self.times
            .last()
            .zip(self.states.last())
            .map(|(t, x)| (*t, x.as_slice()))
    }
}

// Dormand–Prince tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Interpolant over one accepted step `[t_old, t_old + h]`.
enum Interpolant<'a> {
    /// Dormand–Prince continuous extension coefficients.
    Dopri { cont: &'a [Vec<f64>; 5] },
    /// Cubic Hermite from endpoint values and slopes.
    Hermite {
        x0: &'a [f64],
        x1: &'a [f64],
        f0: &'a [f64],
        f1: &'a [f64],
    },
}

struct Step<'a> {
    t_old: f64,
    h: f64,
    x_new: &'a [f64],
    interp: Interpolant<'a>,
}

impl Step<'_> {
    fn eval(&self, t: f64, out: &mut [f64]) {
        let theta = if self.h == 0.0 { 1.0 } else { (t - self.t_old) / self.h };
        let theta1 = 1.0 - theta;
        match &self.interp {
            Interpolant::Dopri { cont } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = cont[0][i]
                        + theta
                            * (cont[1][i]
                                + theta1 * (cont[2][i] + theta * (cont[3][i] + theta1 * cont[4][i])));
                }
            }
            Interpolant::Hermite { x0, x1, f0, f1 } => {
                let h = self.h;
                let h00 = (1.0 + 2.0 * theta) * theta1 * theta1;
                let h10 = theta * theta1 * theta1;
                let h01 = theta * theta * (3.0 - 2.0 * theta);
                let h11 = -theta * theta * theta1;
                for (i, o) in out.iter_mut().enumerate() {
                    *o = h00 * x0[i] + h10 * h * f0[i] + h01 * x1[i] + h11 * h * f1[i];
                }
            }
        }
    }
}

fn scaled_error(err: &[f64], x_old: &[f64], x_new: &[f64], rtol: f64, atol: f64) -> f64 {
    let n = err.len().max(1) as f64;
    let sum: f64 = err
        .iter()
        .zip(x_old.iter().zip(x_new))
        .map(|(e, (a, b))| {
            let sc = atol + rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

/// Runs the integrator from `t0` to `t1`, calling `on_step` after every
/// accepted step. The adaptive method never steps across a time in `stops`
/// (kinks of the right-hand side, where its error estimate is unreliable);
/// the fixed-step method ignores them.
fn drive<F, S>(
    mut field: F,
    t0: f64,
    x0: &[f64],
    t1: f64,
    stops: &[f64],
    cfg: &SolverConfig,
    mut on_step: S,
) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    S: FnMut(&Step<'_>),
{
    cfg.validate()?;
    if !(t1 >= t0) {
        return Err(Error::Argument(format!("t1 = {t1} precedes t0 = {t0}")));
    }
    if t1 == t0 {
        return Ok(());
    }
    let n = x0.len();
    let horizon = t1 - t0;
    let mut t = t0;
    let mut x = x0.to_vec();
    let mut x_new = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
    let mut steps = 0usize;

    match cfg.method {
        Method::Rk4Fixed => {
            let h_fixed = cfg.h_init;
            field(t, &x, &mut k[0])?;
            while t < t1 {
                if steps >= cfg.max_steps {
                    return Err(Error::Budget { max_steps: cfg.max_steps, t });
                }
                let mut h = h_fixed;
                if t + 1.0001 * h >= t1 {
                    h = t1 - t;
                }
                let [k1, k2, k3, k4, kn, ..] = &mut k;
                for i in 0..n {
                    tmp[i] = x[i] + 0.5 * h * k1[i];
                }
                field(t + 0.5 * h, &tmp, k2)?;
                for i in 0..n {
                    tmp[i] = x[i] + 0.5 * h * k2[i];
                }
                field(t + 0.5 * h, &tmp, k3)?;
                for i in 0..n {
                    tmp[i] = x[i] + h * k3[i];
                }
                field(t + h, &tmp, k4)?;
                for i in 0..n {
                    x_new[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                // Use the step count rather than accumulation to keep t exact.
                let t_new = if h == h_fixed { t0 + (steps + 1) as f64 * h_fixed } else { t1 };
                let t_new = t_new.min(t1);
                field(t_new, &x_new, kn)?;
                on_step(&Step {
                    t_old: t,
                    h: t_new - t,
                    x_new: &x_new,
                    interp: Interpolant::Hermite { x0: &x, x1: &x_new, f0: k1, f1: kn },
                });
                std::mem::swap(k1, kn);
                std::mem::swap(&mut x, &mut x_new);
                t = t_new;
                steps += 1;
            }
        }
        Method::Rk45Adaptive => {
            let h_max = cfg.h_max_for(horizon);
            let mut h = cfg.h_init.min(h_max);
            let mut cont: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
            let mut err = vec![0.0; n];
            field(t, &x, &mut k[0])?;
            let mut rejected_last = false;
            let mut stops: Vec<f64> = stops.iter().copied().filter(|&s| s > t0 && s < t1).collect();
            stops.sort_by(f64::total_cmp);
            stops.dedup();
            let mut stops = stops.into_iter().chain(std::iter::once(t1)).peekable();
            while t < t1 {
                if steps >= cfg.max_steps {
                    return Err(Error::Budget { max_steps: cfg.max_steps, t });
                }
                while stops.peek().is_some_and(|&s| s <= t) {
                    stops.next();
                }
                let target = *stops.peek().expect("t1 is the final stop");
                let last = t + 1.01 * h >= target;
                if last {
                    h = target - t;
                }
                let [k1, k2, k3, k4, k5, k6, k7] = &mut k;
                for i in 0..n {
                    tmp[i] = x[i] + h * A21 * k1[i];
                }
                field(t + C2 * h, &tmp, k2)?;
                for i in 0..n {
                    tmp[i] = x[i] + h * (A31 * k1[i] + A32 * k2[i]);
                }
                field(t + C3 * h, &tmp, k3)?;
                for i in 0..n {
                    tmp[i] = x[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
                }
                field(t + C4 * h, &tmp, k4)?;
                for i in 0..n {
                    tmp[i] = x[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
                }
                field(t + C5 * h, &tmp, k5)?;
                for i in 0..n {
                    tmp[i] = x[i]
                        + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
                }
                field(t + h, &tmp, k6)?;
                for i in 0..n {
                    x_new[i] = x[i]
                        + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
                }
                let t_new = if last { target } else { t + h };
                field(t_new, &x_new, k7)?;
                for i in 0..n {
                    err[i] = h
                        * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                }
                let e = scaled_error(&err, &x, &x_new, cfg.rtol, cfg.atol);
                steps += 1;
                if e <= 1.0 {
                    for i in 0..n {
                        let ydiff = x_new[i] - x[i];
                        let bspl = h * k1[i] - ydiff;
                        cont[0][i] = x[i];
                        cont[1][i] = ydiff;
                        cont[2][i] = bspl;
                        cont[3][i] = ydiff - h * k7[i] - bspl;
                        cont[4][i] = h
                            * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i]
                                + D7 * k7[i]);
                    }
                    on_step(&Step {
                        t_old: t,
                        h: t_new - t,
                        x_new: &x_new,
                        interp: Interpolant::Dopri { cont: &cont },
                    });
                    std::mem::swap(k1, k7);
                    std::mem::swap(&mut x, &mut x_new);
                    t = t_new;
                    let mut fac = if e == 0.0 { 5.0 } else { 0.9 * e.powf(-0.2) };
                    fac = fac.clamp(0.2, 5.0);
                    if rejected_last {
                        fac = fac.min(1.0);
                    }
                    rejected_last = false;
                    h = (h * fac).min(h_max);
                } else {
                    let fac = if e.is_finite() { (0.9 * e.powf(-0.2)).max(0.2) } else { 0.2 };
                    h *= fac.min(1.0);
                    rejected_last = true;
                    if h < cfg.h_min {
                        return Err(Error::Stiffness { t, h });
                    }
                }
            }
        }
    }
    Ok(())
}

/// Integrates `ẋ = field(t, x)` from `t0` to `t1` and returns every accepted
/// step, starting with the initial state.
pub fn integrate_ivp<F>(field: F, t0: f64, x0: &[f64], t1: f64, cfg: &SolverConfig) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    integrate_ivp_with_stops(field, t0, x0, t1, &[], cfg)
}

/// [`integrate_ivp`] for a field with kinks at `stops`, which the adaptive
/// method lands on exactly instead of stepping over.
pub fn integrate_ivp_with_stops<F>(
    field: F,
    t0: f64,
    x0: &[f64],
    t1: f64,
    stops: &[f64],
    cfg: &SolverConfig,
) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let mut traj = Trajectory {
        times: vec![t0],
        states: vec![x0.to_vec()],
        dense: false,
    };
    drive(field, t0, x0, t1, stops, cfg, |step| {
        traj.times.push(step.t_old + step.h);
        traj.states.push(step.x_new.to_vec());
    })?;
    Ok(traj)
}

/// Integrates from `t0` and reports the state at each of `outputs`, which
/// must be non-decreasing and lie in `[t0, ∞)`. The run ends at the last
/// output time.
pub fn integrate_sampled<F>(
    field: F,
    t0: f64,
    x0: &[f64],
    outputs: &[f64],
    cfg: &SolverConfig,
) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    integrate_sampled_with_stops(field, t0, x0, outputs, &[], cfg)
}

/// [`integrate_sampled`] with kinks of the field at `stops`.
pub fn integrate_sampled_with_stops<F>(
    field: F,
    t0: f64,
    x0: &[f64],
    outputs: &[f64],
    stops: &[f64],
    cfg: &SolverConfig,
) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    if outputs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Argument("output times must be strictly increasing".into()));
    }
    let Some(&t1) = outputs.last() else {
        return Ok(Trajectory { times: vec![], states: vec![], dense: true });
    };
    if outputs[0] < t0 {
        return Err(Error::Argument(format!(
            "output time {} precedes t0 = {t0}",
            outputs[0]
        )));
    }
    let n = x0.len();
    let mut traj = Trajectory {
        times: Vec::with_capacity(outputs.len()),
        states: Vec::with_capacity(outputs.len()),
        dense: true,
    };
    let mut next = 0;
    while next < outputs.len() && outputs[next] == t0 {
        traj.times.push(t0);
        traj.states.push(x0.to_vec());
        next += 1;
    }
    let mut buf = vec![0.0; n];
    drive(field, t0, x0, t1, stops, cfg, |step| {
        let t_end = step.t_old + step.h;
        while next < outputs.len() && outputs[next] <= t_end {
            let t = outputs[next];
            if t == t_end {
                buf.copy_from_slice(step.x_new);
            } else {
                step.eval(t, &mut buf);
            }
            traj.times.push(t);
            traj.states.push(buf.clone());
            next += 1;
        }
    })?;
    Ok(traj)
}

/// Uniform output grid `t0, t0 + dt, …` ending exactly at `t1`.
pub fn uniform_grid(t0: f64, t1: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) || !(t1 >= t0) {
        return Err(Error::Argument(format!("invalid grid [{t0}, {t1}] with step {dt}")));
    }
    let n = ((t1 - t0) / dt - 1e-9).ceil().max(0.0) as usize;
    let mut grid: Vec<f64> = (0..n).map(|i| t0 + i as f64 * dt).collect();
    grid.push(t1);
    if grid.len() >= 2 && grid[grid.len() - 2] >= t1 {
        grid.remove(grid.len() - 2);
    }
    Ok(grid)
}

/// `count` evenly spaced points covering `[t0, t1]` inclusive.
pub fn linspace(t0: f64, t1: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![t0],
        _ => {
            let step = (t1 - t0) / (count - 1) as f64;
            let mut v: Vec<f64> = (0..count).map(|i| t0 + i as f64 * step).collect();
            v[count - 1] = t1;
            v
        }
    }
}
