//! Reference solutions that do not go through the ODE integrators: variation
//! of constants for scalar systems and feedback-free two-pool cascades, and
//! the age density of a scalar system along characteristics.
//!
//! Everything here is evaluated by adaptive Gauss–Kronrod quadrature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const QUAD_TOL: f64 = 1e-10;
const MAX_SUBDIVISIONS: usize = 2000;

// Kronrod 15-point nodes/weights with the embedded 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for k in 0..7 {
        let dx = h * XGK[k];
        let sum = f(c - dx) + f(c + dx);
        kronrod += WGK[k] * sum;
        if k % 2 == 1 {
            gauss += WG[k / 2] * sum;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Globally adaptive: keep bisecting the interval with the largest error
/// estimate until the summed estimate meets the tolerance.
///
/// A single panel's Gauss–Kronrod difference can miss a kink close to an
/// endpoint (both rules err alike), so each half also inherits the
/// discrepancy between its parent and the sum of the two halves.
fn adapt<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    struct Piece {
        a: f64,
        b: f64,
        value: f64,
        err: f64,
    }
    let split = |lo: f64, hi: f64, parent: f64| -> [Piece; 2] {
        let mid = 0.5 * (lo + hi);
        let (lv, le) = gk15(f, lo, mid);
        let (rv, re) = gk15(f, mid, hi);
        let gap = 0.5 * (parent - lv - rv).abs();
        [
            Piece { a: lo, b: mid, value: lv, err: le.max(gap) },
            Piece { a: mid, b: hi, value: rv, err: re.max(gap) },
        ]
    };
    let (whole, _) = gk15(f, a, b);
    let mut pieces: Vec<Piece> = split(a, b, whole).into();
    for _ in 0..MAX_SUBDIVISIONS {
        let total: f64 = pieces.iter().map(|p| p.value).sum();
        let error: f64 = pieces.iter().map(|p| p.err).sum();
        if !total.is_finite() || !error.is_finite() {
            return Err(Error::Quadrature { a, b });
        }
        if error <= tol.max(1e-15 * total.abs()) {
            return Ok(total);
        }
        let worst = (0..pieces.len())
            .max_by(|&i, &j| pieces[i].err.total_cmp(&pieces[j].err))
            .expect("at least one piece");
        let Piece { a: lo, b: hi, value, .. } = pieces.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            return Err(Error::Quadrature { a, b });
        }
        pieces.extend(split(lo, hi, value));
    }
    Err(Error::Quadrature { a, b })
}

/// `∫_a^b f` to absolute tolerance `tol`. Reversed limits flip the sign.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if b < a {
        return integrate(f, b, a, tol).map(|v| -v);
    }
    adapt(&f, a, b, tol)
}

/// [`integrate`] split at the `breaks` that fall inside `(a, b)`, for
/// integrands with known kinks; the tolerance is shared by length.
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64], tol: f64) -> Result<f64> {
    if b < a {
        return integrate_with_breaks(f, b, a, breaks, tol).map(|v| -v);
    }
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|&c| c > a && c < b).collect();
    if cuts.is_empty() {
        return integrate(f, a, b, tol);
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut total = 0.0;
    let mut lo = a;
    for hi in cuts.into_iter().chain(std::iter::once(b)) {
        total += integrate(&f, lo, hi, tol * (hi - lo) / (b - a))?;
        lo = hi;
    }
    Ok(total)
}

/// A scalar rate function, optionally with a known antiderivative so that
/// `∫ b` is exact instead of a nested quadrature, and with the times where it
/// (or the accompanying input) is not smooth.
///
/// Breakpoints matter for tabulated rates: a kink just inside an interval
/// end sits outside every quadrature node and goes unnoticed.
#[derive(Clone, Copy)]
pub struct Rate<'a> {
    value: &'a dyn Fn(f64) -> f64,
    antiderivative: Option<&'a dyn Fn(f64) -> f64>,
    breaks: &'a [f64],
}

impl<'a> Rate<'a> {
    pub fn new(value: &'a dyn Fn(f64) -> f64) -> Self {
        Self { value, antiderivative: None, breaks: &[] }
    }

    pub fn with_antiderivative(value: &'a dyn Fn(f64) -> f64, antiderivative: &'a dyn Fn(f64) -> f64) -> Self {
        Self { value, antiderivative: Some(antiderivative), breaks: &[] }
    }

    /// Kink locations; integrals touching them are split there.
    pub fn with_breakpoints(self, breaks: &'a [f64]) -> Self {
        Self { breaks, ..self }
    }

    pub fn breakpoints(&self) -> &[f64] {
        self.breaks
    }

    pub fn at(&self, t: f64) -> f64 {
        (self.value)(t)
    }

    /// `∫_a^b rate`.
    pub fn integral(&self, a: f64, b: f64) -> Result<f64> {
        match self.antiderivative {
            Some(big) => Ok(big(b) - big(a)),
            None => integrate_with_breaks(self.value, a, b, self.breaks, QUAD_TOL * 1e-2),
        }
    }

    fn require_negative(&self, a: f64, b: f64, name: &str) -> Result<()> {
        for k in 0..=64 {
            let t = a + (b - a) * k as f64 / 64.0;
            if !(self.at(t) < 0.0) {
                return Err(Error::Argument(format!("{name}({t}) = {} is not negative", self.at(t))));
            }
        }
        Ok(())
    }
}

/// Solution of `ẋ = b(t) x + s(t)`, `x(t0) = x0`, by variation of constants:
/// `x(t) = e^{∫_{t0}^t b} x0 + ∫_{t0}^t e^{∫_u^t b} s(u) du`.
pub fn scalar_solution(b: Rate<'_>, s: &dyn Fn(f64) -> f64, t0: f64, x0: f64, t: f64) -> Result<f64> {
    if t < t0 {
        return Err(Error::Argument(format!("t = {t} precedes t0 = {t0}")));
    }
    b.require_negative(t0, t, "b")?;
    let homogeneous = b.integral(t0, t)?.exp() * x0;
    // An inner failure surfaces as NaN, which the outer quadrature rejects.
    let forced = integrate_with_breaks(
        |u| b.integral(u, t).map_or(f64::NAN, |v| v.exp() * s(u)),
        t0,
        t,
        b.breaks,
        QUAD_TOL,
    )?;
    Ok(homogeneous + forced)
}

/// Feedback-free two-pool cascade
/// `ẋ1 = b11 x1`, `ẋ2 = b21 x1 + b22 x2 + s2`: pool 1 decays on its own and
/// drives pool 2, which is then a scalar problem.
pub fn cascade_solution(
    b11: Rate<'_>,
    b21: &dyn Fn(f64) -> f64,
    b22: Rate<'_>,
    s2: &dyn Fn(f64) -> f64,
    t0: f64,
    x0: [f64; 2],
    t: f64,
) -> Result<[f64; 2]> {
    if t < t0 {
        return Err(Error::Argument(format!("t = {t} precedes t0 = {t0}")));
    }
    b11.require_negative(t0, t, "b11")?;
    let x1 = |u: f64| -> Result<f64> { Ok(x0[0] * b11.integral(t0, u)?.exp()) };
    let inhomogeneity = |u: f64| -> f64 {
        let x1u = x1(u).unwrap_or(f64::NAN);
        b21(u) * x1u + s2(u)
    };
    // Kinks of b11 reach pool 2 through x1.
    let mut breaks = b22.breaks.to_vec();
    breaks.extend_from_slice(b11.breaks);
    let x2 = scalar_solution(b22.with_breakpoints(&breaks), &inhomogeneity, t0, x0[1], t)?;
    Ok([x1(t)?, x2])
}

/// Age density `p(a, t)` of a scalar system on an age × time product grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeDensityGrid {
    pub ages: Vec<f64>,
    pub times: Vec<f64>,
    /// `values[k][m]` is the density at `times[k]`, `ages[m]`.
    pub values: Vec<Vec<f64>>,
}

impl AgeDensityGrid {
    pub fn at_time(&self, t: f64) -> Option<&[f64]> {
        self.times.iter().position(|&x| x == t).map(|k| self.values[k].as_slice())
    }
}

/// Solves the scalar McKendrick–von Förster problem
/// `∂p/∂t + ∂p/∂a = b(t) p`, `p(0, t) = s(t)`, `p(a, t0) = p0(a)` along
/// characteristics. Ages up to `t - t0` are fed by the boundary,
/// `p(a, t) = s(t - a) e^{∫_{t-a}^t b}`; older mass comes from the initial
/// density, `p(a, t) = p0(a - (t - t0)) e^{∫_{t0}^t b}`.
pub fn age_density_1d(
    b: Rate<'_>,
    s: &dyn Fn(f64) -> f64,
    p0: &dyn Fn(f64) -> f64,
    t0: f64,
    times: &[f64],
    ages: &[f64],
) -> Result<AgeDensityGrid> {
    if ages.windows(2).any(|w| !(w[1] > w[0])) || ages.first().is_some_and(|&a| a < 0.0) {
        return Err(Error::Argument("ages must be nonnegative and strictly increasing".into()));
    }
    let mut values = Vec::with_capacity(times.len());
    for &t in times {
        if t < t0 {
            return Err(Error::Argument(format!("t = {t} precedes t0 = {t0}")));
        }
        let elapsed = t - t0;
        let survival_from_start = b.integral(t0, t)?.exp();
        let row = ages
            .iter()
            .map(|&a| {
                if a <= elapsed {
                    Ok(s(t - a) * b.integral(t - a, t)?.exp())
                } else {
                    Ok(p0(a - elapsed) * survival_from_start)
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        values.push(row);
    }
    Ok(AgeDensityGrid {
        ages: ages.to_vec(),
        times: times.to_vec(),
        values,
    })
}

/// Mass `∫ p da` and mean age `∫ a p da / ∫ p da` at `t`, by the trapezoid
/// rule on the grid's ages.
pub fn density_moments(grid: &AgeDensityGrid, t: f64) -> Result<(f64, f64)> {
    let p = grid
        .at_time(t)
        .ok_or_else(|| Error::Argument(format!("time {t} is not on the grid")))?;
    let a = &grid.ages;
    let mut mass = 0.0;
    let mut first = 0.0;
    for m in 1..a.len() {
        let h = a[m] - a[m - 1];
        mass += 0.5 * h * (p[m] + p[m - 1]);
        first += 0.5 * h * (a[m] * p[m] + a[m - 1] * p[m - 1]);
    }
    if mass == 0.0 {
        return Err(Error::ZeroMass);
    }
    Ok((mass, first / mass))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ode::linspace;

    #[test]
    fn quadrature_basics() {
        let v = integrate(|x| x.powi(6), 0.0, 2.0, 1e-12).unwrap();
        assert!((v - 128.0 / 7.0).abs() < 1e-11);
        let v = integrate(f64::exp, 0.0, 1.0, 1e-12).unwrap();
        assert!((v - (std::f64::consts::E - 1.0)).abs() < 1e-12);
        let v = integrate(|x| x.sqrt(), 0.0, 1.0, 1e-10).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-10);
        assert_eq!(integrate(|x| x, 1.0, 1.0, 1e-10).unwrap(), 0.0);
        assert!((integrate(|x| x, 1.0, 0.0, 1e-10).unwrap() + 0.5).abs() < 1e-15);
        assert!(integrate(|x| 1.0 / x, 0.0, 1.0, 1e-10).is_err());
    }

    #[test]
    fn kinks_near_an_endpoint() {
        // Linear on both sides of c; every node of [c - 1e-3, 5] misses it.
        let c = 1.0;
        let f = |x: f64| (x - c).abs();
        let a = c - 1e-3;
        let exact = 0.5 * 1e-6 + 0.5 * (5.0 - c) * (5.0 - c);
        let v = integrate_with_breaks(f, a, 5.0, &[c, 9.0], 1e-12).unwrap();
        assert!((v - exact).abs() < 1e-12);
        assert!((integrate_with_breaks(f, 5.0, a, &[c], 1e-12).unwrap() + exact).abs() < 1e-12);
        let knots = [c];
        let r = Rate::new(&f).with_breakpoints(&knots);
        assert_eq!(r.breakpoints(), &[c]);
        assert!((r.integral(a, 5.0).unwrap() - exact).abs() < 1e-12);
    }

    #[test]
    fn scalar_relaxation() {
        let b = |_t: f64| -1.0;
        let x = scalar_solution(Rate::new(&b), &|_| 1.0, 0.0, 0.0, 1.0).unwrap();
        assert!((x - (1.0 - (-1.0f64).exp())).abs() < 1e-10);
    }

    #[test]
    fn scalar_pure_decay() {
        let b = |t: f64| -(2.0 + t.sin());
        let big = |t: f64| -2.0 * t + t.cos();
        let x = scalar_solution(Rate::with_antiderivative(&b, &big), &|_| 0.0, 0.0, 1.5, 3.0).unwrap();
        assert!((x - 1.5 * (big(3.0) - big(0.0)).exp()).abs() < 1e-14);
        // Same without the antiderivative.
        let y = scalar_solution(Rate::new(&b), &|_| 0.0, 0.0, 1.5, 3.0).unwrap();
        assert!((x - y).abs() < 1e-11);
    }

    #[test]
    fn scalar_rejects_nonnegative_rate() {
        let b = |t: f64| t - 1.0;
        assert!(scalar_solution(Rate::new(&b), &|_| 1.0, 0.0, 0.0, 2.0).is_err());
    }

    #[test]
    fn cascade_constant_coefficients() {
        let b11 = |_t: f64| -1.0;
        let b22 = |_t: f64| -2.0;
        let x = cascade_solution(Rate::new(&b11), &|_| 0.5, Rate::new(&b22), &|_| 1.0, 0.0, [1.0, 0.0], 1.0).unwrap();
        let e1 = (-1.0f64).exp();
        let e2 = (-2.0f64).exp();
        assert!((x[0] - e1).abs() < 1e-12);
        assert!((x[1] - (0.5 + 0.5 * e1 - e2)).abs() < 1e-10);
    }

    #[test]
    fn cascade_from_rest() {
        let b11 = |_t: f64| -1.0;
        let b22 = |_t: f64| -2.0;
        let x = cascade_solution(Rate::new(&b11), &|_| 0.5, Rate::new(&b22), &|_| 0.0, 0.0, [0.0, 0.0], 2.0).unwrap();
        assert_eq!(x, [0.0, 0.0]);
    }

    #[test]
    fn density_of_unit_system() {
        let b = |_t: f64| -1.0;
        let ages = linspace(0.0, 8.0, 801);
        let grid = age_density_1d(Rate::new(&b), &|_| 1.0, &|_| 0.0, 0.0, &[3.0], &ages).unwrap();
        let p = grid.at_time(3.0).unwrap();
        for (a, v) in ages.iter().zip(p) {
            let expect = if *a <= 3.0 { (-a).exp() } else { 0.0 };
            assert!((v - expect).abs() < 1e-12, "a = {a}");
        }
        assert_eq!(p[0], 1.0);
    }

    #[test]
    fn boundary_equals_input() {
        let b = |t: f64| -(1.0 + 0.5 * t.cos());
        let s = |t: f64| 2.0 + t.sin();
        let grid = age_density_1d(Rate::new(&b), &s, &|_| 1.0, 0.0, &[0.5, 2.0, 4.0], &[0.0, 0.1]).unwrap();
        for (k, t) in grid.times.iter().enumerate() {
            assert_eq!(grid.values[k][0], s(*t));
        }
    }

    #[test]
    fn moments_of_truncated_exponential() {
        let b = |_t: f64| -1.0;
        let t = 5.0;
        let ages = linspace(0.0, t, 5001);
        let grid = age_density_1d(Rate::new(&b), &|_| 1.0, &|_| 0.0, 0.0, &[t], &ages).unwrap();
        let (mass, mean) = density_moments(&grid, t).unwrap();
        let e = (-t).exp();
        assert!((mass - (1.0 - e)).abs() < 1e-6);
        let exact_mean = (1.0 - e * (1.0 + t)) / (1.0 - e);
        assert!((mean - exact_mean).abs() < 1e-6);
        assert!((mean - 0.96608).abs() < 1e-5);
    }

    #[test]
    fn moments_of_uniform_density() {
        let grid = AgeDensityGrid { ages: linspace(0.0, 4.0, 9), times: vec![0.0], values: vec![vec![1.0; 9]] };
        let (mass, mean) = density_moments(&grid, 0.0).unwrap();
        assert_eq!((mass, mean), (4.0, 2.0));
        let empty = AgeDensityGrid { values: vec![vec![0.0; 9]], ..grid };
        assert_eq!(density_moments(&empty, 0.0), Err(Error::ZeroMass));
        assert!(density_moments(&empty, 1.0).is_err());
    }
}
