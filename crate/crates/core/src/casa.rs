//! Nine-pool terrestrial carbon model (a global, spatially lumped CASA
//! variant) driven by a prescribed CO₂ concentration path.
//!
//! Pools: 1–3 leaves, roots, wood; 4–6 litter; 7–9 soil. CO₂ raises inputs to
//! the plant pools through fertilization and raises temperature, which
//! speeds up litter and soil decomposition through a Q10 factor `ξ`.
//!
//! Time is in years since 1850; CO₂ is held at its 1850 value before that.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::ages::{equilibrium_mean_ages, simulate_with_ages, AgeTimeSeries};
use crate::error::{Error, Result};
use crate::numerics::linalg::{equilibrium, Matrix};
use crate::numerics::ode::{uniform_grid, SolverConfig};
use crate::stability::{check_compartmental, sample_grid, DEFAULT_SAMPLES};
use crate::system::{Builtins, CompartmentalSystem, ScalarForcing, TimeDomain};

pub const POOLS: usize = 9;
/// Reference (1850) CO₂ concentration, ppm.
pub const CO2_REFERENCE: f64 = 285.0;
/// CO₂ asymptote of the concentration path, ppm.
pub const CO2_CEILING: f64 = 1715.0;
/// Growth rate of the concentration path, 1/yr.
pub const CO2_GROWTH: f64 = 0.0305;
/// Horizon of the standard scenario (1850–2500).
pub const SCENARIO_YEARS: f64 = 650.0;

pub const XI_BUILTIN: &str = "casa_xi";
pub const INPUT_BUILTIN: &str = "casa_input";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Co2Model {
    /// `1715 · exp(0.0305 t / (1715 + exp(0.0305 t) - 1))`, as printed.
    Verbatim,
    /// Logistic rise from 285 ppm towards 1715 ppm.
    Logistic,
}

/// Nonzero transfer and loss rates (1/yr), keyed `"bIJ"` with one-based
/// pool indices. `b89` is kept separately in [`CasaParams`].
pub const DEFAULT_RATES: [(&str, f64); 24] = [
    ("b11", -0.67),
    ("b22", -0.2),
    ("b33", -0.04),
    ("b41", 0.5092),
    ("b42", 0.0260),
    ("b44", -2.5),
    ("b51", 0.1608),
    ("b52", 0.1740),
    ("b55", -0.4),
    ("b63", 0.04),
    ("b66", -0.25),
    ("b74", 1.1250),
    ("b75", 0.1530),
    ("b76", 0.06),
    ("b77", -0.7),
    ("b78", 0.0103),
    ("b79", 0.0002),
    ("b85", 0.042),
    ("b86", 0.07),
    ("b87", 0.3525),
    ("b88", -0.023),
    ("b97", 0.0045),
    ("b98", 0.0001),
    ("b99", -0.0004),
];

/// Entries that are scaled by the decomposition factor `ξ(T_s(t))`.
fn xi_scaled(i: usize, j: usize) -> bool {
    // Zero-based: litter diagonals and the whole soil block rows.
    matches!((i, j), (3, 3) | (4, 4) | (5, 5)) || (i >= 6 && j >= 3)
}

fn parse_rate_key(key: &str) -> Option<(usize, usize)> {
    let digits = key.strip_prefix('b')?;
    let mut chars = digits.chars();
    let i = chars.next()?.to_digit(10)? as usize;
    let j = chars.next()?.to_digit(10)? as usize;
    if chars.next().is_some() || !(1..=POOLS).contains(&i) || !(1..=POOLS).contains(&j) {
        return None;
    }
    Some((i - 1, j - 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasaParams {
    /// Rates keyed `"bIJ"`; see [`DEFAULT_RATES`].
    pub rates: BTreeMap<String, f64>,
    /// Warming per doubling of CO₂, °C.
    pub sigma: f64,
    /// 1850 land surface temperature, °C.
    pub t_s0: f64,
    /// Fraction of gross production retained after respiration.
    pub alpha: f64,
    /// Allocation of inputs to pools 1–3.
    pub f: [f64; 3],
    /// Ratio of intracellular to atmospheric CO₂.
    pub rho: f64,
    /// Q10 base of the decomposition factor.
    pub xi_b: f64,
    /// Gross production scale, PgC/yr.
    pub s0: f64,
    pub co2_model: Co2Model,
    /// Soil cross-rate from pool 9 to pool 8 (no published value).
    pub b89: f64,
}

impl Default for CasaParams {
    fn default() -> Self {
        Self {
            rates: DEFAULT_RATES.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            sigma: 4.5,
            t_s0: 15.0,
            alpha: 0.5,
            f: [0.33, 0.33, 0.33],
            rho: 0.65,
            xi_b: 2.0,
            s0: 120.0,
            co2_model: Co2Model::Logistic,
            b89: 0.0,
        }
    }
}

/// Partial parameter set; present fields replace the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CasaOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_s0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub co2_model: Option<Co2Model>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b89: Option<f64>,
}

impl CasaParams {
    pub fn with_overrides(mut self, o: &CasaOverrides) -> Result<Self> {
        if let Some(rates) = &o.rates {
            for (k, v) in rates {
                if k == "b89" {
                    self.b89 = *v;
                } else if self.rates.contains_key(k) {
                    self.rates.insert(k.clone(), *v);
                } else {
                    return Err(Error::Config(format!("unknown CASA rate `{k}`")));
                }
            }
        }
        macro_rules! take {
            ($($field:ident),*) => { $( if let Some(v) = o.$field { self.$field = v; } )* };
        }
        take!(sigma, t_s0, alpha, f, rho, xi_b, s0, co2_model, b89);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("alpha", self.alpha), ("rho", self.rho), ("xi_b", self.xi_b), ("s0", self.s0)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be nonnegative, got {}", self.sigma)));
        }
        if self.f.iter().any(|v| !(*v >= 0.0)) || self.f.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::Config(format!("allocation fractions {:?} must be nonnegative and sum to at most 1", self.f)));
        }
        for (k, &v) in self.rates.iter().chain(std::iter::once((&"b89".to_string(), &self.b89))) {
            let (i, j) = parse_rate_key(k).ok_or_else(|| Error::Config(format!("bad rate key `{k}`")))?;
            let ok = if i == j { v < 0.0 } else { v >= 0.0 };
            if !ok || !v.is_finite() {
                return Err(Error::Config(format!("rate {k} = {v} has the wrong sign")));
            }
        }
        Ok(())
    }

    /// Base amplitude matrix `b_ij` (before `ξ` scaling).
    pub fn rate_matrix(&self) -> Matrix {
        let mut b = Matrix::zeros(POOLS, POOLS);
        for (k, v) in &self.rates {
            if let Some((i, j)) = parse_rate_key(k) {
                b[(i, j)] = *v;
            }
        }
        b[(7, 8)] = self.b89;
        b
    }
}

/// Atmospheric CO₂ (ppm) at `t` years since 1850.
pub fn co2(params: &CasaParams, t: f64) -> f64 {
    let t = t.max(0.0);
    let growth = (CO2_GROWTH * t).exp();
    match params.co2_model {
        Co2Model::Verbatim => CO2_CEILING * (CO2_GROWTH * t / (CO2_CEILING + growth - 1.0)).exp(),
        Co2Model::Logistic => {
            CO2_REFERENCE * CO2_CEILING * growth / (CO2_CEILING + CO2_REFERENCE * (growth - 1.0))
        }
    }
}

/// Land surface temperature (°C) at CO₂ concentration `x_a` (ppm).
pub fn temperature(params: &CasaParams, x_a: f64) -> Result<f64> {
    if !(x_a > 0.0) {
        return Err(Error::Argument(format!("CO2 concentration must be positive, got {x_a}")));
    }
    Ok(params.t_s0 + params.sigma / LN_2 * (x_a / CO2_REFERENCE).ln())
}

/// CO₂ compensation point `Γ*(T)` (ppm).
pub fn gamma_star(temp: f64) -> f64 {
    let dt = temp - 25.0;
    42.7 + 1.68 * dt + 0.012 * dt * dt
}

/// Sensitivity of carbon input to CO₂.
pub fn beta_sens(params: &CasaParams, x_a: f64, temp: f64) -> Result<f64> {
    let ci = params.rho * x_a;
    let g = gamma_star(temp);
    let den = (ci - g) * (ci + 2.0 * g);
    let scale = (ci.abs() + 2.0 * g.abs()).powi(2).max(f64::MIN_POSITIVE);
    if den.abs() < 1e-9 * scale {
        return Err(Error::Singular { column: 0, pivot: den });
    }
    Ok(3.0 * ci * g / den)
}

/// Q10 decomposition factor, equal to 1 at 20 °C.
pub fn xi_scale(params: &CasaParams, temp: f64) -> f64 {
    params.xi_b.powf(0.1 * temp - 2.0)
}

/// Forcing chain values at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Drivers {
    pub co2: f64,
    pub temperature: f64,
    pub xi: f64,
    pub beta: f64,
    /// `1 + β ln(x_a / 285)`: multiplier on the baseline input.
    pub input_factor: f64,
}

pub fn drivers(params: &CasaParams, t: f64) -> Result<Drivers> {
    let x_a = co2(params, t);
    let temp = temperature(params, x_a)?;
    let beta = beta_sens(params, x_a, temp)?;
    Ok(Drivers {
        co2: x_a,
        temperature: temp,
        xi: xi_scale(params, temp),
        beta,
        input_factor: 1.0 + beta * (x_a / CO2_REFERENCE).ln(),
    })
}

fn base_input(params: &CasaParams) -> Vec<f64> {
    let mut s = vec![0.0; POOLS];
    for (si, fi) in s.iter_mut().zip(params.f) {
        *si = fi * params.alpha * params.s0;
    }
    s
}

/// Carbon input (PgC/yr) to each pool at `t`.
pub fn input_vector(params: &CasaParams, t: f64) -> Result<Vec<f64>> {
    let factor = drivers(params, t)?.input_factor;
    Ok(base_input(params).into_iter().map(|v| v * factor).collect())
}

/// Registers the `casa_xi` and `casa_input` forcings for `params`.
pub fn register_builtins(params: &CasaParams, builtins: &mut Builtins) {
    let p = params.clone();
    builtins.register(XI_BUILTIN, move |t| Ok(drivers(&p, t)?.xi));
    let p = params.clone();
    builtins.register(INPUT_BUILTIN, move |t| Ok(drivers(&p, t)?.input_factor));
}

fn assemble(params: &CasaParams) -> Result<CompartmentalSystem> {
    params.validate()?;
    let mut builtins = Builtins::empty();
    register_builtins(params, &mut builtins);
    let matrix_forcing = (0..POOLS * POOLS)
        .map(|k| {
            if xi_scaled(k / POOLS, k % POOLS) {
                ScalarForcing::Builtin(XI_BUILTIN.into())
            } else {
                ScalarForcing::default()
            }
        })
        .collect();
    let input_forcing = (0..POOLS)
        .map(|i| if i < 3 { ScalarForcing::Builtin(INPUT_BUILTIN.into()) } else { ScalarForcing::default() })
        .collect();
    CompartmentalSystem::new(
        params.rate_matrix(),
        matrix_forcing,
        base_input(params),
        input_forcing,
        TimeDomain::UNBOUNDED,
        &builtins,
    )
}

/// Builds the nine-pool system and rejects parameter sets that are not
/// compartmental on the scenario horizon.
pub fn build_casa_system(params: &CasaParams) -> Result<CompartmentalSystem> {
    let system = assemble(params)?;
    let samples = sample_grid(0.0, SCENARIO_YEARS, DEFAULT_SAMPLES);
    let report = check_compartmental(&system, &samples)?;
    if let Some(v) = report.violations.first() {
        return Err(Error::NotCompartmental(format!(
            "{} violation(s), first: {v}",
            report.violations.len()
        )));
    }
    Ok(system)
}

/// Output of [`run_scenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasaRun {
    pub params: CasaParams,
    pub series: AgeTimeSeries,
    /// Forcing chain at each output time.
    pub drivers: Vec<Drivers>,
    /// Total input flux `Σ s(t)` at each output time.
    pub total_input: Vec<f64>,
}

/// Spins the model up to the equilibrium of the 1850 system (masses and mean
/// ages), then integrates masses and ages to `t_end` with output every
/// `dt_out` years.
pub fn run_scenario(params: &CasaParams, t_end: f64, dt_out: f64, cfg: &SolverConfig) -> Result<CasaRun> {
    if !(t_end > 0.0) {
        return Err(Error::Argument(format!("t_end must be positive, got {t_end}")));
    }
    let system = build_casa_system(params)?;
    let (b0, s0) = system.evaluate(0.0)?;
    let x0 = equilibrium(&b0, &s0)?;
    if let Some(pool) = x0.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Config(format!(
            "1850 equilibrium is not positive (pool {}: {})",
            pool + 1,
            x0[pool]
        )));
    }
    let abar0 = equilibrium_mean_ages(&b0, &s0)?;
    let outputs = uniform_grid(0.0, t_end, dt_out)?;
    let series = simulate_with_ages(&system, 0.0, &x0, Some(&abar0), &outputs, cfg)?;
    let drivers = outputs.iter().map(|&t| drivers(params, t)).collect::<Result<Vec<_>>>()?;
    let total_input = outputs
        .iter()
        .map(|&t| input_vector(params, t).map(|s| s.iter().sum()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(CasaRun { params: params.clone(), series, drivers, total_input })
}
