//! Linear nonautonomous compartmental systems `ẋ = B(t) x + s(t)`.
//!
//! Time dependence enters only through scalar forcings that multiply the
//! base amplitudes entrywise: `B(t)_ij = base_ij · f_ij(t)` and
//! `s_i(t) = base_i · g_i(t)`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::casa::CasaOverrides;
use crate::error::{Error, Result};
use crate::numerics::linalg::Matrix;

/// Open interval `(tau, ∞)`; `tau` may be `-∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeDomain {
    pub tau: f64,
}

impl TimeDomain {
    pub const UNBOUNDED: TimeDomain = TimeDomain { tau: f64::NEG_INFINITY };

    pub fn from(tau: f64) -> Self {
        Self { tau }
    }

    pub fn contains(&self, t: f64) -> bool {
        t > self.tau
    }

    pub fn check(&self, t: f64) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(Error::Domain { t, tau: self.tau })
        }
    }
}

impl Default for TimeDomain {
    fn default() -> Self {
        Self::UNBOUNDED
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum ScalarForcing {
    Constant(f64),
    Table { t: Vec<f64>, v: Vec<f64> },
    Builtin(String),
}

impl ScalarForcing {
    pub fn table(t: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let f = ScalarForcing::Table { t, v };
        f.check_table()?;
        Ok(f)
    }

    fn check_table(&self) -> Result<()> {
        if let ScalarForcing::Table { t, v } = self {
            if t.is_empty() || t.len() != v.len() {
                return Err(Error::Config(format!(
                    "forcing table needs matching non-empty t and v (got {} and {})",
                    t.len(),
                    v.len()
                )));
            }
            if t.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Config("forcing table times must be strictly increasing".into()));
            }
        }
        Ok(())
    }
}

impl Default for ScalarForcing {
    fn default() -> Self {
        ScalarForcing::Constant(1.0)
    }
}

/// Piecewise-linear interpolation with constant extension beyond the ends.
pub fn interpolate_table(ts: &[f64], vs: &[f64], t: f64) -> f64 {
    let n = ts.len();
    if t <= ts[0] {
        return vs[0];
    }
    if t >= ts[n - 1] {
        return vs[n - 1];
    }
    let k = ts.partition_point(|&x| x <= t);
    let (t0, t1) = (ts[k - 1], ts[k]);
    let w = (t - t0) / (t1 - t0);
    vs[k - 1] + w * (vs[k] - vs[k - 1])
}

pub type BuiltinFn = Arc<dyn Fn(f64) -> Result<f64> + Send + Sync>;

/// Named time functions that forcings may refer to.
#[derive(Clone, Default)]
pub struct Builtins {
    map: BTreeMap<String, BuiltinFn>,
}

impl Builtins {
    pub fn empty() -> Self {
        Self::default()
    }

    /// A few analytic forcings useful for test systems.
    pub fn standard() -> Self {
        let mut b = Self::empty();
        b.register("one", |_| Ok(1.0));
        b.register("sin", |t| Ok(t.sin()));
        b.register("cos", |t| Ok(t.cos()));
        b.register("two_plus_sin", |t| Ok(2.0 + t.sin()));
        b.register("one_plus_half_sin", |t| Ok(1.0 + 0.5 * t.sin()));
        b.register("one_plus_half_cos", |t| Ok(1.0 + 0.5 * t.cos()));
        b
    }

    pub fn register<F>(&mut self, name: &str, f: F)
    where
        F: Fn(f64) -> Result<f64> + Send + Sync + 'static,
    {
        self.map.insert(name.to_owned(), Arc::new(f));
    }

    pub fn get(&self, name: &str) -> Option<&BuiltinFn> {
        self.map.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }
}

impl fmt::Debug for Builtins {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.map.keys()).finish()
    }
}

/// Forcing with builtin names resolved to slots in the system's builtin table.
#[derive(Debug, Clone, PartialEq)]
enum Resolved {
    Constant(f64),
    Table(usize),
    Builtin(usize),
}

#[derive(Clone)]
pub struct CompartmentalSystem {
    dimension: usize,
    base_matrix: Matrix,
    matrix_forcing: Vec<ScalarForcing>,
    base_input: Vec<f64>,
    input_forcing: Vec<ScalarForcing>,
    domain: TimeDomain,
    resolved_matrix: Vec<Resolved>,
    resolved_input: Vec<Resolved>,
    tables: Vec<(Vec<f64>, Vec<f64>)>,
    builtin_names: Vec<String>,
    builtin_fns: Vec<BuiltinFn>,
}

impl fmt::Debug for CompartmentalSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CompartmentalSystem")
            .field("dimension", &self.dimension)
            .field("base_matrix", &self.base_matrix)
            .field("matrix_forcing", &self.matrix_forcing)
            .field("base_input", &self.base_input)
            .field("input_forcing", &self.input_forcing)
            .field("domain", &self.domain)
            .field("builtins", &self.builtin_names)
            .finish()
    }
}

impl CompartmentalSystem {
    /// Constant system on the whole real line.
    pub fn autonomous(b: Matrix, s: Vec<f64>) -> Result<Self> {
        let d = s.len();
        Self::new(b, vec![ScalarForcing::default(); d * d], s, vec![ScalarForcing::default(); d], TimeDomain::UNBOUNDED, &Builtins::empty())
    }

    pub fn new(
        base_matrix: Matrix,
        matrix_forcing: Vec<ScalarForcing>,
        base_input: Vec<f64>,
        input_forcing: Vec<ScalarForcing>,
        domain: TimeDomain,
        builtins: &Builtins,
    ) -> Result<Self> {
        let d = base_input.len();
        if d == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        if base_matrix.rows() != d || base_matrix.cols() != d {
            return Err(Error::Config(format!(
                "base_matrix is {}x{}, expected {d}x{d}",
                base_matrix.rows(),
                base_matrix.cols()
            )));
        }
        if matrix_forcing.len() != d * d || input_forcing.len() != d {
            return Err(Error::Config("forcing arrays do not match the dimension".into()));
        }
        if base_matrix.as_slice().iter().chain(&base_input).any(|v| !v.is_finite()) {
            return Err(Error::Config("base amplitudes must be finite".into()));
        }
        if domain.tau.is_nan() || domain.tau == f64::INFINITY {
            return Err(Error::Config(format!("invalid domain lower bound {}", domain.tau)));
        }

        let mut tables = Vec::new();
        let mut builtin_names: Vec<String> = Vec::new();
        let mut builtin_fns = Vec::new();
        let mut resolve = |f: &ScalarForcing| -> Result<Resolved> {
            match f {
                ScalarForcing::Constant(v) => {
                    if !v.is_finite() {
                        return Err(Error::Config(format!("non-finite constant forcing {v}")));
                    }
                    Ok(Resolved::Constant(*v))
                }
                ScalarForcing::Table { t, v } => {
                    f.check_table()?;
                    tables.push((t.clone(), v.clone()));
                    Ok(Resolved::Table(tables.len() - 1))
                }
                ScalarForcing::Builtin(name) => {
                    if let Some(k) = builtin_names.iter().position(|n| n == name) {
                        return Ok(Resolved::Builtin(k));
                    }
                    let func = builtins
                        .get(name)
                        .ok_or_else(|| Error::Config(format!("unregistered builtin forcing `{name}`")))?;
                    builtin_names.push(name.clone());
                    builtin_fns.push(func.clone());
                    Ok(Resolved::Builtin(builtin_names.len() - 1))
                }
            }
        };
        let resolved_matrix = matrix_forcing.iter().map(&mut resolve).collect::<Result<Vec<_>>>()?;
        let resolved_input = input_forcing.iter().map(&mut resolve).collect::<Result<Vec<_>>>()?;

        Ok(Self {
            dimension: d,
            base_matrix,
            matrix_forcing,
            base_input,
            input_forcing,
            domain,
            resolved_matrix,
            resolved_input,
            tables,
            builtin_names,
            builtin_fns,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn domain(&self) -> TimeDomain {
        self.domain
    }

    pub fn base_matrix(&self) -> &Matrix {
        &self.base_matrix
    }

    pub fn base_input(&self) -> &[f64] {
        &self.base_input
    }

    pub fn matrix_forcing(&self) -> &[ScalarForcing] {
        &self.matrix_forcing
    }

    pub fn input_forcing(&self) -> &[ScalarForcing] {
        &self.input_forcing
    }

    /// True when every forcing is a constant.
    /// Knots of every tabulated forcing, sorted: the times where `B` or `s`
    /// may have a kink.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut knots: Vec<f64> = self.tables.iter().flat_map(|(t, _)| t.iter().copied()).collect();
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        knots
    }

    pub fn is_autonomous(&self) -> bool {
        self.resolved_matrix
            .iter()
            .chain(&self.resolved_input)
            .all(|r| matches!(r, Resolved::Constant(_)))
    }

    /// Evaluates `B(t)` and `s(t)`.
    pub fn evaluate(&self, t: f64) -> Result<(Matrix, Vec<f64>)> {
        let d = self.dimension;
        let mut b = Matrix::zeros(d, d);
        let mut s = vec![0.0; d];
        let mut scratch = Vec::new();
        self.evaluate_into(t, &mut b, &mut s, &mut scratch)?;
        Ok((b, s))
    }

    /// Allocation-free variant of [`evaluate`](Self::evaluate) for hot loops.
    /// `scratch` caches builtin values so each is evaluated once per call.
    pub fn evaluate_into(&self, t: f64, b: &mut Matrix, s: &mut [f64], scratch: &mut Vec<f64>) -> Result<()> {
        self.domain.check(t)?;
        scratch.clear();
        for f in &self.builtin_fns {
            scratch.push(f(t)?);
        }
        let value = |r: &Resolved| match r {
            Resolved::Constant(v) => *v,
            Resolved::Table(k) => {
                let (ts, vs) = &self.tables[*k];
                interpolate_table(ts, vs, t)
            }
            Resolved::Builtin(k) => scratch[*k],
        };
        for ((out, base), r) in b
            .as_mut_slice()
            .iter_mut()
            .zip(self.base_matrix.as_slice())
            .zip(&self.resolved_matrix)
        {
            *out = if *base == 0.0 { 0.0 } else { base * value(r) };
        }
        for ((out, base), r) in s.iter_mut().zip(&self.base_input).zip(&self.resolved_input) {
            *out = if *base == 0.0 { 0.0 } else { base * value(r) };
        }
        Ok(())
    }

    /// `ẋ = B(t) x + s(t)` as a closure suitable for the integrators.
    pub fn field(&self) -> impl FnMut(f64, &[f64], &mut [f64]) -> Result<()> + '_ {
        let d = self.dimension;
        let mut b = Matrix::zeros(d, d);
        let mut s = vec![0.0; d];
        let mut scratch = Vec::new();
        move |t, x, dx| {
            self.evaluate_into(t, &mut b, &mut s, &mut scratch)?;
            b.mul_vec_into(x, dx);
            for (o, si) in dx.iter_mut().zip(&s) {
                *o += si;
            }
            Ok(())
        }
    }

    /// Same structure with the input scaled by `c`.
    pub fn with_input_scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.base_input.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// Reconstructs a definition document (builtin names are kept by name).
    pub fn to_definition(&self) -> SystemDefinition {
        let d = self.dimension;
        let cell = |f: &ScalarForcing| match f {
            ScalarForcing::Constant(v) if *v == 1.0 => None,
            other => Some(other.clone()),
        };
        SystemDefinition {
            dimension: d,
            base_matrix: self.base_matrix.to_rows(),
            matrix_forcing: Some(
                self.matrix_forcing.chunks(d).map(|row| row.iter().map(cell).collect()).collect(),
            ),
            base_input: self.base_input.clone(),
            input_forcing: Some(self.input_forcing.iter().map(cell).collect()),
            t_min: if self.domain.tau.is_finite() { Some(self.domain.tau) } else { None },
            casa_overrides: None,
        }
    }
}

/// The system-definition JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDefinition {
    pub dimension: usize,
    pub base_matrix: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix_forcing: Option<Vec<Vec<Option<ScalarForcing>>>>,
    pub base_input: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_forcing: Option<Vec<Option<ScalarForcing>>>,
    /// Lower end of the time domain; absent or null means `-∞`.
    #[serde(default)]
    pub t_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub casa_overrides: Option<CasaOverrides>,
}

impl SystemDefinition {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid system definition: {e}")))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("definition serializes")
    }

    /// Builtins available to this document: the standard set plus the CASA
    /// forcing chain, parameterized by `casa_overrides`.
    pub fn builtins(&self) -> Result<Builtins> {
        let mut b = Builtins::standard();
        let params = match &self.casa_overrides {
            Some(o) => crate::casa::CasaParams::default().with_overrides(o)?,
            None => crate::casa::CasaParams::default(),
        };
        crate::casa::register_builtins(&params, &mut b);
        Ok(b)
    }

    pub fn into_system(self) -> Result<CompartmentalSystem> {
        let builtins = self.builtins()?;
        self.into_system_with(&builtins)
    }

    pub fn into_system_with(self, builtins: &Builtins) -> Result<CompartmentalSystem> {
        let d = self.dimension;
        if self.base_matrix.len() != d || self.base_matrix.iter().any(|r| r.len() != d) {
            return Err(Error::Config(format!("base_matrix must be {d}x{d}")));
        }
        if self.base_input.len() != d {
            return Err(Error::Config(format!("base_input must have length {d}")));
        }
        let matrix_forcing: Vec<ScalarForcing> = match self.matrix_forcing {
            None => vec![ScalarForcing::default(); d * d],
            Some(rows) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(Error::Config(format!("matrix_forcing must be {d}x{d}")));
                }
                rows.into_iter().flatten().map(Option::unwrap_or_default).collect()
            }
        };
        let input_forcing: Vec<ScalarForcing> = match self.input_forcing {
            None => vec![ScalarForcing::default(); d],
            Some(v) => {
                if v.len() != d {
                    return Err(Error::Config(format!("input_forcing must have length {d}")));
                }
                v.into_iter().map(Option::unwrap_or_default).collect()
            }
        };
        let domain = TimeDomain::from(self.t_min.unwrap_or(f64::NEG_INFINITY));
        CompartmentalSystem::new(
            Matrix::from_rows(&self.base_matrix),
            matrix_forcing,
            self.base_input,
            input_forcing,
            domain,
            builtins,
        )
    }
}
