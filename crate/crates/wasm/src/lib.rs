//! Browser bindings. Every function takes plain numbers or JSON text and
//! returns JSON text, so the page needs no generated TypeScript types.

use serde_json::{json, Value};
use transit_core::ages::autonomous_summary;
use transit_core::casa::{run_scenario, CasaParams, Co2Model};
use transit_core::numerics::ode::linspace;
use transit_core::numerics::SolverConfig;
use transit_core::oracles::{age_density_1d, density_moments, Rate};
use transit_core::SystemDefinition;
use wasm_bindgen::prelude::*;

fn fail(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

/// Equilibrium summary of a system definition, frozen at time `at`.
#[wasm_bindgen]
pub fn autonomous(definition: &str, at: f64) -> Result<String, JsError> {
    let system = SystemDefinition::from_json(definition).map_err(fail)?.into_system().map_err(fail)?;
    let (b, s) = system.evaluate(at).map_err(fail)?;
    let sum = autonomous_summary(&b, &s).map_err(fail)?;
    Ok(json!({
        "transit_time": sum.transit_time,
        "mean_age": sum.mean_age,
        "turnover_time": sum.turnover_time,
        "x_star": sum.x_star,
        "abar_star": sum.abar_star,
        "r": sum.r,
        "beta": sum.beta,
        "eta": sum.eta,
    })
    .to_string())
}

/// CASA scenario time series on a yearly grid.
#[wasm_bindgen]
pub fn casa(t_end: f64, co2: &str, xi_b: f64) -> Result<String, JsError> {
    let co2_model = match co2 {
        "logistic" => Co2Model::Logistic,
        "verbatim" => Co2Model::Verbatim,
        other => return Err(JsError::new(&format!("unknown CO2 model '{other}'"))),
    };
    let params = CasaParams { co2_model, xi_b, ..CasaParams::default() };
    params.validate().map_err(fail)?;
    let run = run_scenario(&params, t_end, 1.0, &SolverConfig::rk4(0.05)).map_err(fail)?;
    let s = &run.series.samples;
    let col = |f: &dyn Fn(usize) -> f64| -> Vec<Value> { (0..s.len()).map(|k| finite_or_null(f(k))).collect() };
    Ok(json!({
        "t": col(&|k| s[k].t),
        "total": col(&|k| s[k].total),
        "transit_time": col(&|k| s[k].transit_time.unwrap_or(f64::NAN)),
        "mean_age": col(&|k| s[k].mean_age),
        "frozen_transit_time": col(&|k| s[k].frozen_transit_time.unwrap_or(f64::NAN)),
        "frozen_mean_age": col(&|k| s[k].frozen_mean_age.unwrap_or(f64::NAN)),
        "co2": col(&|k| run.drivers[k].co2),
    })
    .to_string())
}

/// Age density of a one-pool system `x' = -k x + s`, started empty at 0
/// and observed at time `t` on `cells` equal age cells.
#[wasm_bindgen]
pub fn age_density(k: f64, s: f64, t: f64, cells: usize) -> Result<String, JsError> {
    if !(k > 0.0 && s >= 0.0 && t > 0.0 && cells >= 1) {
        return Err(JsError::new("need k > 0, s >= 0, t > 0 and at least one cell"));
    }
    let rate = move |_: f64| -k;
    let input = move |_: f64| s;
    let ages = linspace(0.0, t, cells + 1);
    let grid = age_density_1d(Rate::new(&rate), &input, &|_| 0.0, 0.0, &[t], &ages).map_err(fail)?;
    let (mass, mean) = density_moments(&grid, t).map_err(fail)?;
    Ok(json!({ "ages": grid.ages, "density": grid.values[0], "mass": mass, "mean_age": mean }).to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: String) -> Value {
        serde_json::from_str(&s).unwrap()
    }

    #[test]
    fn autonomous_summary_of_two_pools() {
        let def = r#"{"dimension":2,"base_matrix":[[-1,2],[0.5,-2]],"base_input":[1,0]}"#;
        let v = parse(autonomous(def, 0.0).unwrap());
        assert!((v["transit_time"].as_f64().unwrap() - 2.5).abs() < 1e-12);
        assert!((v["mean_age"].as_f64().unwrap() - 2.6).abs() < 1e-12);
    }

    #[test]
    fn casa_series_lengths_match() {
        let v = parse(casa(20.0, "logistic", 2.0).unwrap());
        assert_eq!(v["t"].as_array().unwrap().len(), 21);
        assert_eq!(v["mean_age"].as_array().unwrap().len(), 21);
    }

    #[test]
    fn density_moments_match_closed_form() {
        let v = parse(age_density(1.0, 1.0, 5.0, 5000).unwrap());
        let e = (-5.0f64).exp();
        assert!((v["mass"].as_f64().unwrap() - (1.0 - e)).abs() < 1e-6);
        assert!((v["mean_age"].as_f64().unwrap() - (1.0 - 6.0 * e) / (1.0 - e)).abs() < 1e-5);
    }
}
