//! `transit`: validate, simulate and summarize compartmental systems, and
//! run the nine-pool carbon scenario.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numerical
//! failure, 3 validation failure.

mod output;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use transit_core::ages::{autonomous_summary, equilibrium_mean_ages, simulate_with_ages};
use transit_core::casa::{run_scenario, CasaParams, Co2Model};
use transit_core::numerics::ode::uniform_grid;
use transit_core::numerics::{equilibrium, integrate_sampled_with_stops, Method, SolverConfig};
use transit_core::stability::{
    certify_stability, check_compartmental, check_mean_age_stability, detect_blocks, sample_grid, DEFAULT_SAMPLES,
};
use transit_core::{CompartmentalSystem, Error, SystemDefinition};

use output::{age_csv, mass_csv, sha256_hex, write_with_manifest, RunManifest};

const CASA_STEP: f64 = 0.05;

#[derive(Parser)]
#[command(name = "transit", version, about = "Transit times and ages of compartmental systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check compartmental structure and stability conditions on a sample grid.
    Validate(ValidateArgs),
    /// Integrate a system and write the trajectory as CSV.
    Simulate(SimulateArgs),
    /// Freeze the system at one time and print its equilibrium summary.
    Autonomous(AutonomousArgs),
    /// Run the nine-pool terrestrial carbon scenario.
    Casa(CasaArgs),
}

#[derive(Args)]
struct ValidateArgs {
    file: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    /// Start of the sampled window (default 0).
    #[arg(long, allow_negative_numbers = true)]
    t0: Option<f64>,
    /// End of the sampled window (default t0 + 100, extended to the last table knot).
    #[arg(long, allow_negative_numbers = true)]
    t1: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum MethodArg {
    Rk45,
    Rk4,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Step of the fixed-step method.
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long)]
    atol: Option<f64>,
}

impl SolverArgs {
    fn config(&self, default: SolverConfig) -> Result<SolverConfig, Failure> {
        let mut cfg = match (self.method, self.step) {
            (Some(MethodArg::Rk4), step) => SolverConfig::rk4(step.unwrap_or(match default.method {
                Method::Rk4Fixed => default.h_init,
                Method::Rk45Adaptive => 1e-2,
            })),
            (Some(MethodArg::Rk45), Some(_)) => return Err(Failure::usage("--step applies only to --method rk4")),
            (Some(MethodArg::Rk45), None) => SolverConfig::default(),
            (None, Some(step)) if default.method == Method::Rk4Fixed => SolverConfig::rk4(step),
            (None, Some(_)) => return Err(Failure::usage("--step requires --method rk4")),
            (None, None) => default,
        };
        if let Some(r) = self.rtol {
            cfg.rtol = r;
        }
        if let Some(a) = self.atol {
            cfg.atol = a;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimulateArgs {
    file: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    t0: f64,
    #[arg(long, allow_negative_numbers = true)]
    t1: f64,
    /// Output spacing (default: 100 intervals). Never affects internal steps.
    #[arg(long)]
    dt_out: Option<f64>,
    /// `equilibrium` (of the system frozen at t0) or a JSON file
    /// `{"x": [...], "abar": [...]}` (`abar` optional).
    #[arg(long, default_value = "equilibrium")]
    init: String,
    /// Also integrate mean ages and write transit-time and age columns.
    #[arg(long)]
    ages: bool,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct AutonomousArgs {
    file: PathBuf,
    #[arg(long, allow_negative_numbers = true, default_value_t = 0.0)]
    at: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Co2Arg {
    Verbatim,
    Logistic,
}

#[derive(Args)]
struct CasaArgs {
    #[arg(long)]
    t_end: f64,
    #[arg(long, default_value_t = 1.0)]
    dt_out: f64,
    #[arg(long, value_enum, default_value = "logistic")]
    co2: Co2Arg,
    #[arg(long)]
    xi_b: Option<f64>,
    #[arg(long)]
    s0: Option<f64>,
    #[arg(long)]
    b89: Option<f64>,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Argument(_) | Error::Domain { .. } => 1,
            Error::NotCompartmental(_) => 3,
            _ => 2,
        };
        Self { code, message: e.to_string() }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::usage(format!("{}: {e}", path.display()))
}

struct Loaded {
    system: CompartmentalSystem,
    bytes: Vec<u8>,
}

fn load(path: &Path) -> Result<Loaded, Failure> {
    let bytes = fs::read(path).map_err(|e| io_failure(path, e))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let system = SystemDefinition::from_json(text)?.into_system()?;
    Ok(Loaded { system, bytes })
}

/// Rounds to 15 significant digits for display, so `2.4999999999999996`
/// prints as `2.5`.
fn show(v: f64) -> String {
    format!("{v:.14e}").parse::<f64>().map_or_else(|_| v.to_string(), |r| r.to_string())
}

const MAX_LISTED: usize = 20;

fn list_violations(violations: &[transit_core::stability::Violation]) {
    for v in violations.iter().take(MAX_LISTED) {
        println!("  violation: {v}");
    }
    if violations.len() > MAX_LISTED {
        println!("  ... and {} more", violations.len() - MAX_LISTED);
    }
}

fn show_vec(v: &[f64]) -> String {
    format!("({})", v.iter().map(|x| show(*x)).collect::<Vec<_>>().join(","))
}

fn validate(args: &ValidateArgs) -> Result<u8, Failure> {
    let Loaded { system, .. } = load(&args.file)?;
    if args.samples < 1 {
        return Err(Failure::usage("--samples must be at least 1"));
    }
    let t0 = args.t0.unwrap_or(0.0);
    let default_end = system.breakpoints().last().copied().unwrap_or(f64::NEG_INFINITY).max(t0 + 100.0);
    let t1 = args.t1.unwrap_or(default_end);
    if !(t1 >= t0) {
        return Err(Failure::usage(format!("--t1 {t1} precedes --t0 {t0}")));
    }
    let samples = sample_grid(t0, t1, args.samples);
    let report = check_compartmental(&system, &samples)?;
    println!("samples: {} on [{}, {}]", samples.len(), show(t0), show(t1));
    println!("compartmental: {}", if report.compliant { "compliant" } else { "violated" });
    list_violations(&report.violations);
    let blocks = detect_blocks(&system, &samples)?;
    println!("blocks: {blocks}");
    let cert = certify_stability(&system, &blocks, &samples)?;
    if cert.granted {
        println!("certificate: granted delta={} gamma={}", show(cert.delta), show(cert.delta));
    } else {
        let why = cert.failed.as_ref().map(|f| f.to_string()).unwrap_or_default();
        println!("certificate: refused ({why})");
    }
    let col = &cert.column_advisory;
    if col.granted {
        println!("column advisory: granted delta={}", show(col.delta));
    } else {
        let why = col.failed.as_ref().map(|f| f.to_string()).unwrap_or_default();
        println!("column advisory: refused ({why})");
    }
    if cert.granted {
        let ages = check_mean_age_stability(&system, &blocks, &samples, cert.delta)?;
        if ages.compliant {
            println!("mean-age stability: holds");
        } else {
            println!("mean-age stability: fails");
            list_violations(&ages.violations);
        }
    }
    Ok(if report.compliant { 0 } else { 3 })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialState {
    x: Vec<f64>,
    #[serde(default)]
    abar: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct SimulateEcho<'a> {
    t0: f64,
    t1: f64,
    dt_out: f64,
    init: &'a str,
    ages: bool,
    solver: &'a SolverConfig,
}

fn simulate(args: &SimulateArgs, argv: &[String]) -> Result<u8, Failure> {
    let Loaded { system, bytes } = load(&args.file)?;
    let d = system.dimension();
    if !(args.t1 > args.t0) {
        return Err(Failure::usage(format!("--t1 {} must exceed --t0 {}", args.t1, args.t0)));
    }
    let dt_out = args.dt_out.unwrap_or((args.t1 - args.t0) / 100.0);
    let outputs = uniform_grid(args.t0, args.t1, dt_out)?;
    let cfg = args.solver.config(SolverConfig::default())?;

    let (x0, abar0) = if args.init == "equilibrium" {
        let (b, s) = system.evaluate(args.t0)?;
        let x = equilibrium(&b, &s)?;
        let abar = if args.ages { Some(equilibrium_mean_ages(&b, &s)?) } else { None };
        (x, abar)
    } else {
        let path = Path::new(&args.init);
        let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
        let init: InitialState = serde_json::from_str(&text)
            .map_err(|e| Failure::usage(format!("{}: invalid initial state: {e}", path.display())))?;
        if init.x.len() != d || init.abar.as_ref().is_some_and(|a| a.len() != d) {
            return Err(Failure::usage(format!("initial state must have {d} entries")));
        }
        (init.x, init.abar)
    };

    let csv = if args.ages {
        let series = simulate_with_ages(&system, args.t0, &x0, abar0.as_deref(), &outputs, &cfg)?;
        age_csv(&series, d)
    } else {
        let traj = integrate_sampled_with_stops(system.field(), args.t0, &x0, &outputs, &system.breakpoints(), &cfg)?;
        mass_csv(&traj, d)
    };
    let echo = SimulateEcho { t0: args.t0, t1: args.t1, dt_out, init: &args.init, ages: args.ages, solver: &cfg };
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: &argv[1..],
        subcommand: "simulate",
        input_path: Some(&args.file),
        input_sha256: sha256_hex(&bytes),
        output_path: &args.output,
        output_sha256: sha256_hex(csv.as_bytes()),
        config: echo,
    };
    write_with_manifest(&args.output, &csv, manifest).map_err(|e| io_failure(&args.output, e))?;
    Ok(0)
}

fn autonomous(args: &AutonomousArgs) -> Result<u8, Failure> {
    let Loaded { system, .. } = load(&args.file)?;
    let (b, s) = system.evaluate(args.at)?;
    let sum = autonomous_summary(&b, &s)?;
    println!("t={}", show(args.at));
    println!("dimension={}", system.dimension());
    println!("R={}", show(sum.transit_time));
    println!("M={}", show(sum.mean_age));
    println!("U={}", show(sum.turnover_time));
    println!("r={}", show_vec(&sum.r));
    println!("x_star={}", show_vec(&sum.x_star));
    println!("abar_star={}", show_vec(&sum.abar_star));
    println!("beta={}", show_vec(&sum.beta));
    println!("eta={}", show_vec(&sum.eta));
    let rows: Vec<String> = sum.p.to_rows().iter().map(|r| show_vec(r)).collect();
    println!("P=({})", rows.join(","));
    Ok(0)
}

#[derive(Serialize)]
struct CasaEcho<'a> {
    t_end: f64,
    dt_out: f64,
    params: &'a CasaParams,
    solver: &'a SolverConfig,
}

fn casa(args: &CasaArgs, argv: &[String]) -> Result<u8, Failure> {
    let mut params = CasaParams {
        co2_model: match args.co2 {
            Co2Arg::Verbatim => Co2Model::Verbatim,
            Co2Arg::Logistic => Co2Model::Logistic,
        },
        ..CasaParams::default()
    };
    if let Some(v) = args.xi_b {
        params.xi_b = v;
    }
    if let Some(v) = args.s0 {
        params.s0 = v;
    }
    if let Some(v) = args.b89 {
        params.b89 = v;
    }
    params.validate()?;
    let cfg = args.solver.config(SolverConfig::rk4(CASA_STEP))?;
    let run = run_scenario(&params, args.t_end, args.dt_out, &cfg)?;
    let csv = age_csv(&run.series, transit_core::casa::POOLS);
    let params_json = serde_json::to_vec(&params).expect("parameters serialize");
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: &argv[1..],
        subcommand: "casa",
        input_path: None,
        input_sha256: sha256_hex(&params_json),
        output_path: &args.output,
        output_sha256: sha256_hex(csv.as_bytes()),
        config: CasaEcho { t_end: args.t_end, dt_out: args.dt_out, params: &params, solver: &cfg },
    };
    write_with_manifest(&args.output, &csv, manifest).map_err(|e| io_failure(&args.output, e))?;
    Ok(0)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Validate(a) => validate(a),
        Command::Simulate(a) => simulate(a, &argv),
        Command::Autonomous(a) => autonomous(a),
        Command::Casa(a) => casa(a, &argv),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
