//! CSV and run-manifest writers.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use transit_core::ages::AgeTimeSeries;
use transit_core::numerics::Trajectory;

/// Seventeen significant digits: enough to round-trip any `f64`.
pub fn number(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_owned()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_owned()
    } else {
        format!("{v:.16e}")
    }
}

fn push_row(out: &mut String, values: impl IntoIterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(',');
        }
        first = false;
        out.push_str(&number(v));
    }
    out.push('\n');
}

fn header(d: usize, ages: bool) -> String {
    let mut cols = vec!["t".to_owned()];
    cols.extend((1..=d).map(|i| format!("x_{i}")));
    if ages {
        cols.extend((1..=d).map(|i| format!("abar_{i}")));
    }
    cols.push("total_x".into());
    if ages {
        cols.extend(["R_t", "M_t", "R_frozen", "M_frozen"].map(String::from));
    }
    cols.join(",") + "\n"
}

pub fn mass_csv(traj: &Trajectory, d: usize) -> String {
    let mut out = header(d, false);
    for (t, x) in traj.times.iter().zip(&traj.states) {
        push_row(&mut out, std::iter::once(*t).chain(x.iter().copied()).chain([x.iter().sum()]));
    }
    out
}

pub fn age_csv(series: &AgeTimeSeries, d: usize) -> String {
    let mut out = header(d, true);
    for s in &series.samples {
        let tail = [
            s.total,
            s.transit_time.unwrap_or(f64::NAN),
            s.mean_age,
            s.frozen_transit_time.unwrap_or(f64::NAN),
            s.frozen_mean_age.unwrap_or(f64::NAN),
        ];
        push_row(
            &mut out,
            std::iter::once(s.t).chain(s.x.iter().copied()).chain(s.abar.iter().copied()).chain(tail),
        );
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Serialize)]
pub struct RunManifest<'a, C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a [String],
    pub subcommand: &'static str,
    pub input_path: Option<&'a Path>,
    /// Hash of the input file, or of the canonical JSON of the parameters
    /// when there is no input file.
    pub input_sha256: String,
    pub output_path: &'a Path,
    pub output_sha256: String,
    pub config: C,
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Writes `contents` to `output` and its manifest next to it.
pub fn write_with_manifest<C: Serialize>(
    output: &Path,
    contents: &str,
    manifest: RunManifest<'_, C>,
) -> std::io::Result<()> {
    fs::write(output, contents)?;
    let mut text = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
    let _ = writeln!(text);
    fs::write(manifest_path(output), text)
}
