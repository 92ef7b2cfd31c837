//! Figure-of-merit comparison between containerized and native runs.
//!
//! The table format is a header line followed by comma-separated rows:
//!
//! ```text
//! p,cores,nodes,fom_easey,fom_native,delta
//! 10,1000,21,412122.1,409204.8,0.71
//! ```
//!
//! The `delta` column may be left out, and a row may leave it empty. It is
//! only used for comparison against the recomputed value.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("FOM must be positive, found {0}")]
    NonPositiveFom(f64),
    #[error("cores must be at least 1")]
    NoCores,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FomSample {
    pub cube_length: u64,
    pub cores: u64,
    pub nodes: u64,
    pub fom_easey: f64,
    pub fom_native: f64,
    /// Delta as printed in the source table, if given.
    pub reported_delta: Option<f64>,
}

/// Rounds to two decimals, halves away from zero. A small tolerance absorbs
/// binary representation error so that e.g. 0.705 rounds to 0.71.
pub fn round2(x: f64) -> f64 {
    let scaled = x * 100.0;
    let nudged = scaled + scaled.signum() * 1e-9 * scaled.abs().max(1.0);
    nudged.round() / 100.0
}

/// Relative difference in percent, `100 * (easey - native) / easey`,
/// rounded to two decimals. Positive when the container run is faster.
pub fn fom_delta(fom_easey: f64, fom_native: f64) -> Result<f64, MetricsError> {
    if fom_easey.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(MetricsError::NonPositiveFom(fom_easey));
    }
    Ok(round2(100.0 * (fom_easey - fom_native) / fom_easey))
}

pub fn fom_per_core(fom: f64, cores: u64) -> Result<f64, MetricsError> {
    if cores == 0 {
        return Err(MetricsError::NoCores);
    }
    Ok(fom / cores as f64)
}

pub fn load_fom_table(path: &Path) -> Result<Vec<FomSample>, MetricsError> {
    let text = std::fs::read_to_string(path).map_err(|e| MetricsError::Parse {
        line: 0,
        message: format!("{}: {e}", path.display()),
    })?;
    parse_fom_table(&text)
}

pub fn parse_fom_table(text: &str) -> Result<Vec<FomSample>, MetricsError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = lines.next().ok_or(MetricsError::Parse {
        line: 0,
        message: "empty table".into(),
    })?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    const REQUIRED: [&str; 5] = ["p", "cores", "nodes", "fom_easey", "fom_native"];
    let with_delta = columns.len() == 6 && columns[5] == "delta";
    if columns[..columns.len().min(5)] != REQUIRED[..] || !(columns.len() == 5 || with_delta) {
        return Err(MetricsError::Parse {
            line: hline,
            message: format!("unexpected header {header:?}"),
        });
    }

    let mut samples = Vec::new();
    for (line, row) in lines {
        let err = |message: String| MetricsError::Parse { line, message };
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(err(format!(
                "expected {} fields, found {}",
                columns.len(),
                fields.len()
            )));
        }
        let int = |i: usize| {
            fields[i]
                .parse::<u64>()
                .map_err(|_| err(format!("{} is not an integer: {:?}", columns[i], fields[i])))
        };
        let float = |i: usize| {
            fields[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("{} is not a number: {:?}", columns[i], fields[i])))
        };
        let sample = FomSample {
            cube_length: int(0)?,
            cores: int(1)?,
            nodes: int(2)?,
            fom_easey: float(3)?,
            fom_native: float(4)?,
            reported_delta: if !with_delta || fields[5].is_empty() {
                None
            } else {
                Some(float(5)?)
            },
        };
        let cube = sample.cube_length.checked_pow(3);
        if cube != Some(sample.cores) {
            return Err(err(format!(
                "cores {} is not the cube of p={}",
                sample.cores, sample.cube_length
            )));
        }
        if sample.nodes == 0 {
            return Err(err("nodes must be at least 1".into()));
        }
        if sample.fom_easey <= 0.0 {
            return Err(err(format!(
                "fom_easey must be positive, found {}",
                sample.fom_easey
            )));
        }
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(MetricsError::Parse {
            line: hline,
            message: "table has no rows".into(),
        });
    }
    Ok(samples)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub cube_length: u64,
    pub cores: u64,
    pub nodes: u64,
    pub delta: f64,
    pub fom_per_core_easey: f64,
    pub fom_per_core_native: f64,
}

pub fn report_rows(samples: &[FomSample]) -> Result<Vec<ReportRow>, MetricsError> {
    samples
        .iter()
        .map(|s| {
            Ok(ReportRow {
                cube_length: s.cube_length,
                cores: s.cores,
                nodes: s.nodes,
                delta: fom_delta(s.fom_easey, s.fom_native)?,
                fom_per_core_easey: fom_per_core(s.fom_easey, s.cores)?,
                fom_per_core_native: fom_per_core(s.fom_native, s.cores)?,
            })
        })
        .collect()
}

/// Fixed-width text table, one row per sample.
pub fn render_report(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>4} {:>7} {:>6} {:>8} {:>14} {:>14}",
        "p", "cores", "nodes", "delta%", "fom/core easey", "fom/core native"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:>4} {:>7} {:>6} {:>+8.2} {:>14.4} {:>14.4}",
            r.cube_length, r.cores, r.nodes, r.delta, r.fom_per_core_easey, r.fom_per_core_native
        );
    }
    out
}
