//! CSV and JSON rendering, and whole-file output.
//!
//! CSV uses `,` separators, `\n` line ends and 17 significant digits, so every
//! double round-trips.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{Format, RunConfig};
use crate::report::{OrderReport, ResidualReport};
use crate::sim::{Record, RunOutcome};
use crate::CliError;

/// JSON document written by `run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDocument {
    pub model: String,
    pub params: BTreeMap<String, f64>,
    pub scheme: String,
    pub tau: f64,
    pub steps: usize,
    pub seed: u64,
    pub state_columns: Vec<String>,
    pub residual_columns: Vec<String>,
    pub records: Vec<Record>,
    /// Set when the run stopped at a solver failure.
    pub error: Option<String>,
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("plain data serialises");
    bytes.push(b'\n');
    bytes
}

pub fn render_run(cfg: &RunConfig, outcome: &RunOutcome) -> Vec<u8> {
    match cfg.format {
        Format::Csv => {
            let mut s = outcome.columns().join(",");
            s.push('\n');
            for r in &outcome.records {
                write!(s, "{},{}", r.step, num(r.time)).expect("string write");
                for v in r.state.iter().chain([&r.energy]).chain(&r.residuals) {
                    write!(s, ",{}", num(*v)).expect("string write");
                }
                s.push('\n');
            }
            s.into_bytes()
        }
        Format::Json => to_json(&RunDocument {
            model: cfg.model.name.clone(),
            params: cfg.model.params.clone(),
            scheme: cfg.scheme.to_string(),
            tau: cfg.tau,
            steps: cfg.steps,
            seed: cfg.seed,
            state_columns: outcome.state_columns.clone(),
            residual_columns: outcome.residual_columns.clone(),
            records: outcome.records.clone(),
            error: outcome
                .failure
                .as_ref()
                .map(|(k, e)| format!("step {k}: {e}")),
        }),
    }
}

pub fn render_report(format: Format, report: &ResidualReport) -> Vec<u8> {
    match format {
        Format::Csv => {
            let fields = report.fields();
            let header: Vec<_> = fields.iter().map(|(k, _)| *k).collect();
            let values: Vec<_> = fields.iter().map(|(_, v)| v.as_str()).collect();
            format!("{}\n{}\n", header.join(","), values.join(",")).into_bytes()
        }
        Format::Json => to_json(report),
    }
}

pub fn render_order(format: Format, report: &OrderReport) -> Vec<u8> {
    match format {
        Format::Csv => {
            let mut s = String::from("tau,steps,error,order\n");
            for r in &report.rows {
                let order = r.order.map(num).unwrap_or_default();
                writeln!(s, "{},{},{},{order}", num(r.tau), r.steps, num(r.error))
                    .expect("string write");
            }
            s.into_bytes()
        }
        Format::Json => to_json(report),
    }
}

/// Writes `bytes` to `path` through a temporary sibling file and a rename,
/// so readers never see a partial file; `None` writes to standard output.
pub fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    let io_err = |what: &str, p: &Path, e: std::io::Error| {
        CliError::Io(format!("{what} {}: {e}", p.display()))
    };
    let Some(path) = path else {
        let mut out = std::io::stdout().lock();
        return out
            .write_all(bytes)
            .and_then(|_| out.flush())
            .map_err(|e| CliError::Io(format!("standard output: {e}")));
    };
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Io(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes).map_err(|e| io_err("cannot write", &tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        io_err("cannot move output to", path, e)
    })
}
