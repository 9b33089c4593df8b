//! Command-line front end for `dvarint-core`: integration runs, residual
//! reports and convergence-order studies.
//!
//! Exit codes: 0 success, 1 configuration error, 2 solver failure (partial
//! output is still written), 3 I/O failure.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;
pub mod report;
pub mod sim;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{ConfigMap, Format, Initial, RunConfig, SchemeName};
pub use output::RunDocument;
pub use report::{OrderReport, OrderRow, ResidualReport};
pub use sim::{Record, RunOutcome};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Solver(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

fn failure(outcome: &RunOutcome) -> Result<(), CliError> {
    match &outcome.failure {
        Some((step, e)) => Err(CliError::Solver(format!("step {step}: {e}"))),
        None => Ok(()),
    }
}

/// Integrates and writes one record per step.
pub fn cmd_run(cfg: &RunConfig) -> Result<(), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let outcome = sim::simulate(cfg, &mut rng)?;
    log::info!(
        "{} on {}: {} steps",
        cfg.scheme,
        cfg.model.name,
        outcome.completed_steps()
    );
    output::write_output(cfg.output.as_deref(), &output::render_run(cfg, &outcome))?;
    failure(&outcome)
}

/// Integrates with at least two tangents and writes a [`ResidualReport`].
pub fn cmd_residuals(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.tangents < 2 {
        return Err(CliError::Config(
            "residual reports need tangents ≥ 2".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let outcome = sim::simulate(cfg, &mut rng)?;
    let report = report::residual_report(cfg, &outcome, &mut rng)?;
    output::write_output(
        cfg.output.as_deref(),
        &output::render_report(cfg.format, &report),
    )?;
    failure(&outcome)
}

/// Runs an order study over `cfg.taus` and writes an [`OrderReport`].
pub fn cmd_order(cfg: &RunConfig) -> Result<(), CliError> {
    let report = report::order_study(cfg)?;
    output::write_output(
        cfg.output.as_deref(),
        &output::render_order(cfg.format, &report),
    )
}
