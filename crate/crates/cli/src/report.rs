//! Residual reports and convergence-order studies.

use dvarint_core::mechanics::PhasePoint;
use dvarint_core::models::{harmonic_exact, make_field, make_mechanics};
use dvarint_core::verify::{
    max_identity_residual, BoxForm, CanonicalForm, DerivativeMode, FourthOrderForm, MidpointForm,
    ResidualSeries,
};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SchemeName};
use crate::sim::{simulate, RunOutcome};
use crate::CliError;

/// Summary of the structure and energy behaviour of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub model: String,
    pub scheme: String,
    pub tau: f64,
    /// Steps completed.
    pub steps: usize,
    pub seed: u64,
    /// `max |ω_{k+1} - ω_k|` over steps and tangent pairs (mechanics and
    /// wave runs; the wave form is summed over the row).
    pub max_symplectic_residual: Option<f64>,
    pub mean_symplectic_residual: Option<f64>,
    /// Per-cell multisymplectic residuals of the first tangent pair (box runs).
    pub max_multisymplectic_residual: Option<f64>,
    pub mean_multisymplectic_residual: Option<f64>,
    /// `max |ω_k - ω_0|`, with the row sum of `ω⁰` for box runs.
    pub max_structure_drift: f64,
    /// Geometric-mean factor by which the first pair's form changes per step.
    pub growth_factor: Option<f64>,
    /// Largest cohomology-identity residual over random windows, for schemes
    /// with an Euler-Lagrange form.
    pub identity_residual: Option<f64>,
    pub identity_windows: usize,
    /// Least-squares trend of the energy, per step.
    pub energy_slope: f64,
    pub energy_max_deviation: f64,
}

impl ResidualReport {
    /// Ordered `(name, value)` pairs for CSV output; absent values are empty.
    pub fn fields(&self) -> Vec<(&'static str, String)> {
        let num = |v: f64| format!("{v:.16e}");
        let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
        vec![
            ("model", self.model.clone()),
            ("scheme", self.scheme.clone()),
            ("tau", num(self.tau)),
            ("steps", self.steps.to_string()),
            ("seed", self.seed.to_string()),
            ("max_symplectic_residual", opt(self.max_symplectic_residual)),
            (
                "mean_symplectic_residual",
                opt(self.mean_symplectic_residual),
            ),
            (
                "max_multisymplectic_residual",
                opt(self.max_multisymplectic_residual),
            ),
            (
                "mean_multisymplectic_residual",
                opt(self.mean_multisymplectic_residual),
            ),
            ("max_structure_drift", num(self.max_structure_drift)),
            ("growth_factor", opt(self.growth_factor)),
            ("identity_residual", opt(self.identity_residual)),
            ("identity_windows", self.identity_windows.to_string()),
            ("energy_slope", num(self.energy_slope)),
            ("energy_max_deviation", num(self.energy_max_deviation)),
        ]
    }
}

fn solver_err(e: dvarint_core::Error) -> CliError {
    CliError::Solver(e.to_string())
}

/// Builds the report from a finished (or failed) run. Identity windows are
/// drawn from `rng` after the run's tangents.
pub fn residual_report(
    cfg: &RunConfig,
    outcome: &RunOutcome,
    rng: &mut ChaCha8Rng,
) -> Result<ResidualReport, CliError> {
    let steps = outcome.completed_steps();
    let mut step_residuals = Vec::new();
    let mut drift: f64 = 0.0;
    for series in &outcome.areas {
        step_residuals.extend(series.windows(2).map(|w| w[1] - w[0]));
        drift = series
            .iter()
            .fold(drift, |m, a| m.max((a - series[0]).abs()));
    }
    let step_residuals = ResidualSeries::new(cfg.tau, step_residuals);
    let growth_factor = outcome.areas.first().and_then(|s| {
        let g = (s[s.len() - 1] / s[0]).powf(1.0 / steps as f64);
        (steps > 0 && g.is_finite()).then_some(g)
    });
    let (symplectic, multisymplectic) = match &outcome.cell_residuals {
        Some(cells) => (None, Some(cells)),
        None if cfg.scheme == SchemeName::Box => (None, None),
        None => (Some(&step_residuals), None),
    };
    let energies: Vec<f64> = outcome.records.iter().map(|r| r.energy).collect();
    let e0 = energies.first().copied().unwrap_or(0.0);
    Ok(ResidualReport {
        model: cfg.model.name.clone(),
        scheme: cfg.scheme.to_string(),
        tau: cfg.tau,
        steps,
        seed: cfg.seed,
        max_symplectic_residual: symplectic.map(ResidualSeries::max_abs),
        mean_symplectic_residual: symplectic.map(ResidualSeries::mean_abs),
        max_multisymplectic_residual: multisymplectic.map(ResidualSeries::max_abs),
        mean_multisymplectic_residual: multisymplectic.map(ResidualSeries::mean_abs),
        max_structure_drift: drift,
        growth_factor,
        identity_residual: identity_residual(cfg, rng)?,
        identity_windows: cfg.windows,
        energy_slope: ResidualSeries::new(cfg.tau, energies.clone()).slope(),
        energy_max_deviation: energies.iter().fold(0.0, |m, e| m.max((e - e0).abs())),
    })
}

fn identity_residual(cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Result<Option<f64>, CliError> {
    let mode = DerivativeMode::FiniteDifference;
    let (samples, tau) = (cfg.windows, cfg.tau);
    let value = match cfg.scheme {
        SchemeName::Canonical | SchemeName::Midpoint | SchemeName::Order4 => {
            let (_, system) = make_mechanics(&cfg.model).map_err(solver_err)?;
            let system = &system;
            match cfg.scheme {
                SchemeName::Canonical => {
                    max_identity_residual(&CanonicalForm { system, tau }, rng, samples, 1.0, mode)
                }
                SchemeName::Midpoint => {
                    max_identity_residual(&MidpointForm { system, tau }, rng, samples, 1.0, mode)
                }
                _ => {
                    max_identity_residual(&FourthOrderForm { system, tau }, rng, samples, 1.0, mode)
                }
            }
        }
        SchemeName::Box => {
            let system = make_field(&cfg.model)
                .map_err(solver_err)?
                .bridges()
                .expect("validated Bridges model");
            let form = BoxForm {
                system: &system,
                tau,
                h: cfg.h,
            };
            max_identity_residual(&form, rng, samples, 1.0, mode)
        }
        _ => return Ok(None),
    };
    value.map(Some).map_err(solver_err)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderRow {
    pub tau: f64,
    pub steps: usize,
    /// Max-norm error against the exact flow at the final time.
    pub error: f64,
    /// `log(e_{i-1}/e_i) / log(τ_{i-1}/τ_i)`; absent on the first row.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderReport {
    pub model: String,
    pub scheme: String,
    pub time: f64,
    pub rows: Vec<OrderRow>,
    /// Order estimate from the two finest step sizes.
    pub observed_order: Option<f64>,
}

/// Runs the configured scheme at every step size in `cfg.taus` to the final
/// time `cfg.time` and compares with the exact harmonic-oscillator flow.
/// The runs are independent and execute concurrently.
pub fn order_study(cfg: &RunConfig) -> Result<OrderReport, CliError> {
    if cfg.taus.len() < 3 {
        return Err(CliError::Config(
            "an order study needs at least 3 values in taus".into(),
        ));
    }
    if cfg.model.name != "harmonic" {
        return Err(CliError::Config(format!(
            "order studies need a model with a closed-form flow (harmonic), not `{}`",
            cfg.model.name
        )));
    }
    if !(cfg.time > 0.0 && cfg.time.is_finite()) {
        return Err(CliError::Config(format!("time = {} must be > 0", cfg.time)));
    }
    let plans = cfg
        .taus
        .iter()
        .map(|&tau| {
            let steps = (cfg.time / tau).round();
            if steps < 1.0 || (steps * tau - cfg.time).abs() > 1e-9 * cfg.time {
                return Err(CliError::Config(format!(
                    "tau = {tau} does not divide time = {}",
                    cfg.time
                )));
            }
            let mut run = cfg.clone();
            run.tau = tau;
            run.steps = steps as usize;
            run.tangents = 0;
            Ok(run)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let errors = std::thread::scope(|scope| {
        let handles: Vec<_> = plans
            .iter()
            .map(|run| scope.spawn(move || final_error(run)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("order worker panicked"))
            .collect::<Result<Vec<_>, _>>()
    })?;

    let mut rows: Vec<OrderRow> = Vec::with_capacity(plans.len());
    for (run, error) in plans.iter().zip(errors) {
        let order = rows
            .last()
            .map(|prev| (prev.error / error).ln() / (prev.tau / run.tau).ln());
        log::info!("tau {:e}: error {error:e}", run.tau);
        rows.push(OrderRow {
            tau: run.tau,
            steps: run.steps,
            error,
            order,
        });
    }
    Ok(OrderReport {
        model: cfg.model.name.clone(),
        scheme: cfg.scheme.to_string(),
        time: cfg.time,
        observed_order: rows.last().and_then(|r| r.order),
        rows,
    })
}

fn final_error(run: &RunConfig) -> Result<f64, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let outcome = simulate(run, &mut rng)?;
    if let Some((step, e)) = &outcome.failure {
        return Err(CliError::Solver(format!(
            "tau = {}, step {step}: {e}",
            run.tau
        )));
    }
    let first = &outcome.records[0].state;
    let last = &outcome.records[outcome.records.len() - 1].state;
    let z0 = PhasePoint(DVector::from_column_slice(first));
    let exact = harmonic_exact(&run.model, &z0, run.time).map_err(solver_err)?;
    Ok(last
        .iter()
        .zip(exact.as_slice())
        .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
}
