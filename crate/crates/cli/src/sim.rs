//! Integration drivers that turn a [`RunConfig`] into per-step records.

use std::f64::consts::PI;

use dvarint_core::field::{
    box_advance, bridges_energy, field_canonical_step, field_del_step, multisymplectic_residual,
    omega0_row_sum, FieldRow,
};
use dvarint_core::mechanics::{
    discrete_legendre, inverse_discrete_legendre, symplectic_area, PhasePoint, Propagator, StepMap,
};
use dvarint_core::models::{kink_antikink_row, make_field, make_mechanics};
use dvarint_core::verify::{random_vector, ResidualSeries};
use dvarint_core::Error as CoreError;
use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Initial, RunConfig, SchemeName};
use crate::CliError;

/// Speed of the kink-antikink pair used as default sine-Gordon data.
pub const KINK_SPEED: f64 = 0.2;

/// One output row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub step: usize,
    pub time: f64,
    pub state: Vec<f64>,
    pub energy: f64,
    /// Change of each tracked structure pair since step 0.
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state_columns: Vec<String>,
    pub residual_columns: Vec<String>,
    pub records: Vec<Record>,
    /// Structure 2-form of each tangent pair at each recorded step: `ω` for
    /// mechanics and wave runs, the row sum of `ω⁰` for box runs.
    pub areas: Vec<Vec<f64>>,
    /// Per-cell multisymplectic residuals of the first tangent pair (box runs).
    pub cell_residuals: Option<ResidualSeries>,
    /// Step whose solve failed, with the solver error.
    pub failure: Option<(usize, CoreError)>,
}

impl RunOutcome {
    fn new(state_columns: Vec<String>, prefix: &str, tangents: usize) -> Self {
        let pairs = pairs(tangents);
        Self {
            state_columns,
            residual_columns: pairs
                .iter()
                .map(|&(a, b)| pair_name(prefix, a, b, tangents))
                .collect(),
            records: Vec::new(),
            areas: vec![Vec::new(); pairs.len()],
            cell_residuals: None,
            failure: None,
        }
    }

    /// Full column list of the CSV output.
    pub fn columns(&self) -> Vec<String> {
        let mut cols = vec!["step".to_string(), "time".to_string()];
        cols.extend(self.state_columns.iter().cloned());
        cols.push("energy".into());
        cols.extend(self.residual_columns.iter().cloned());
        cols
    }

    /// Steps actually taken.
    pub fn completed_steps(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    fn push(&mut self, step: usize, tau: f64, state: Vec<f64>, energy: f64, areas: Vec<f64>) {
        for (series, a) in self.areas.iter_mut().zip(areas) {
            series.push(a);
        }
        let residuals = self.areas.iter().map(|s| s[s.len() - 1] - s[0]).collect();
        self.records.push(Record {
            step,
            time: step as f64 * tau,
            state,
            energy,
            residuals,
        });
    }
}

fn pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .collect()
}

fn pair_name(prefix: &str, a: usize, b: usize, n: usize) -> String {
    if n <= 10 {
        format!("{prefix}_{a}{b}")
    } else {
        format!("{prefix}_{a}_{b}")
    }
}

fn config_err(e: CoreError) -> CliError {
    CliError::Config(e.to_string())
}

/// Central-difference image of `dx` under `f` at `x`.
fn fd_push<F>(f: F, x: &[f64], dx: &[f64], rel_step: f64) -> Result<Vec<f64>, CoreError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, CoreError>,
{
    let norm = dx.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(dx.to_vec());
    }
    let e = rel_step * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let shifted =
        |s: f64| -> Vec<f64> { x.iter().zip(dx).map(|(a, d)| a + s * d / norm).collect() };
    let plus = f(&shifted(e))?;
    let minus = f(&shifted(-e))?;
    Ok(plus
        .iter()
        .zip(&minus)
        .map(|(a, b)| (a - b) / (2.0 * e) * norm)
        .collect())
}

/// Integrates the configured model, stopping early at the first solver
/// failure. Tangent variations are drawn from `rng`.
pub fn simulate(cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Result<RunOutcome, CliError> {
    match cfg.scheme {
        SchemeName::LeapfrogField | SchemeName::CanonicalField => run_wave(cfg, rng),
        SchemeName::Box => run_box(cfg, rng),
        _ => run_mechanics(cfg, rng),
    }
}

fn pair_areas(t: &[DVector<f64>]) -> Vec<f64> {
    pairs(t.len())
        .into_iter()
        .map(|(a, b)| symplectic_area(t[a].as_slice(), t[b].as_slice()).expect("equal lengths"))
        .collect()
}

fn run_mechanics(cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Result<RunOutcome, CliError> {
    let (lagrangian, hamiltonian) = make_mechanics(&cfg.model).map_err(config_err)?;
    let n = hamiltonian.dim();
    let z0 = match &cfg.initial {
        Initial::Default => PhasePoint::from_pq(&vec![0.0; n], &vec![1.0; n]),
        Initial::Values(v) if v.len() == 2 * n => PhasePoint::new(v.clone()).map_err(config_err)?,
        Initial::Values(v) => {
            return Err(CliError::Config(format!(
                "initial: expected {} values (p then q), got {}",
                2 * n,
                v.len()
            )))
        }
        Initial::Kink => {
            return Err(CliError::Config(
                "kink initial data applies to field models".into(),
            ))
        }
    };
    let tangents: Vec<DVector<f64>> = (0..cfg.tangents)
        .map(|_| DVector::from_vec(random_vector(rng, 2 * n, 1.0)))
        .collect();
    let columns = (0..n)
        .map(|i| format!("p{i}"))
        .chain((0..n).map(|i| format!("q{i}")))
        .collect();
    let mut out = RunOutcome::new(columns, "omega", cfg.tangents);
    let (tau, settings) = (cfg.tau, cfg.solver());

    if cfg.scheme == SchemeName::Del {
        // The Lagrangian scheme advances (q_{k-1}, q_k); records show
        // z_k = (p_k, q_k) with p_k from the discrete Legendre map.
        let l = &lagrangian;
        let pair_of = |z: &[f64]| -> Result<Vec<f64>, CoreError> {
            let (p, q) = z.split_at(n);
            let mut prev = inverse_discrete_legendre(l, q, p, tau, &settings)?;
            prev.extend_from_slice(q);
            Ok(prev)
        };
        let phase_of = |pair: &[f64]| -> Result<Vec<f64>, CoreError> {
            let (prev, cur) = pair.split_at(n);
            let mut p = discrete_legendre(l, prev, cur, tau)?;
            p.extend_from_slice(cur);
            Ok(p)
        };
        let setup = || -> Result<(PhasePoint, Vec<DVector<f64>>), CoreError> {
            let pair = pair_of(z0.as_slice())?;
            let t = tangents
                .iter()
                .map(|t| fd_push(pair_of, z0.as_slice(), t.as_slice(), 1e-4).map(DVector::from_vec))
                .collect::<Result<_, _>>()?;
            Ok((PhasePoint(DVector::from_vec(pair)), t))
        };
        let (pair, pair_tangents) = setup().map_err(|e| CliError::Solver(e.to_string()))?;
        let mut prop = Propagator::new(StepMap::Del(l), pair, pair_tangents, tau, settings)
            .map_err(config_err)?;
        for k in 0..=cfg.steps {
            if k > 0 {
                if let Err(e) = prop.advance() {
                    out.failure = Some((k, e));
                    break;
                }
            }
            let pair = prop.state().as_slice();
            let z = phase_of(pair).map_err(|e| CliError::Solver(e.to_string()))?;
            let t: Vec<DVector<f64>> = prop
                .tangents()
                .iter()
                .map(|t| fd_push(phase_of, pair, t.as_slice(), 1e-4).map(DVector::from_vec))
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::Solver(e.to_string()))?;
            let z = PhasePoint(DVector::from_vec(z));
            let energy = hamiltonian.energy(&z);
            out.push(k, tau, z.as_slice().to_vec(), energy, pair_areas(&t));
        }
        return Ok(out);
    }

    let map = match cfg.scheme {
        SchemeName::Canonical => StepMap::Canonical(&hamiltonian),
        SchemeName::Midpoint => StepMap::Midpoint(&hamiltonian),
        SchemeName::Order4 => StepMap::FourthOrder(&hamiltonian),
        SchemeName::ExplicitEuler => StepMap::ExplicitEuler(&hamiltonian),
        other => unreachable!("{other} is not a mechanics scheme"),
    };
    let mut prop = Propagator::new(map, z0, tangents, tau, settings).map_err(config_err)?;
    for k in 0..=cfg.steps {
        if k > 0 {
            if let Err(e) = prop.advance() {
                out.failure = Some((k, e));
                break;
            }
        }
        let z = prop.state();
        out.push(
            k,
            tau,
            z.as_slice().to_vec(),
            hamiltonian.energy(z),
            pair_areas(prop.tangents()),
        );
    }
    Ok(out)
}

fn run_wave(cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Result<RunOutcome, CliError> {
    let model = make_field(&cfg.model)
        .map_err(config_err)?
        .wave()
        .ok_or_else(|| CliError::Config(format!("`{}` is not a wave model", cfg.model.name)))?;
    let (n, h, tau, settings) = (cfg.extent, cfg.h, cfg.tau, cfg.solver());
    // state (u, π) of a row
    let x0 = match &cfg.initial {
        Initial::Default => {
            let mut x: Vec<f64> = (0..n)
                .map(|j| 0.5 * (2.0 * PI * j as f64 / n as f64).sin())
                .collect();
            x.resize(2 * n, 0.0);
            x
        }
        Initial::Values(v) if v.len() == 2 * n => v.clone(),
        Initial::Values(v) => {
            return Err(CliError::Config(format!(
                "initial: expected {} values (u then π), got {}",
                2 * n,
                v.len()
            )))
        }
        Initial::Kink => {
            return Err(CliError::Config(
                "kink initial data applies to Bridges models".into(),
            ))
        }
    };
    let scheme = cfg.scheme;
    let step = |x: &[f64]| -> Result<Vec<f64>, CoreError> {
        let (u, pi) = x.split_at(n);
        match scheme {
            SchemeName::LeapfrogField => {
                // the wave Legendre map is π^i = Δ_t u^{i-1}
                let prev: Vec<f64> = u.iter().zip(pi).map(|(a, p)| a - tau * p).collect();
                let next = field_del_step(&model.lagrangian, &prev, u, tau, h, &settings)?;
                let pi_next: Vec<f64> = next.iter().zip(u).map(|(a, b)| (a - b) / tau).collect();
                Ok(next.into_iter().chain(pi_next).collect())
            }
            _ => {
                let (u1, p1) = field_canonical_step(&model.hamiltonian, u, pi, tau, h, &settings)?;
                Ok(u1.into_iter().chain(p1).collect())
            }
        }
    };
    // h Σ_j (ξ_π η_u - ξ_u η_π)
    let area = |xi: &[f64], eta: &[f64]| -> f64 {
        h * (0..n)
            .map(|j| xi[n + j] * eta[j] - xi[j] * eta[n + j])
            .sum::<f64>()
    };
    let areas = |t: &[Vec<f64>]| -> Vec<f64> {
        pairs(t.len())
            .into_iter()
            .map(|(a, b)| area(&t[a], &t[b]))
            .collect()
    };
    let energy = |x: &[f64]| -> Result<f64, CliError> {
        model
            .hamiltonian
            .row_energy(&x[..n], &x[n..], h)
            .map_err(config_err)
    };

    let columns = (0..n)
        .map(|j| format!("u{j}"))
        .chain((0..n).map(|j| format!("pi{j}")))
        .collect();
    let mut out = RunOutcome::new(columns, "omega", cfg.tangents);
    let mut x = x0;
    let mut tangents: Vec<Vec<f64>> = (0..cfg.tangents)
        .map(|_| random_vector(rng, 2 * n, 1.0))
        .collect();
    out.push(0, tau, x.clone(), energy(&x)?, areas(&tangents));
    for k in 1..=cfg.steps {
        let advanced = step(&x).and_then(|next| {
            // The maps are nearly linear, so a wide step keeps rounding out of
            // the tangents without a visible truncation error.
            let t = tangents
                .iter()
                .map(|t| fd_push(step, &x, t, 1e-3))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((next, t))
        });
        match advanced {
            Ok((next, t)) => {
                x = next;
                tangents = t;
            }
            Err(e) => {
                out.failure = Some((k, e));
                break;
            }
        }
        out.push(k, tau, x.clone(), energy(&x)?, areas(&tangents));
    }
    Ok(out)
}

fn run_box(cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Result<RunOutcome, CliError> {
    let sys = make_field(&cfg.model)
        .map_err(config_err)?
        .bridges()
        .ok_or_else(|| CliError::Config(format!("`{}` is not a Bridges model", cfg.model.name)))?;
    let (n, h, tau, settings) = (cfg.extent, cfg.h, cfg.tau, cfg.solver());
    let d = sys.dim();
    let kink = || kink_antikink_row(n, n as f64 * h, KINK_SPEED);
    let row = match &cfg.initial {
        Initial::Kink => kink(),
        Initial::Default if cfg.model.name == "sine_gordon_bridges" => kink(),
        Initial::Default => {
            let k = 2.0 * PI / (n as f64 * h);
            FieldRow::from_fn(h, d, n, |j| {
                let x = j as f64 * h;
                let mut z = vec![0.0; d];
                z[0] = 0.5 * (k * x).sin();
                if d > 2 {
                    z[2] = 0.5 * k * (k * x).cos();
                }
                z
            })
        }
        Initial::Values(v) if v.len() == d * n => FieldRow::new(h, d, v.clone()),
        Initial::Values(v) => {
            return Err(CliError::Config(format!(
                "initial: expected {} values ({d} per node), got {}",
                d * n,
                v.len()
            )))
        }
    }
    .map_err(config_err)?;

    let names = ["u", "v", "w"];
    let columns = (0..d)
        .flat_map(|a| {
            (0..n).map(move |j| match names.get(a) {
                Some(c) if d == 3 => format!("{c}{j}"),
                _ => format!("z{a}_{j}"),
            })
        })
        .collect();
    // component-major view of a node-interleaved row
    let state = |r: &FieldRow| -> Vec<f64> { (0..d).flat_map(|a| r.component(a)).collect() };
    let areas = |t: &[FieldRow]| -> Vec<f64> {
        pairs(t.len())
            .into_iter()
            .map(|(a, b)| omega0_row_sum(&sys, &t[a], &t[b]).expect("matching rows"))
            .collect()
    };

    let mut out = RunOutcome::new(columns, "omega0_sum", cfg.tangents);
    let mut tangents: Vec<FieldRow> = (0..cfg.tangents)
        .map(|_| FieldRow::new(h, d, random_vector(rng, d * n, 1.0)).expect("row length"))
        .collect();
    let mut rows = vec![row.clone()];
    let mut history: Vec<Vec<FieldRow>> =
        tangents.iter().take(2).map(|t| vec![t.clone()]).collect();
    let mut row = row;
    out.push(
        0,
        tau,
        state(&row),
        bridges_energy(&sys, &row).map_err(config_err)?,
        areas(&tangents),
    );
    for k in 1..=cfg.steps {
        match box_advance(&sys, &row, &tangents, tau, &settings) {
            Ok((next, t)) => {
                row = next;
                tangents = t;
            }
            Err(e) => {
                out.failure = Some((k, e));
                break;
            }
        }
        rows.push(row.clone());
        for (hist, t) in history.iter_mut().zip(&tangents) {
            hist.push(t.clone());
        }
        out.push(
            k,
            tau,
            state(&row),
            bridges_energy(&sys, &row).map_err(config_err)?,
            areas(&tangents),
        );
    }
    if history.len() == 2 && rows.len() > 1 {
        out.cell_residuals = Some(
            multisymplectic_residual(&sys, &rows, &history[0], &history[1], tau)
                .map_err(config_err)?,
        );
    }
    Ok(out)
}
