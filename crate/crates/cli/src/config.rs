//! Run configuration: a flat `key = value` file merged with command-line
//! overrides.
//!
//! Recognised keys: `model`, `scheme`, `tau`, `h`, `steps`, `extent`,
//! `initial`, `tangents`, `seed`, `output`, `format`, `tolerance`,
//! `max_iterations`, `windows`, `taus`, `time`, and `param.<name>` for model
//! parameters. Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dvarint_core::models::{ModelKind, ModelSpec};
use dvarint_core::SolverSettings;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeName {
    Del,
    Canonical,
    Midpoint,
    Order4,
    ExplicitEuler,
    LeapfrogField,
    CanonicalField,
    Box,
}

impl SchemeName {
    pub const ALL: [SchemeName; 8] = [
        SchemeName::Del,
        SchemeName::Canonical,
        SchemeName::Midpoint,
        SchemeName::Order4,
        SchemeName::ExplicitEuler,
        SchemeName::LeapfrogField,
        SchemeName::CanonicalField,
        SchemeName::Box,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeName::Del => "del",
            SchemeName::Canonical => "canonical",
            SchemeName::Midpoint => "midpoint",
            SchemeName::Order4 => "order4",
            SchemeName::ExplicitEuler => "explicit_euler",
            SchemeName::LeapfrogField => "leapfrog_field",
            SchemeName::CanonicalField => "canonical_field",
            SchemeName::Box => "box",
        }
    }

    /// The kind of model the scheme integrates.
    pub fn model_kind(self) -> ModelKind {
        match self {
            SchemeName::Del
            | SchemeName::Canonical
            | SchemeName::Midpoint
            | SchemeName::Order4
            | SchemeName::ExplicitEuler => ModelKind::Mechanics,
            SchemeName::LeapfrogField | SchemeName::CanonicalField => ModelKind::Wave,
            SchemeName::Box => ModelKind::Bridges,
        }
    }
}

impl fmt::Display for SchemeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeName {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        SchemeName::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = SchemeName::ALL.iter().map(|k| k.as_str()).collect();
                CliError::Config(format!(
                    "unknown scheme `{s}` (expected one of {})",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(CliError::Config(format!(
                "unknown format `{s}` (expected csv or json)"
            ))),
        }
    }
}

/// Initial data of a run.
#[derive(Debug, Clone, PartialEq)]
pub enum Initial {
    /// Model default: `q = 1, p = 0` for mechanics, a smooth wave for fields,
    /// kink-antikink data for sine-Gordon.
    Default,
    /// Kink-antikink pair moving at speed 0.2 (Bridges models).
    Kink,
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub scheme: SchemeName,
    pub tau: f64,
    /// Spatial step of field runs.
    pub h: f64,
    pub steps: usize,
    /// Number of periodic nodes of field runs.
    pub extent: usize,
    pub initial: Initial,
    pub tangents: usize,
    pub seed: u64,
    /// `None` writes to standard output.
    pub output: Option<PathBuf>,
    pub format: Format,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Random windows sampled by the identity check of `residuals`.
    pub windows: usize,
    /// Step sizes of an `order` study.
    pub taus: Vec<f64>,
    /// Final time of an `order` study.
    pub time: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let solver = SolverSettings::default();
        Self {
            model: ModelSpec::new("harmonic"),
            scheme: SchemeName::Midpoint,
            tau: 0.1,
            h: 0.5,
            steps: 100,
            extent: 64,
            initial: Initial::Default,
            tangents: 2,
            seed: 0,
            output: None,
            format: Format::Csv,
            tolerance: solver.tolerance,
            max_iterations: solver.max_iterations,
            windows: 100,
            taus: Vec::new(),
            time: 1.0,
        }
    }
}

/// Raw `key → value` entries; later insertions override earlier ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap(BTreeMap<String, String>);

impl ConfigMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut map = Self::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected `key = value`", n + 1))
            })?;
            map.set(key.trim(), value.trim());
        }
        Ok(map)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.0.insert(key.into(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Config(format!("{key} = `{value}`: {e}")))
}

fn parse_list(text: &str) -> Option<Vec<f64>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().ok())
        .collect()
}

fn parse_initial(value: &str) -> Result<Initial, CliError> {
    match value {
        "default" => return Ok(Initial::Default),
        "kink" => return Ok(Initial::Kink),
        _ => {}
    }
    if let Some(v) = parse_list(value) {
        return Ok(Initial::Values(v));
    }
    let text = std::fs::read_to_string(value)
        .map_err(|e| CliError::Config(format!("initial: cannot read `{value}`: {e}")))?;
    let body: String = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .collect::<Vec<_>>()
        .join(" ");
    parse_list(&body)
        .map(Initial::Values)
        .ok_or_else(|| CliError::Config(format!("initial: `{value}` holds non-numeric data")))
}

impl RunConfig {
    pub fn from_map(map: &ConfigMap) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut params = BTreeMap::new();
        for (key, value) in map.iter() {
            match key {
                "model" => cfg.model.name = value.to_string(),
                "scheme" => cfg.scheme = value.parse()?,
                "tau" => cfg.tau = parse_value(key, value)?,
                "h" => cfg.h = parse_value(key, value)?,
                "steps" => cfg.steps = parse_value(key, value)?,
                "extent" => cfg.extent = parse_value(key, value)?,
                "initial" => cfg.initial = parse_initial(value)?,
                "tangents" => cfg.tangents = parse_value(key, value)?,
                "seed" => cfg.seed = parse_value(key, value)?,
                "output" => cfg.output = Some(PathBuf::from(value)),
                "format" => cfg.format = value.parse()?,
                "tolerance" => cfg.tolerance = parse_value(key, value)?,
                "max_iterations" => cfg.max_iterations = parse_value(key, value)?,
                "windows" => cfg.windows = parse_value(key, value)?,
                "taus" => {
                    cfg.taus = parse_list(value).ok_or_else(|| {
                        CliError::Config(format!("taus = `{value}`: expected a list of numbers"))
                    })?
                }
                "time" => cfg.time = parse_value(key, value)?,
                _ => match key.strip_prefix("param.") {
                    Some(name) if !name.is_empty() => {
                        params.insert(name.to_string(), parse_value::<f64>(key, value)?);
                    }
                    _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
                },
            }
        }
        cfg.model.params = params;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let kind = self
            .model
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if kind != self.scheme.model_kind() {
            return Err(CliError::Config(format!(
                "scheme `{}` cannot integrate model `{}`",
                self.scheme, self.model.name
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(CliError::Config(format!("tau = {} must be > 0", self.tau)));
        }
        if self.steps < 1 {
            return Err(CliError::Config("steps must be ≥ 1".into()));
        }
        if kind != ModelKind::Mechanics {
            if !(self.h > 0.0 && self.h.is_finite()) {
                return Err(CliError::Config(format!("h = {} must be > 0", self.h)));
            }
            if self.extent < 3 {
                return Err(CliError::Config("extent must be ≥ 3".into()));
            }
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(CliError::Config(
                "tolerance and max_iterations must be positive".into(),
            ));
        }
        if let Some(t) = self.taus.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(CliError::Config(format!("taus entry {t} must be > 0")));
        }
        Ok(())
    }

    pub fn solver(&self) -> SolverSettings {
        SolverSettings {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(text: &str) -> Result<RunConfig, CliError> {
        RunConfig::from_map(&ConfigMap::parse(text)?)
    }

    #[test]
    fn parses_file_with_params_and_comments() {
        let cfg = config(
            "# pendulum run\nmodel = harmonic\nparam.omega = 2\nscheme=canonical\n\ntau = 0.05\nsteps = 7\ninitial = 0.5, 1\n",
        )
        .unwrap();
        assert_eq!(cfg.model.param("omega").unwrap(), 2.0);
        assert_eq!(cfg.scheme, SchemeName::Canonical);
        assert_eq!(cfg.steps, 7);
        assert_eq!(cfg.initial, Initial::Values(vec![0.5, 1.0]));
    }

    #[test]
    fn later_entries_override() {
        let mut map = ConfigMap::parse("tau = 0.1").unwrap();
        map.set("tau", "0.2");
        assert_eq!(RunConfig::from_map(&map).unwrap().tau, 0.2);
    }

    #[test]
    fn rejects_bad_input() {
        for bad in [
            "scheme = rk4",
            "model = harmonic\nscheme = box",
            "tau = -1",
            "steps = 0",
            "format = xml",
            "colour = blue",
            "param.omega = fast",
            "just a line",
            "model = nope",
            "model = pendulum\nparam.omega = 2",
        ] {
            assert!(
                matches!(config(bad), Err(CliError::Config(_))),
                "{bad} should be rejected"
            );
        }
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in SchemeName::ALL {
            assert_eq!(s.as_str().parse::<SchemeName>().unwrap(), s);
        }
    }
}
