use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dvarint_cli::{cmd_order, cmd_residuals, cmd_run, CliError, ConfigMap, RunConfig};
use log::LevelFilter;

/// Difference discrete variational integrators with structure diagnostics.
#[derive(Parser)]
#[command(name = "dvarint", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate and write one record per step.
    Run(Options),
    /// Integrate and write a symplectic/multisymplectic residual report.
    Residuals(Options),
    /// Measure the convergence order over a list of step sizes.
    Order(Options),
}

/// Flags override entries of the `--config` file.
#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct Options {
    /// `key = value` configuration file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    /// Model parameter, repeatable.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    params: Vec<String>,
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    /// Spatial step of field runs.
    #[arg(long)]
    h: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    /// Periodic nodes of field runs.
    #[arg(long)]
    extent: Option<String>,
    /// Comma-separated values, a file of values, `kink` or `default`.
    #[arg(long)]
    initial: Option<String>,
    #[arg(long)]
    tangents: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Output file; standard output when absent.
    #[arg(long)]
    output: Option<String>,
    /// csv or json.
    #[arg(long)]
    format: Option<String>,
    /// Newton residual tolerance.
    #[arg(long)]
    tolerance: Option<String>,
    #[arg(long = "max-iterations")]
    max_iterations: Option<String>,
    /// Random windows for the identity check of `residuals`.
    #[arg(long)]
    windows: Option<String>,
    /// Comma-separated step sizes for `order`.
    #[arg(long)]
    taus: Option<String>,
    /// Final time for `order`.
    #[arg(long)]
    time: Option<String>,
}

impl Options {
    fn config(&self) -> Result<RunConfig, CliError> {
        let mut map = match &self.config {
            Some(path) => ConfigMap::read(path)?,
            None => ConfigMap::new(),
        };
        let flags = [
            ("model", &self.model),
            ("scheme", &self.scheme),
            ("tau", &self.tau),
            ("h", &self.h),
            ("steps", &self.steps),
            ("extent", &self.extent),
            ("initial", &self.initial),
            ("tangents", &self.tangents),
            ("seed", &self.seed),
            ("output", &self.output),
            ("format", &self.format),
            ("tolerance", &self.tolerance),
            ("max_iterations", &self.max_iterations),
            ("windows", &self.windows),
            ("taus", &self.taus),
            ("time", &self.time),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                map.set(key, v.as_str());
            }
        }
        for p in &self.params {
            let (name, value) = p
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--param `{p}`: expected NAME=VALUE")))?;
            map.set(format!("param.{}", name.trim()), value.trim());
        }
        RunConfig::from_map(&map)
    }
}

fn init_logging() -> Result<(), CliError> {
    let level = match std::env::var("DVARINT_LOG").as_deref() {
        Err(_) | Ok("") => LevelFilter::Warn,
        Ok("quiet") => LevelFilter::Off,
        Ok("info") => LevelFilter::Info,
        Ok("debug") => LevelFilter::Debug,
        Ok(other) => {
            return Err(CliError::Config(format!(
                "DVARINT_LOG = `{other}` (expected quiet, info or debug)"
            )))
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    Ok(())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    init_logging()?;
    match cli.command {
        Command::Run(o) => cmd_run(&o.config()?),
        Command::Residuals(o) => cmd_residuals(&o.config()?),
        Command::Order(o) => cmd_order(&o.config()?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dvarint: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
