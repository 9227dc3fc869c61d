//! `cas-lab`: command-line front end for the caslab numerical laboratory.
//!
//! Each subcommand reads an optional TOML config, runs one pipeline and
//! writes its artifacts plus a `summary.json` (or `summary.csv`) into the
//! output directory. Exit codes: 0 success, 2 configuration error, 3
//! numerical failure (with `error.json` in the output directory), 1 I/O.

mod commands;
mod config;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use config::{Config, MetricSpec, Num};
use output::{Format, Outputs};

#[derive(Debug)]
pub enum CliError {
    Config { message: String, position: Option<(usize, usize)> },
    Numerical(caslab::CasError),
    Io(String),
}

impl From<caslab::CasError> for CliError {
    fn from(e: caslab::CasError) -> Self {
        CliError::Numerical(e)
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config { message, position: Some((l, c)) } => {
                write!(f, "config error at line {l}, column {c}: {message}")
            }
            CliError::Config { message, position: None } => write!(f, "config error: {message}"),
            CliError::Numerical(e) => write!(f, "numerical failure: {e}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "cas-lab", version, about = "Complex affine spheres and positive complex metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory [default: out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Grid size of the subcommand (a power of two).
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Solver tolerance of the subcommand.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Worker threads for data-parallel loops.
    #[arg(long, global = true, env = "CAS_LAB_THREADS", value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,
    #[arg(long, global = true, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Newton solve of the Gauss equation.
    Solve,
    /// Continuation along a twistor or HLL ray with fold detection.
    Ray,
    /// Flat connection assembly and loop holonomy.
    Holonomy,
    /// Operator spectrum or invertibility scan.
    Spectrum,
    /// Closed-form example catalogue.
    Verify,
    /// Power-series transport along a complex vector field.
    Transport,
    /// Measurable Riemann mapping on a padded window.
    Beltrami,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Ray => "ray",
            Command::Holonomy => "holonomy",
            Command::Spectrum => "spectrum",
            Command::Verify => "verify",
            Command::Transport => "transport",
            Command::Beltrami => "beltrami",
        }
    }

    fn default_metric(self) -> Option<MetricSpec> {
        match self {
            Command::Solve | Command::Ray | Command::Spectrum => {
                Some(MetricSpec::Flat { lambda: Num::Real(1.0), mu: Num::Real(0.0) })
            }
            Command::Holonomy => Some(MetricSpec::Hyperbolic {}),
            _ => None,
        }
    }
}

/// Config file plus command-line overrides.
fn resolve(cli: &Cli) -> Result<Config, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = cli.grid {
        match cli.command {
            Command::Beltrami => cfg.beltrami.n = n,
            Command::Verify => cfg.verify.n = n,
            Command::Transport => cfg.transport.order = n,
            _ => cfg.grid.n = n,
        }
    }
    if let Some(t) = cli.tol {
        match cli.command {
            Command::Beltrami => cfg.beltrami.tol = t,
            _ => cfg.solver.tol = t,
        }
    }
    if cfg.metric.is_none() {
        cfg.metric = cli.command.default_metric();
    }
    cfg.out = cli.out.clone().or(cfg.out).or_else(|| Some(PathBuf::from("out")));
    cfg.validate()?;
    Ok(cfg)
}

fn error_kind(e: &caslab::CasError) -> String {
    let dbg = format!("{e:?}");
    dbg.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Unknown").to_string()
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve(cli)?;
    if let Some(n) = cli.threads {
        // A second initialization (e.g. in tests) keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global();
    }
    let dir = cfg.out.clone().expect("resolved");
    let mut out = Outputs::new(dir, cli.format, cli.command.name(), &cfg)?;
    let result = match cli.command {
        Command::Solve => commands::solve(&cfg, &mut out),
        Command::Ray => commands::ray(&cfg, &mut out),
        Command::Holonomy => commands::holonomy(&cfg, &mut out),
        Command::Spectrum => commands::spectrum(&cfg, &mut out),
        Command::Verify => commands::verify(&cfg, &mut out),
        Command::Transport => commands::transport(&cfg, &mut out),
        Command::Beltrami => commands::beltrami(&cfg, &mut out),
    };
    match result {
        Ok(summary) => {
            let artifacts = out.finish(&summary)?;
            println!("{}: wrote {} artifacts to {}", cli.command.name(), artifacts.len(), cfg.out.unwrap().display());
            Ok(())
        }
        Err(CliError::Numerical(e)) => {
            let diag = json!({ "kind": error_kind(&e), "message": e.to_string() });
            out.write_json("error.json", &diag)?;
            eprintln!("{}", serde_json::to_string(&out.envelope(&diag)).expect("diagnostics serialize"));
            Err(CliError::Numerical(e))
        }
        Err(e) => Err(e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cas-lab: {e}");
            ExitCode::from(e.code())
        }
    }
}
