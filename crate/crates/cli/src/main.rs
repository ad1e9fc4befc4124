//! padic-msymb: batch front end for overconvergent modular symbols and p-adic L-functions.

mod commands;
mod config;
mod encode;
mod form;

use std::io::Write;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::Value;

use config::{ConfigArgs, RunConfig};

#[derive(Parser)]
#[command(name = "padic-msymb", version, about = "Overconvergent modular symbols and p-adic L-functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rational Hecke eigensystems with their refinements.
    Classical(ConfigArgs),
    /// The overconvergent eigensymbol of the refined form.
    Lift(ConfigArgs),
    /// Special values at the listed characters and twists t^j.
    Lvalues(ConfigArgs),
    /// L-series coefficients on each tame branch.
    Lseries(ConfigArgs),
    /// Generalized eigenspace flags and the L-functions L_0, ..., L_{e-1}.
    Secondary {
        #[command(flatten)]
        args: ConfigArgs,
        /// Largest flag length searched.
        #[arg(long, default_value_t = 4)]
        max_e: usize,
        /// Add the family ramification diagnostic with truncation --family-deg.
        #[arg(long)]
        ramification: bool,
    },
    /// Two-variable L-function of the Hida family and its specializations.
    Family(ConfigArgs),
    /// Runs the acceptance suite.
    Selftest {
        #[command(flatten)]
        args: ConfigArgs,
        /// Comma list of criteria to run; all when absent.
        #[arg(long)]
        only: Option<String>,
    },
}

/// Pretty JSON with a trailing newline, to the --out file or stdout.
fn emit(out: Option<&std::path::Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => Ok(std::io::stdout().write_all(text.as_bytes())?),
    }
}

fn json_text(v: &Value) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn resolve(args: ConfigArgs) -> Result<RunConfig> {
    let args = args.load()?;
    let file = match &args.eigenform {
        Some(path) => {
            let d = form::read_eigenform(path)?;
            Some((d.n, d.p, d.k))
        }
        None => None,
    };
    RunConfig::resolve(args, file)
}

fn run(cli: Cli) -> Result<bool> {
    let (doc, cfg) = match cli.command {
        Command::Classical(a) => {
            let cfg = resolve(a)?;
            (commands::classical(&cfg)?, cfg)
        }
        Command::Lift(a) => {
            let cfg = resolve(a)?;
            (commands::lift(&cfg)?, cfg)
        }
        Command::Lvalues(a) => {
            let cfg = resolve(a)?;
            let (doc, values) = commands::lvalues(&cfg)?;
            if let Some(path) = cfg.out.as_deref().filter(|p| p.extension().is_some_and(|e| e == "csv")) {
                emit(Some(path), &commands::lvalues_csv(&values)?)?;
                return Ok(true);
            }
            (doc, cfg)
        }
        Command::Lseries(a) => {
            let cfg = resolve(a)?;
            (commands::lseries_cmd(&cfg)?, cfg)
        }
        Command::Secondary { args, max_e, ramification } => {
            let cfg = resolve(args)?;
            (commands::secondary(&cfg, max_e, ramification)?, cfg)
        }
        Command::Family(a) => {
            let cfg = resolve(a)?;
            (commands::family(&cfg)?, cfg)
        }
        Command::Selftest { args, only } => {
            let args = args.load()?;
            let only: Vec<usize> = match only {
                Some(s) => s.split(',').map(|t| t.trim().parse()).collect::<Result<_, _>>().context("--only")?,
                None => Vec::new(),
            };
            let (doc, ok) = commands::selftest(&only, args.seed.unwrap_or(0))?;
            emit(args.out.as_deref(), &json_text(&doc)?)?;
            return Ok(ok);
        }
    };
    emit(cfg.out.as_deref(), &json_text(&doc)?)?;
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
