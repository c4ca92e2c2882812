mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use commands::{Outcome, Report};
use config::{Overrides, RunConfig};

/// Boundedness certificates and numerics for Hausdorff operators on W^{k,1}.
#[derive(Debug, Parser)]
#[command(name = "hausdorff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write the JSON report here instead of stdout; `witness` also writes a CSV next to it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    k: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Decide boundedness on W^{k,1} from the condition integral.
    Certify,
    /// Evaluate H f at the configured points.
    Apply,
    /// W^{k,1} norm of f, and of H f when a kernel is configured.
    Wnorm,
    /// Compare finite differences of H f with the derivative formula.
    VerifyDerivative,
    /// Growth table of truncated condition integrals and image norms.
    Witness,
    /// Certificates for the Hardy operator and its adjoint.
    HardyReport,
    /// Monte Carlo measure of the cone spanned by a constant matrix.
    ConeMeasure,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Certify => "certify",
            Command::Apply => "apply",
            Command::Wnorm => "wnorm",
            Command::VerifyDerivative => "verify-derivative",
            Command::Witness => "witness",
            Command::HardyReport => "hardy-report",
            Command::ConeMeasure => "cone-measure",
        }
    }
}

fn run(cli: &Cli) -> Result<Outcome> {
    let overrides = Overrides { tol: cli.tol, seed: cli.seed, k: cli.k };
    let cfg = RunConfig::load(cli.config.as_deref(), overrides)?;
    let started = Instant::now();
    let Report { result, outcome, csv } = match cli.command {
        Command::Certify => commands::certify_cmd(&cfg),
        Command::Apply => commands::apply_cmd(&cfg),
        Command::Wnorm => commands::wnorm_cmd(&cfg),
        Command::VerifyDerivative => commands::verify_derivative_cmd(&cfg),
        Command::Witness => commands::witness_cmd(&cfg),
        Command::HardyReport => commands::hardy_report_cmd(&cfg),
        Command::ConeMeasure => commands::cone_measure_cmd(&cfg),
    }
    .with_context(|| format!("{} failed", cli.command.name()))?;
    eprintln!("{}: {:.3?}", cli.command.name(), started.elapsed());

    let doc = json!({ "command": cli.command.name(), "config": cfg, "result": result });
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    match &cli.out {
        Some(path) => {
            std::fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
            if let Some(csv) = csv {
                let csv_path = path.with_extension("csv");
                std::fs::write(&csv_path, csv).with_context(|| format!("writing {}", csv_path.display()))?;
            }
        }
        None => print!("{text}"),
    }
    Ok(outcome)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => {
            eprintln!("{}: check failed", cli.command.name());
            ExitCode::from(1)
        }
        Ok(Outcome::Inconclusive) => {
            eprintln!("{}: inconclusive", cli.command.name());
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
