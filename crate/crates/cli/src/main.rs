//! `wander`: runs one experiment from a JSON configuration and writes
//! `<out>/<experiment>.csv` and `<out>/<experiment>.json`.

mod config;
mod run;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use serde_json::json;

use config::{Experiment, ExperimentConfig, Invalid};
use run::{Budget, BudgetExceeded};

#[derive(Parser, Debug)]
#[command(name = "wander", version, about = "Numerical experiments on Hamiltonian flows with collision")]
struct Cli {
    #[command(subcommand)]
    experiment: Experiment,

    /// JSON experiment configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the seed in the configuration
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (default: `out` in the configuration, else `./out`)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Suppress the summary on stdout
    #[arg(long, global = true)]
    quiet: bool,
}

/// Malformed input: bad flags, unreadable JSON, mismatched subcommand.
#[derive(Debug)]
struct ParseError(String);

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ParseError {}

fn category(err: &anyhow::Error) -> (&'static str, u8) {
    if err.downcast_ref::<ParseError>().is_some() {
        return ("parse", 2);
    }
    if err.downcast_ref::<Invalid>().is_some() {
        return ("precondition", 3);
    }
    if err.downcast_ref::<BudgetExceeded>().is_some() {
        return ("budget", 4);
    }
    match err.downcast_ref::<wander_core::Error>() {
        Some(wander_core::Error::BudgetExhausted(_)) => ("budget", 4),
        Some(
            wander_core::Error::NoHit(_)
            | wander_core::Error::TangentialHit { .. }
            | wander_core::Error::CollisionBeforeHit { .. }
            | wander_core::Error::RestPoint
            | wander_core::Error::DegenerateDenominator(_)
            | wander_core::Error::TubeEscapesChart(_)
            | wander_core::Error::EscapeTimeExceeded(_)
            | wander_core::Error::OffSurface { .. },
        ) => ("numerical", 1),
        Some(_) => ("precondition", 3),
        None if err.downcast_ref::<std::io::Error>().is_some() => ("io", 3),
        None => ("internal", 1),
    }
}

fn fail(err: &anyhow::Error) -> ExitCode {
    let (cat, code) = category(err);
    eprintln!("{}", json!({ "category": cat, "message": format!("{err:#}") }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return fail(&ParseError(e.kind().to_string()).into());
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn load(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| ParseError("--config <path> is required".into()))?;
    let text = fs::read_to_string(path)
        .map_err(|e| Invalid(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| ParseError(format!("{}: {e}", path.display())))?;
    match cfg.subcommand {
        Some(s) if s != cli.experiment => {
            return Err(ParseError(format!(
                "configuration is for `{}`, not `{}`",
                s.name(),
                cli.experiment.name()
            ))
            .into())
        }
        _ => cfg.subcommand = Some(cli.experiment),
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = load(cli)?;
    let exp = cli.experiment;
    let plan = cfg.plan(exp)?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out)
        .map_err(|e| Invalid(format!("cannot create {}: {e}", out.display())))?;

    let budget = Budget::new(cfg.budget_seconds);
    let outcome = run::execute(&plan, cfg.energy, cfg.seed, &budget)?;
    let wall = budget.elapsed();

    let csv_path = out.join(format!("{}.csv", exp.name()));
    let json_path = out.join(format!("{}.json", exp.name()));
    fs::write(&csv_path, outcome.table.to_csv())
        .with_context(|| format!("writing {}", csv_path.display()))?;
    let summary = json!({
        "experiment": exp.name(),
        "config": cfg,
        "seed": cfg.seed,
        "estimates": outcome.estimates,
        "wall_time_seconds": wall,
    });
    fs::write(&json_path, serde_json::to_string_pretty(&summary)? + "\n")
        .with_context(|| format!("writing {}", json_path.display()))?;

    if !cli.quiet {
        println!(
            "{}: {} rows in {:.3} s -> {}",
            exp.name(),
            outcome.table.rows.len(),
            wall,
            csv_path.display()
        );
        println!("{}", serde_json::to_string(&outcome.estimates)?);
    }
    Ok(())
}
