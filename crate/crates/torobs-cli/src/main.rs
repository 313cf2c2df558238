mod config;
mod experiments;
mod record;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use torobs_core::{gcc_ray_check, ModelError};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "torobs", version, disable_version_flag = true)]
#[command(about = "Observability experiments for nonlinear Schrodinger flows on flat tori")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config file.
    Run { config: PathBuf },
    /// Check the geometric control condition of a config's window by ray sampling.
    CheckGcc { config: PathBuf },
    /// Print the version.
    Version,
}

enum CliError {
    /// Unreadable or invalid config; exit 2.
    Config(String),
    /// Filesystem failure; exit 4.
    Io(String),
    /// Failure inside the solver stack; exit 3, except I/O surfaced
    /// through the library (cache reads, export) which stays 4.
    Model(ModelError),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 4,
            CliError::Model(ModelError::Io(_)) => 4,
            CliError::Model(_) => 3,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Config(m) | CliError::Io(m) => m.clone(),
            CliError::Model(e) => e.to_string(),
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
    cfg.validate()
        .map_err(|m| CliError::Config(format!("config {}: {m}", path.display())))?;
    Ok(cfg)
}

fn cmd_run(path: &Path) -> Result<(), CliError> {
    let cfg = load_config(path)?;
    let record = experiments::run_experiment(&cfg).map_err(CliError::Model)?;
    let (json, csv) = record
        .export(Path::new(&cfg.output))
        .map_err(|e| CliError::Io(format!("cannot write results: {e}")))?;

    println!(
        "{} on {:?} modes: {} rows in {:.2}s",
        cfg.kind.name(),
        cfg.geometry.modes,
        record.table.rows.len(),
        record.duration_seconds,
    );
    for (key, cell) in &record.summary {
        println!("  {key} = {}", cell.display());
    }
    for line in &record.diagnostics {
        println!("  diagnostic: {line}");
    }
    println!("wrote {} and {}", json.display(), csv.display());
    Ok(())
}

fn cmd_check_gcc(path: &Path) -> Result<(), CliError> {
    let cfg = load_config(path)?;
    let geom = cfg.geometry.build().map_err(CliError::Model)?;
    let window = cfg.build_window(&geom).map_err(CliError::Model)?;
    let gcc = cfg.gcc.clone().unwrap_or_default();
    let sampling = gcc.sampling(cfg.seed);
    let report = gcc_ray_check(&window, gcc.horizon, &sampling).map_err(CliError::Model)?;

    if report.pass {
        println!(
            "pass: all {} rays reach the window within T = {:.6}, latest entry {:.6}",
            report.rays_total,
            report.horizon,
            report.max_entry_time.unwrap_or(0.0),
        );
    } else {
        println!(
            "fail: of {} rays, a ray from {:?} with direction {:?} misses the window over [0, {:.6}]",
            report.rays_total, report.worst.origin, report.worst.direction, report.horizon,
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => cmd_run(config),
        Command::CheckGcc { config } => cmd_check_gcc(config),
        Command::Version => {
            println!("torobs {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("torobs: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
