//! `dco` — drive the conversion-based DCO pipeline from the command line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dco_core::commands::{
    run_p2d, run_report, run_simulate, run_train, ReportOptions, SimulateOptions,
};

#[derive(Parser)]
#[command(
    name = "dco",
    about = "Conversion-based dynamic creative optimization: synthetic marketplace, incremental CVR model, distribution tables, and lift reports",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full loop: serve, log, train, regenerate tables, and report.
    Simulate {
        /// Experiment config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config's out_dir.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Seed override.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Replay incremental training over an event log and write the model
    /// snapshot.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Event log (JSONL), in visibility order.
        #[arg(long)]
        events: PathBuf,
        /// Ad catalog (JSONL).
        #[arg(long)]
        catalog: PathBuf,
        /// Output model snapshot path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a combination distribution table from a model snapshot.
    P2d {
        #[arg(long)]
        config: PathBuf,
        /// Model snapshot (JSONL).
        #[arg(long)]
        model: PathBuf,
        /// Ad catalog (JSONL).
        #[arg(long)]
        catalog: PathBuf,
        /// Output table path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute bucket metrics and lifts from event logs.
    Report {
        #[arg(long)]
        config: PathBuf,
        /// One or more event logs (JSONL).
        #[arg(long, required = true)]
        events: Vec<PathBuf>,
        /// Ad catalog (JSONL).
        #[arg(long)]
        catalog: PathBuf,
        /// Window on occurrence ticks, as START..END.
        #[arg(long, value_parser = parse_window)]
        window: Option<(u64, u64)>,
        /// Also write report.txt and report.json here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn parse_window(raw: &str) -> Result<(u64, u64), String> {
    let (a, b) = raw
        .split_once("..")
        .ok_or_else(|| "expected START..END".to_string())?;
    let start: u64 = a.trim().parse().map_err(|e| format!("bad window start: {e}"))?;
    let end: u64 = b.trim().parse().map_err(|e| format!("bad window end: {e}"))?;
    if start >= end {
        return Err("window must be non-empty".into());
    }
    Ok((start, end))
}

fn run() -> dco_core::Result<()> {
    match Cli::parse().command {
        Command::Simulate { config, out_dir, seed } => {
            let artifacts = run_simulate(&SimulateOptions {
                config_path: config,
                out_dir,
                seed,
            })?;
            println!("wrote {}", artifacts.out_dir.display());
            println!("  events:  {}", artifacts.events.display());
            println!("  catalog: {}", artifacts.catalog.display());
            println!("  model:   {}", artifacts.model.display());
            println!("  table:   {}", artifacts.table.display());
            println!("  report:  {}", artifacts.report_txt.display());
        }
        Command::Train { config, events, catalog, out } => {
            let model = run_train(&config, &events, &catalog, &out)?;
            println!(
                "wrote {} ({} vectors, {} periods)",
                out.display(),
                model.vector_count(),
                model.periods_trained()
            );
        }
        Command::P2d { config, model, catalog, out } => {
            run_p2d(&config, &model, &catalog, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Report { config, events, catalog, window, out_dir } => {
            let (_, rendered) = run_report(&ReportOptions {
                config_path: config,
                events_paths: events,
                catalog_path: catalog,
                window,
                out_dir,
            })?;
            print!("{rendered}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
