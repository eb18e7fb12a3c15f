use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use activekd::config::parse_config;
use activekd::runner::{export_plotdata, run, PlotKind};
use activekd::verify::run_all;

#[derive(Parser)]
#[command(name = "activekd", version, about = "Active knowledge distillation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every strategy × framework × seed cell of a config.
    Run {
        config: PathBuf,
        /// Replace the config's seed list (comma separated or repeated).
        #[arg(long, value_delimiter = ',')]
        seed_override: Vec<u64>,
        /// Cells run concurrently, at most this many at a time.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Replace the config's output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Write long-format plot data next to a run's manifest.
    Export {
        manifest: PathBuf,
        /// accuracy | criteria | knn | purity
        #[arg(long)]
        kind: PlotKind,
    },
    /// Run the built-in correctness suites.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(command: Command) -> activekd::Result<ExitCode> {
    match command {
        Command::Run {
            config,
            seed_override,
            workers,
            out_dir,
        } => {
            let mut cfg = parse_config(&config)?;
            if !seed_override.is_empty() {
                cfg.seeds = seed_override;
            }
            if let Some(dir) = out_dir {
                cfg.output_dir = dir;
            }
            let manifest = run(&cfg, workers.max(1))?;
            let failed = manifest.failed();
            println!(
                "{} cells written to {} ({} failed)",
                manifest.cells.len(),
                cfg.output_dir.display(),
                failed.len()
            );
            for cell in &failed {
                eprintln!(
                    "failed: {} {} seed {}: {}",
                    cell.strategy,
                    cell.framework,
                    cell.seed,
                    cell.error.as_deref().unwrap_or("unknown error")
                );
            }
            Ok(if failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Export { manifest, kind } => {
            let path = export_plotdata(&manifest, kind)?;
            println!("{}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { seed } => {
            let reports = run_all(seed)?;
            for r in &reports {
                println!("{r}");
            }
            Ok(if reports.iter().all(|r| r.passed()) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}
