use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use fedalign_cli::{
    cmd_compare, cmd_run, cmd_verify, parse_algorithms, parse_seeds, resolve_threads,
    with_thread_pool,
};

#[derive(Parser)]
#[command(
    name = "fedalign",
    version,
    about = "Desk-scale federated learning simulator and oracle suite"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config and write metrics/summary/manifest.
    Run {
        /// Experiment config (strict JSON schema; unknown keys rejected).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for metrics.csv, summary.json, manifest.json.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (default: FEDALIGN_THREADS env, then all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run the numerical oracle suite; exit nonzero if any check fails.
    Verify {
        /// Where to write the JSON report (omit to skip the file).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run several algorithms over shared seeds and emit a comparison table.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated list, e.g. "pflalign,fedavg,fedprox".
        #[arg(long)]
        algorithms: String,
        /// Comma-separated master seeds, e.g. "1,2,3".
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            threads,
        } => {
            let threads = resolve_threads(threads);
            let log = with_thread_pool(threads, || cmd_run(&config, &out))??;
            println!(
                "run complete: {} rounds, {} clients, stream {}",
                log.rounds.len(),
                log.initial.len(),
                &log.stream_hash[..16.min(log.stream_hash.len())]
            );
            println!("outputs in {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { out, threads } => {
            let threads = resolve_threads(threads);
            let records = with_thread_pool(threads, || cmd_verify(out.as_deref()))??;
            let failed = records.iter().filter(|r| !r.pass).count();
            if failed == 0 {
                println!("all {} checks passed", records.len());
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("{failed} of {} checks failed", records.len());
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Compare {
            config,
            algorithms,
            seeds,
            out,
            threads,
        } => {
            let algorithms = parse_algorithms(&algorithms)?;
            let seeds = parse_seeds(&seeds)?;
            let threads = resolve_threads(threads);
            let report =
                with_thread_pool(threads, || cmd_compare(&config, &algorithms, &seeds, &out))??;
            for agg in &report.aggregates {
                match agg.ci95_halfwidth {
                    Some(hw) => println!(
                        "{:<10} mean test loss {:.6} +- {:.6} (95% CI, {} seeds)",
                        agg.algorithm,
                        agg.mean_test_loss,
                        hw,
                        report.seeds.len()
                    ),
                    None => println!(
                        "{:<10} mean test loss {:.6} (single seed; CI undefined)",
                        agg.algorithm, agg.mean_test_loss
                    ),
                }
            }
            println!("outputs in {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
