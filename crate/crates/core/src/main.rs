use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use truncreg::experiment::{
    demo_spec, read_rows, run_experiment, summarize, write_constants, write_report, write_rows,
    write_summary, ExperimentMode, ExperimentSpec, WORKERS_ENV,
};

#[derive(Parser)]
#[command(
    name = "truncreg",
    version,
    about = "Truncated regularized least squares experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a JSON spec.
    Run {
        config: PathBuf,
        /// Directory for rows.csv, summary.csv and constants.csv.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = WORKERS_ENV)]
        workers: Option<usize>,
        /// Replaces the spec's master_seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print per-cell statistics and fitted rate constants of a rows CSV.
    Summarize { csv: PathBuf },
    /// Run a built-in spec: sparse_general, single_index_sparse or single_index_low_rank.
    Demo {
        mode: ExperimentMode,
        /// Write the report here instead of printing rows to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = WORKERS_ENV)]
        workers: Option<usize>,
        /// Print the spec as JSON and exit.
        #[arg(long)]
        print_spec: bool,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> truncreg::Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            workers,
            seed,
        } => {
            let mut spec = ExperimentSpec::load(&config)?;
            if let Some(seed) = seed {
                spec.master_seed = seed;
            }
            let rows = run_experiment(&spec, workers)?;
            write_report(&rows, &out)?;
            eprintln!("{} rows written to {}", rows.len(), out.display());
        }
        Command::Summarize { csv } => {
            let summary = summarize(&read_rows(&csv)?)?;
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write_summary(&summary, &mut lock)?;
            writeln!(lock).ok();
            write_constants(&summary, &mut lock)?;
        }
        Command::Demo {
            mode,
            out,
            workers,
            print_spec,
        } => {
            let spec = demo_spec(mode);
            if print_spec {
                println!("{}", spec.to_json());
                return Ok(());
            }
            let rows = run_experiment(&spec, workers)?;
            match out {
                Some(dir) => {
                    write_report(&rows, &dir)?;
                    eprintln!("{} rows written to {}", rows.len(), dir.display());
                }
                None => write_rows(&rows, io::stdout().lock())?,
            }
        }
    }
    Ok(())
}
