use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use combotrial_cli::replay::{replay_file, report};
use combotrial_cli::simulate::{simulate, SimulateArgs};
use combotrial_cli::store::Store;
use combotrial_cli::view::TrialStatus;
use combotrial_cli::CliError;

#[derive(Parser)]
#[command(
    name = "combotrial",
    version,
    about = "Bayesian phase I/II drug-combination trials"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo operating characteristics of the design.
    Simulate {
        /// Scenario file (TOML).
        #[arg(long)]
        scenario: PathBuf,
        /// Design config (TOML); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        reps: u64,
        #[arg(long)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; all available cores by default.
        #[arg(long)]
        parallelism: Option<usize>,
        /// Phase II randomization alone; the scenario lists arm response
        /// rates and the config holds harness options.
        #[arg(long)]
        ar_only: bool,
        /// Also write the event logs of this many replicates.
        #[arg(long, default_value_t = 0)]
        logs: u64,
    },
    /// Re-execute an event log, check it, and report the trial state.
    Replay {
        log: PathBuf,
        /// Print the derived status as JSON.
        #[arg(long)]
        json: bool,
    },
    /// HTTP service for conducting live trials.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Directory holding one event log per trial.
        #[arg(long, env = "COMBOTRIAL_DATA_DIR", default_value = "trials")]
        data_dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate {
            scenario,
            config,
            reps,
            seed,
            out,
            parallelism,
            ar_only,
            logs,
        } => {
            let parallelism = parallelism
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let args = SimulateArgs {
                scenario,
                config,
                reps,
                seed,
                out,
                parallelism,
                ar_only,
                logs,
            };
            let (written, table) = simulate(&args)?;
            print!("{table}");
            for p in written {
                eprintln!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Replay { log, json } => {
            let r = replay_file(&log)?;
            if json {
                let status = TrialStatus::of(
                    &log.file_stem().unwrap_or_default().to_string_lossy(),
                    &r.engine,
                );
                println!(
                    "{}",
                    serde_json::to_string_pretty(&status).expect("serializable")
                );
            } else {
                print!("{}", report(&r));
            }
            Ok(())
        }
        Command::Serve { addr, data_dir } => {
            let store = Arc::new(Store::open(&data_dir)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(combotrial_cli::service::serve(store, &addr))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
