use std::path::{Path, PathBuf};

use combotrial::seeds;
use combotrial::simulator::{
    replicates_csv, run_ar_only, run_replicates, ArOptions, ArScenario, OperatingCharacteristics,
};
use combotrial::trial::{simulate_trial, write_events, DesignConfig, EngineError, Scenario};

use crate::{read_input, CliError};

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub scenario: PathBuf,
    /// Defaults apply when absent.
    pub config: Option<PathBuf>,
    pub reps: u64,
    pub seed: u64,
    pub out: PathBuf,
    pub parallelism: usize,
    pub ar_only: bool,
    /// Event logs to keep, for the first replicates.
    pub logs: u64,
}

fn engine_error(e: EngineError) -> CliError {
    match e {
        EngineError::Model(m) => CliError::Config(m.to_string()),
        other => CliError::Failed(other.to_string()),
    }
}

fn write(out: &Path, name: &str, text: &str, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let p = out.join(name);
    std::fs::write(&p, text)?;
    written.push(p);
    Ok(())
}

/// Runs a simulation study and writes its tables under `args.out`. Returns
/// the files written and the text table.
pub fn simulate(args: &SimulateArgs) -> Result<(Vec<PathBuf>, String), CliError> {
    if args.reps == 0 {
        return Err(CliError::Config("reps: must be at least 1".into()));
    }
    if args.parallelism == 0 {
        return Err(CliError::Config("parallelism: must be at least 1".into()));
    }
    let scenario_text = read_input(&args.scenario, "scenario")?;
    let config_text = args
        .config
        .as_deref()
        .map(|p| read_input(p, "config"))
        .transpose()?;
    if args.ar_only {
        simulate_ar(args, &scenario_text, config_text.as_deref())
    } else {
        simulate_design(args, &scenario_text, config_text.as_deref())
    }
}

fn simulate_design(
    args: &SimulateArgs,
    scenario_text: &str,
    config_text: Option<&str>,
) -> Result<(Vec<PathBuf>, String), CliError> {
    let scenario = Scenario::from_toml(scenario_text)
        .map_err(|e| CliError::Config(format!("scenario {}: {e}", args.scenario.display())))?;
    let config = match config_text {
        Some(t) => {
            DesignConfig::from_toml(t).map_err(|e| CliError::Config(format!("config: {e}")))?
        }
        None => DesignConfig::default(),
    };
    scenario
        .check_grid(&config.grid)
        .map_err(|e| CliError::Config(format!("scenario {}: {e}", args.scenario.display())))?;

    let results = run_replicates(&scenario, &config, args.reps, args.seed, args.parallelism)
        .map_err(engine_error)?;
    let oc = OperatingCharacteristics::from_results(&scenario, &config, &results);
    let table = oc.to_table();

    std::fs::create_dir_all(&args.out)?;
    let mut written = Vec::new();
    write(&args.out, "oc.txt", &table, &mut written)?;
    write(&args.out, "oc.csv", &oc.to_csv(), &mut written)?;
    write(&args.out, "summary.csv", &oc.summary_csv(), &mut written)?;
    write(
        &args.out,
        "replicates.csv",
        &replicates_csv(&config, args.seed, &results),
        &mut written,
    )?;
    write(
        &args.out,
        "oc.json",
        &(serde_json::to_string_pretty(&oc).expect("serializable") + "\n"),
        &mut written,
    )?;

    if args.logs > 0 {
        let dir = args.out.join("logs");
        std::fs::create_dir_all(&dir)?;
        for r in 0..args.logs.min(args.reps) {
            let engine = simulate_trial(&scenario, &config, seeds::replicate_seed(args.seed, r))
                .map_err(engine_error)?;
            let mut buf = Vec::new();
            write_events(&mut buf, engine.events())?;
            let p = dir.join(format!("rep{:05}.jsonl", r + 1));
            std::fs::write(&p, buf)?;
            written.push(p);
        }
    }
    Ok((written, table))
}

fn simulate_ar(
    args: &SimulateArgs,
    scenario_text: &str,
    config_text: Option<&str>,
) -> Result<(Vec<PathBuf>, String), CliError> {
    let scenario = ArScenario::from_toml(scenario_text)
        .map_err(|e| CliError::Config(format!("scenario {}: {e}", args.scenario.display())))?;
    let opts: ArOptions = match config_text {
        Some(t) => toml::from_str(t).map_err(|e| CliError::Config(format!("config: {e}")))?,
        None => ArOptions::default(),
    };
    let result = run_ar_only(
        &scenario.rates,
        &opts,
        args.reps,
        args.seed,
        args.parallelism,
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    let table = format!("{}\n{}", scenario.name, result.to_table());

    std::fs::create_dir_all(&args.out)?;
    let mut written = Vec::new();
    write(&args.out, "ar.txt", &table, &mut written)?;
    write(&args.out, "ar.csv", &result.to_csv(), &mut written)?;
    write(
        &args.out,
        "ar_trajectory.csv",
        &result.trajectory_csv(),
        &mut written,
    )?;
    Ok((written, table))
}
