use std::path::PathBuf;
use std::process::ExitCode;

use cammarl::cammarl::ModelingMode;
use cammarl::env::EnvSpec;
use cammarl::exp::runner::output_root;
use cammarl::exp::{compare_modes, load_config, run_experiment, ExpError, ExperimentConfig};
use clap::{Parser, Subcommand};

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

/// Train and compare agent-modeling strategies on cooperative multi-agent tasks.
#[derive(Debug, Parser)]
#[command(name = "cammarl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train every seed of an experiment and write its run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seeds, replacing the config's list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        mode: Option<String>,
        /// Registered environment name (cn, lbf, pressure_plate).
        #[arg(long)]
        env: Option<String>,
        /// Output root; overrides CAMMARL_OUTPUT_ROOT and the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank finished runs by final-window return.
    Compare {
        /// Comma-separated run directories.
        #[arg(long, value_delimiter = ',', required = true)]
        runs: Vec<PathBuf>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Check a config file and print it with defaults filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ExpError> for Failure {
    fn from(e: ExpError) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

/// A config that cannot be read is reported as a config error.
fn load(path: &std::path::Path) -> Result<ExperimentConfig, Failure> {
    load_config(path).map_err(|e| Failure::Config(e.to_string()))
}

fn apply_overrides(
    mut config: ExperimentConfig,
    seeds: Option<Vec<u64>>,
    mode: Option<String>,
    env: Option<String>,
) -> Result<ExperimentConfig, Failure> {
    if let Some(seeds) = seeds {
        config.seeds = seeds;
    }
    if let Some(mode) = mode {
        config.mode = mode.parse::<ModelingMode>().map_err(|e| Failure::Config(e.to_string()))?;
    }
    if let Some(env) = env {
        config.env = EnvSpec::by_name(&env).map_err(|e| Failure::Config(e.to_string()))?;
    }
    config.validate()?;
    Ok(config)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            config,
            seeds,
            mode,
            env,
            out,
        } => {
            let config = apply_overrides(load(&config)?, seeds, mode, env)?;
            let root = output_root(&config, out.as_deref());
            let summary = run_experiment(&config, &root)?;
            println!("run directory: {}", summary.run_dir.display());
            println!("completed seeds: {:?}", summary.completed);
            if summary.succeeded() {
                Ok(())
            } else {
                for f in &summary.failures {
                    eprintln!("seed {} failed: {}", f.seed, f.error);
                }
                Err(Failure::Runtime(format!("{} of {} seeds failed", summary.failures.len(), config.seeds.len())))
            }
        }
        Command::Compare { runs, json } => {
            let report = compare_modes(&runs).map_err(|e| Failure::Runtime(e.to_string()))?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serialises"));
            } else {
                print!("{report}");
            }
            Ok(())
        }
        Command::Validate { config } => {
            let config = load(&config)?;
            println!("{}", config.to_json());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
