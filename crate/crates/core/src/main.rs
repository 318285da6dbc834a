use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use natflow_core::experiment::{self, has_fatal, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "natflow",
    version,
    about = "Naturality checks for limiting training flows"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// classify, table, drift or trajectory
        #[arg(long)]
        experiment: Option<String>,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
}

const EXIT_MISMATCH: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Validate { config } => {
            let cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let diagnostics = experiment::validate(&cfg);
            for d in &diagnostics {
                println!("{d}");
            }
            if has_fatal(&diagnostics) {
                ExitCode::from(EXIT_CONFIG)
            } else {
                if diagnostics.is_empty() {
                    println!("ok");
                }
                ExitCode::SUCCESS
            }
        }
        Command::Run {
            config,
            seed,
            out,
            experiment: kind,
        } => {
            let mut cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            if seed.is_some() {
                cfg.seed = seed;
            }
            if let Some(kind) = kind {
                cfg.experiment = kind;
            }
            let out = out.unwrap_or_else(|| PathBuf::from(&cfg.out));
            let diagnostics = experiment::validate(&cfg);
            for d in &diagnostics {
                eprintln!("{d}");
            }
            if has_fatal(&diagnostics) {
                return ExitCode::from(EXIT_CONFIG);
            }
            let result = match experiment::run(&cfg) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_RUNTIME);
                }
            };
            if let Err(e) = result.write(&out) {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_RUNTIME);
            }
            print!("{}", result.files[1].1);
            if result.clean {
                ExitCode::SUCCESS
            } else {
                eprintln!("verdicts differ from the expected table");
                ExitCode::from(EXIT_MISMATCH)
            }
        }
    }
}
