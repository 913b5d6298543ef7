use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use teefl_core::attacks::{AttackKind, ExposurePolicy};
use teefl_core::experiment::{
    attack_run, report_runs, report_table, run_experiment, ExperimentConfig,
};
use teefl_core::Error;

#[derive(Parser)]
#[command(
    name = "teefl",
    version,
    about = "Layer-wise federated learning in simulated enclaves"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the experiment described by a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Attack a finished run under an exposure policy.
    Attack {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum)]
        attack: Attack,
        #[arg(long, value_enum)]
        policy: Policy,
    },
    /// Compare runs by rounds and traffic to a target accuracy.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Defaults to the final accuracy of the first end-to-end run.
        #[arg(long)]
        target: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Attack {
    Dra,
    Mia,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    E2e,
    Ppfl,
    PpflLastlayer,
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let text = std::fs::read_to_string(&config).map_err(|source| Error::Io {
                path: config.clone(),
                source,
            })?;
            let mut cfg = ExperimentConfig::from_toml(&text)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let info = run_experiment(&cfg, &out)?;
            println!(
                "{}: {} rounds, final accuracy {:.4}, {} bytes -> {}",
                info.model,
                info.rounds,
                info.final_accuracy,
                info.bytes,
                out.display()
            );
            if let Some(audit) = info.audit.as_ref().filter(|a| !a.passed()) {
                eprintln!(
                    "warning: exposure audit failed: disallowed {:?}, {} leaked secrets",
                    audit.disallowed_kinds,
                    audit.leaks.len()
                );
            }
        }
        Command::Attack {
            run,
            attack,
            policy,
        } => {
            let kind = match attack {
                Attack::Dra => AttackKind::Dra,
                Attack::Mia => AttackKind::Mia,
            };
            let policy = match policy {
                Policy::E2e => ExposurePolicy::E2e,
                Policy::Ppfl => ExposurePolicy::Ppfl,
                Policy::PpflLastlayer => ExposurePolicy::PpflLastLayer,
            };
            let report = attack_run(&run, kind, policy)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Report { runs, target } => {
            print!("{}", report_table(&report_runs(&runs, target)?));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}
