//! Command-line front end: train, eval, oracle-check, and sweep.
//!
//! Exit codes: 0 success, 1 oracle violation, 2 configuration or format
//! errors, 3 capacity errors.

mod config;
mod oracle_cmd;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sqsnn_core::error::CoreError;
use sqsnn_core::learning::TrainMode;

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "sqsnn", about = "Stochastic quantum spiking network simulator and trainers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread count override.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory override.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Probability estimation mode override.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<TrainMode>,
}

fn parse_mode(s: &str) -> Result<TrainMode, String> {
    match s {
        "exact" => Ok(TrainMode::Exact),
        "shots" => Ok(TrainMode::Shots),
        other => Err(format!("unknown mode '{other}' (use exact or shots)")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a network per the experiment configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a checkpoint on the configured test dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the randomized oracle self-check suite.
    OracleCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Smaller instance counts for a fast pass.
        #[arg(long)]
        quick: bool,
        /// Deliberately violate the named invariant (testing hook).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// One training run per grid value of a trainer parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Parameter name; defaults to the config's [sweep] section.
        #[arg(long)]
        param: Option<String>,
        /// Comma-separated grid values; defaults to the [sweep] section.
        #[arg(long)]
        values: Option<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn apply_overrides(cfg: &mut ExperimentConfig, o: &Overrides) {
    if let Some(seed) = o.seed {
        cfg.run.seed = seed;
    }
    if let Some(workers) = o.workers {
        cfg.run.workers = workers;
    }
    if let Some(dir) = &o.out_dir {
        cfg.run.out_dir = dir.clone();
    }
    if let Some(mode) = o.mode {
        cfg.trainer.config.mode = mode;
    }
}

fn exit_code_for(err: &CoreError) -> u8 {
    match err {
        CoreError::Capacity(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, CoreError> {
    match cli.command {
        Command::Train { config, overrides } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            apply_overrides(&mut cfg, &overrides);
            let out = run::train(&cfg)?;
            println!(
                "trained {} iterations: best test accuracy {}, final {}, spikes/step {}, {:.1}s",
                out.summary.iterations,
                out.summary.best_test_accuracy,
                out.summary.final_test_accuracy,
                out.summary.spikes_per_step,
                out.summary.wall_time_s
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { checkpoint, config, overrides } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            apply_overrides(&mut cfg, &overrides);
            run::eval(&checkpoint, &cfg)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::OracleCheck { seed, quick, inject_fault } => {
            println!("oracle-check seed {seed}");
            let reports = oracle_cmd::run_checks(seed, quick, inject_fault.as_deref());
            let mut failed = false;
            for r in &reports {
                match &r.outcome {
                    Ok(()) => println!("ok   {}", r.name),
                    Err(msg) => {
                        failed = true;
                        println!("FAIL {}: {msg}", r.name);
                    }
                }
            }
            Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
        }
        Command::Sweep { config, param, values, overrides } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            apply_overrides(&mut cfg, &overrides);
            let (param, grid) = match (param, values) {
                (Some(p), Some(v)) => {
                    let grid: Result<Vec<f64>, _> =
                        v.split(',').map(|s| s.trim().parse::<f64>()).collect();
                    (p, grid.map_err(|e| CoreError::config(format!("bad sweep values: {e}")))?)
                }
                _ => match &cfg.sweep {
                    Some(s) => (s.param.clone(), s.values.clone()),
                    None => {
                        return Err(CoreError::config(
                            "sweep needs --param/--values or a [sweep] config section",
                        ))
                    }
                },
            };
            let path = run::sweep(&cfg, &param, &grid)?;
            println!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
