//! `coopitr` command-line tool: fit, tune, simulate, run the federated
//! protocol and evaluate saved rules.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use coopitr::fedsim::{FedInit, StepBroadcast};
use coopitr::sim::experiment::ExperimentConfig;
use coopitr::FitConfig;

use config::{load_json, FedRunConfig, FitOverrides};
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "coopitr", version, about = "Multi-site treatment rules with a sign-coherent penalty")]
struct Cli {
    /// Worker threads for parallel sections. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the penalized path and select lambda.
    Fit {
        #[arg(long)]
        manifest: PathBuf,
        /// JSON fit config; flags override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: FitOverrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write criterion curves for a gamma grid as tidy CSV.
    TuneCurve {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: FitOverrides,
        /// Comma-separated gammas; defaults to the adaptive grid.
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<f64>>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a simulation study.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the simulated federated protocol.
    Fedfit {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: FitOverrides,
        /// Fixed lambda; otherwise the centrally selected one.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        cycles: Option<usize>,
        /// Start from zero instead of each site's local fit.
        #[arg(long)]
        zero_init: bool,
        /// Broadcast both step factors to every site.
        #[arg(long)]
        broadcast_both: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the value of a saved model on new data.
    Evaluate {
        /// `model.json` written by `fit` or `fedfit`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Fit config supplying the nuisance settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: FitOverrides,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn fit_config(path: Option<&PathBuf>, overrides: &FitOverrides) -> CliResult<FitConfig> {
    let mut cfg: FitConfig = load_json(path.map(PathBuf::as_path))?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    if cli.threads == 0 {
        return Err(CliError::Input("--threads must be >= 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| CliError::Input(e.to_string()))?;
    match cli.command {
        Command::Fit {
            manifest,
            config,
            overrides,
            out,
        } => commands::fit(&manifest, &fit_config(config.as_ref(), &overrides)?, &out),
        Command::TuneCurve {
            manifest,
            config,
            overrides,
            gammas,
            out,
        } => commands::tune_curve(
            &manifest,
            &fit_config(config.as_ref(), &overrides)?,
            gammas.as_deref(),
            out.as_deref(),
        ),
        Command::Simulate {
            config,
            replications,
            seed,
            out,
        } => {
            let mut cfg: ExperimentConfig = load_json(config.as_deref())?;
            if let Some(r) = replications {
                cfg.replications = r;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            commands::simulate(&cfg, &out)
        }
        Command::Fedfit {
            manifest,
            config,
            overrides,
            lambda,
            cycles,
            zero_init,
            broadcast_both,
            out,
        } => {
            let mut cfg: FedRunConfig = load_json(config.as_deref())?;
            overrides.apply(&mut cfg.fit);
            cfg.fit.validate()?;
            if lambda.is_some() {
                cfg.lambda = lambda;
            }
            if let Some(c) = cycles {
                cfg.cycles = c;
            }
            if zero_init {
                cfg.init = FedInit::Zero;
            }
            if broadcast_both {
                cfg.broadcast = StepBroadcast::Both;
            }
            commands::fedfit(&manifest, &cfg, &out)
        }
        Command::Evaluate {
            model,
            manifest,
            config,
            overrides,
            out,
        } => commands::evaluate(
            &model,
            &manifest,
            &fit_config(config.as_ref(), &overrides)?,
            out.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("coopitr: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
