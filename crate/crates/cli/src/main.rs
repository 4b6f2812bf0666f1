mod commands;
mod config;
mod error;
mod io;
mod screen;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{DataArgs, GlobalArgs, GridArgs, ModelArgs, RunConfig, ScenarioArgs};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "pathvb", version, about = "Pathway-structured interaction selection for censored survival data")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate one simulated replicate: covariates, outcomes, membership and truth.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Fit at fixed hyperparameters.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Fit over a grid of spike variances and keep the smallest BIC.
    Tune {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Score a fit against a simulated truth, optionally with a test set.
    Evaluate {
        #[arg(long)]
        result: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        train_outcomes: Option<PathBuf>,
        #[arg(long)]
        test_covariates: Option<PathBuf>,
        #[arg(long)]
        test_outcomes: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Simulate, tune and evaluate repeatedly; report mean(SD) per metric.
    Replicate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Keep the genes with the strongest marginal association with survival.
    Screen {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        top: Option<usize>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<String> {
    let mut cfg: RunConfig = config::load(cli.global.config.as_deref())?;
    cli.global.apply(&mut cfg);
    cfg.fit.seed = cfg.seed;
    if let Some(t) = cfg.threads {
        if t == 0 {
            return Err(CliError::Config("threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate { scenario, out_dir } => {
            scenario.apply(&mut cfg.simulate);
            commands::simulate(&cfg, &out_dir)
        }
        Command::Fit { data, model, out } => {
            data.apply(&mut cfg.data);
            model.apply(&mut cfg.hyper, &mut cfg.fit);
            commands::fit(&cfg, &out)
        }
        Command::Tune { data, model, grid, out } => {
            data.apply(&mut cfg.data);
            model.apply(&mut cfg.hyper, &mut cfg.fit);
            grid.apply(&mut cfg.grid);
            commands::tune_cmd(&cfg, &out)
        }
        Command::Evaluate { result, truth, train_outcomes, test_covariates, test_outcomes, horizon, out } => {
            let e = &mut cfg.evaluate;
            for (slot, v) in [
                (&mut e.result, result),
                (&mut e.truth, truth),
                (&mut e.train_outcomes, train_outcomes),
                (&mut e.test_covariates, test_covariates),
                (&mut e.test_outcomes, test_outcomes),
            ] {
                if v.is_some() {
                    *slot = v;
                }
            }
            if horizon.is_some() {
                e.horizon = horizon;
            }
            commands::evaluate(&cfg, &out)
        }
        Command::Replicate { scenario, model, grid, reps, out } => {
            scenario.apply(&mut cfg.simulate);
            model.apply(&mut cfg.hyper, &mut cfg.fit);
            grid.apply(&mut cfg.grid);
            if let Some(r) = reps {
                cfg.replicate.reps = r;
            }
            commands::replicate(&cfg, &out)
        }
        Command::Screen { data, top, out_dir } => {
            data.apply(&mut cfg.data);
            if let Some(t) = top {
                cfg.screen.top = t;
            }
            commands::screen(&cfg, &out_dir)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("pathvb: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
