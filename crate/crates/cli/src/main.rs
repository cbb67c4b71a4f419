mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{RunConfig, DEFAULT_OUT_DIR, OUT_DIR_ENV};

#[derive(Debug, Parser)]
#[command(name = "chargetime", version, about = "EV charging-time prediction toolkit")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for all artifacts.
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset and split it into train/validation/test.
    Generate {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-split the stored dataset.
    Split {
        #[arg(long)]
        train: Option<f64>,
        #[arg(long)]
        val: Option<f64>,
        #[arg(long)]
        test: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the gradient-boosted power model on the training split.
    TrainAnalytical {
        /// Run the 5-fold hyperparameter sweep instead of the fixed optimum.
        #[arg(long)]
        cv: bool,
    },
    /// Train the DQN agent on the training split.
    TrainRl {
        #[arg(long)]
        episodes: Option<usize>,
        /// Use the full-length episode budget.
        #[arg(long, conflicts_with = "episodes")]
        paper_scale: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Predict the charging time of one scenario.
    Predict(PredictArgs),
    /// Score all available models on the test split.
    Evaluate,
    /// Write every report table, including learning curves.
    Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Linear,
    Analytical,
    Rl,
    Hybrid,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Initial SoC (fraction).
    #[arg(long = "from")]
    pub s_ini: f64,
    /// Target SoC (fraction).
    #[arg(long = "to")]
    pub s_final: f64,
    /// Nominal battery capacity (kWh).
    #[arg(long)]
    pub capacity: f64,
    /// Nominal maximum charging power of the vehicle (kW).
    #[arg(long)]
    pub power: f64,
    /// Station power (kW).
    #[arg(long)]
    pub station: f64,
    #[arg(long, default_value_t = 1.0)]
    pub soh: f64,
    /// Ambient temperature (°C).
    #[arg(long, default_value_t = 25.0)]
    pub temp: f64,
    /// Nominal pack voltage (V).
    #[arg(long, default_value_t = 400.0)]
    pub voltage: f64,
    /// Cable power limit (kW).
    #[arg(long, default_value_t = 350.0)]
    pub cable: f64,
    #[arg(long, value_enum, default_value_t = ModelKind::Analytical)]
    pub model: ModelKind,
    /// Include the power and current profiles.
    #[arg(long)]
    pub profile: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> chargetime::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let out = cli
        .out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let layout = config::Layout { root: out };
    match cli.command {
        Command::Generate { n, seed } => {
            if let Some(n) = n {
                cfg.dataset.n = n;
            }
            if let Some(s) = seed {
                cfg.dataset.simulator.seed = s;
            }
            cfg.validate()?;
            commands::generate(&cfg, &layout)
        }
        Command::Split {
            train,
            val,
            test,
            seed,
        } => {
            let (t, v, s) = cfg.dataset.split;
            cfg.dataset.split = (train.unwrap_or(t), val.unwrap_or(v), test.unwrap_or(s));
            if let Some(s) = seed {
                cfg.dataset.split_seed = s;
            }
            cfg.validate()?;
            commands::split(&cfg, &layout)
        }
        Command::TrainAnalytical { cv } => {
            cfg.validate()?;
            commands::train_analytical(&cfg, &layout, cv)
        }
        Command::TrainRl {
            episodes,
            paper_scale,
            seed,
        } => {
            if paper_scale {
                cfg.rl.episodes = cfg.rl.paper_scale_episodes;
            }
            if let Some(e) = episodes {
                cfg.rl.episodes = e;
            }
            if let Some(s) = seed {
                cfg.rl.dqn.seed = s;
            }
            cfg.validate()?;
            commands::train_rl(&cfg, &layout)
        }
        Command::Predict(args) => {
            cfg.validate()?;
            commands::predict(&cfg, &layout, &args)
        }
        Command::Evaluate => {
            cfg.validate()?;
            commands::evaluate(&cfg, &layout).map(|_| ())
        }
        Command::Report => {
            cfg.validate()?;
            commands::report(&cfg, &layout)
        }
    }
}
