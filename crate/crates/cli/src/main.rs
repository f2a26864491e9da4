use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ivpp::objectives::Method;
use ivpp_cli::commands::{self, first_condition};
use ivpp_cli::{ExperimentConfig, Profile, Result, RunCondition};

#[derive(Parser, Debug)]
#[command(name = "ivpp", version, about = "Intra-video positive pair pretraining experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML config overlaid on the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Profile supplying defaults (overrides the config's `profile` key).
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,

    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (frames, manifest and ROIs).
    Synth,
    /// Pretrain one condition and write its checkpoint.
    Pretrain {
        /// Defaults to the first configured method.
        #[arg(long)]
        method: Option<Method>,
        /// Defaults to the first configured δ.
        #[arg(long)]
        delta: Option<f64>,
        /// Use sample weights (defaults to the first configured flag).
        #[arg(long)]
        weights: Option<bool>,
    },
    /// Evaluate a pretrained checkpoint with the configured mode.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Pretrain and evaluate every (method, δ, weights) condition.
    Sweep,
    /// Repeated-measures ANOVA and Bonferroni post-hoc tests on a results CSV.
    Stats {
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Mean (std) tables from a results CSV.
    Report {
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Print the resolved config.
    Config,
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path, cli.profile)?,
        None => ExperimentConfig::profile(cli.profile.unwrap_or(Profile::Desk)),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    let cfg = cfg.resolve();
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<String> {
    let cfg = resolve(&cli)?;
    match &cli.command {
        Command::Synth => commands::cmd_synth(&cfg),
        Command::Pretrain { method, delta, weights } => {
            let first = first_condition(&cfg);
            let cond = RunCondition {
                method: method.unwrap_or(first.method),
                delta: delta.unwrap_or(first.delta),
                sw: weights.unwrap_or(first.sw),
            };
            if !(cond.delta >= 0.0) {
                return Err(ivpp_cli::CliError::Config(format!("delta must be nonnegative, got {}", cond.delta)));
            }
            commands::cmd_pretrain(&cfg, cond)
        }
        Command::Eval { checkpoint } => commands::cmd_eval(&cfg, checkpoint.as_deref()),
        Command::Sweep => commands::cmd_sweep(&cfg),
        Command::Stats { results } => commands::cmd_stats(&cfg, results.as_deref()),
        Command::Report { results } => commands::cmd_report(&cfg, results.as_deref()),
        Command::Config => cfg.to_toml(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
