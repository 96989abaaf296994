//! `ldgd`: synth, train, infer, decode, eval, gradcheck and cv subcommands
//! driven by one TOML config.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "ldgd", version, about = "Latent-variable double GP decoder")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Log at info level (LDGD_LOG takes precedence).
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `paths.output_dir`.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its true latents.
    Synth(CommonArgs),
    /// Fit a model; writes the model, trace and ARD relevance tables.
    Train(CommonArgs),
    /// Infer test latents from observations and labels.
    Infer(CommonArgs),
    /// Decode labels from continuous observations alone.
    Decode(CommonArgs),
    /// Score decoded predictions against the dataset's labels.
    Eval(CommonArgs),
    /// Compare analytic and finite-difference gradients on tiny models.
    Gradcheck(CommonArgs),
    /// Stratified k-fold cross-validation of the full pipeline.
    Cv(CommonArgs),
}

impl Command {
    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::Synth(a)
            | Command::Train(a)
            | Command::Infer(a)
            | Command::Decode(a)
            | Command::Eval(a)
            | Command::Gradcheck(a)
            | Command::Cv(a) => a,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Infer(_) => "infer",
            Command::Decode(_) => "decode",
            Command::Eval(_) => "eval",
            Command::Gradcheck(_) => "gradcheck",
            Command::Cv(_) => "cv",
        }
    }
}

/// Loads the config, applies flag overrides, dumps the effective config
/// into the output directory and dispatches.
pub fn run(cli: &Cli) -> Result<()> {
    let args = cli.command.common();
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.override_seed(seed);
    }
    if let Some(dir) = &args.output_dir {
        let cwd = std::env::current_dir().map_err(|e| CliError::io(".", e))?;
        cfg.paths.output_dir = cwd.join(dir);
    }
    cfg.validate()?;
    let dump = cfg.dump()?;
    output::atomic_write(
        &cfg.paths
            .output_dir
            .join(format!("effective_config.{}.toml", cli.command.name())),
        &dump,
    )?;
    log::info!(
        "{} with output in {}",
        cli.command.name(),
        cfg.paths.output_dir.display()
    );
    match &cli.command {
        Command::Synth(_) => commands::synth(&cfg),
        Command::Train(_) => commands::train(&cfg),
        Command::Infer(_) => commands::infer(&cfg),
        Command::Decode(_) => commands::decode(&cfg),
        Command::Eval(_) => commands::eval(&cfg),
        Command::Gradcheck(_) => commands::gradcheck(&cfg),
        Command::Cv(_) => commands::cv(&cfg),
    }
}
