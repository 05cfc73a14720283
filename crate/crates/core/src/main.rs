use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use stm_core::cli::{self, RunConfig, SplitName};

#[derive(Parser)]
#[command(
    name = "stm",
    about = "Manifold-regularized training, manifold-weight inspection, and concentration-bound verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for SplitName {
    fn from(s: SplitArg) -> SplitName {
        match s {
            SplitArg::Train => SplitName::Train,
            SplitArg::Test => SplitName::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train per config; writes checkpoint.stm, metrics.csv, summary.toml.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override a config key, e.g. --set train.sigma=0.1 (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Evaluate a checkpoint on the configured dataset.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Train)]
        split: SplitArg,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Dump manifold weights (LLE coefficients or Laplacian affinities) for
    /// one sample against its class buffer.
    Weights {
        #[arg(long)]
        config: PathBuf,
        /// Query sample index; defaults to weights.sample from the config.
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Monte Carlo verification of the tail bounds; writes CSV reports.
    Theory {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Dump tapped features for a dataset split through a checkpoint.
    Embed {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Train)]
        split: SplitArg,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Generate the configured dataset and export it as CSV.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Train)]
        split: SplitArg,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn run() -> stm_core::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train { config, set } => {
            let cfg = RunConfig::load(&config, &set)?;
            cli::cmd_train(&cfg)?;
        }
        Command::Eval {
            config,
            checkpoint,
            split,
            set,
        } => {
            let cfg = RunConfig::load(&config, &set)?;
            cli::cmd_eval(&cfg, &checkpoint, split.into())?;
        }
        Command::Weights {
            config,
            sample,
            set,
        } => {
            let cfg = RunConfig::load(&config, &set)?;
            let path = cli::cmd_weights(&cfg, sample)?;
            println!("wrote {}", path.display());
        }
        Command::Theory { config, set } => {
            let cfg = RunConfig::load(&config, &set)?;
            cli::cmd_theory(&cfg)?;
        }
        Command::Embed {
            config,
            checkpoint,
            split,
            set,
        } => {
            let cfg = RunConfig::load(&config, &set)?;
            let path = cli::cmd_embed(&cfg, &checkpoint, split.into())?;
            println!("wrote {}", path.display());
        }
        Command::GenData {
            config,
            out,
            split,
            set,
        } => {
            let cfg = RunConfig::load(&config, &set)?;
            cli::cmd_gen_data(&cfg, &out, split.into())?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err}");
        std::process::exit(cli::exit_code(&err));
    }
}
