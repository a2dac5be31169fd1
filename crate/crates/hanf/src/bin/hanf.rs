//! Thin CLI over the library: `hanf search|eval|both --config <path>`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hanf::config::ExperimentConfig;
use hanf::runner::{run, StageSelection};
use hanf::HanfError;

#[derive(Parser)]
#[command(name = "hanf", about = "Joint hyperparameter and architecture search over simulated federated clients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the search stage and emit the discovered genotype.
    Search {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train an evaluation network from a genotype document.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Genotype document produced by a search run.
        #[arg(long)]
        genotype: PathBuf,
    },
    /// Search, then evaluate the resulting genotype.
    Both {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn load(common: &CommonArgs) -> Result<ExperimentConfig, HanfError> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn execute() -> Result<(), HanfError> {
    let cli = Cli::parse();
    let (config, stage, genotype) = match &cli.command {
        Command::Search { common } => (load(common)?, StageSelection::Search, None),
        Command::Eval { common, genotype } => (load(common)?, StageSelection::Eval, Some(genotype.clone())),
        Command::Both { common } => (load(common)?, StageSelection::Both, None),
    };
    let metrics = run(&config, stage, genotype.as_deref())?;
    if let Some(s) = &metrics.search {
        println!(
            "search: {} rounds, best val accuracy {}, genotype at {}",
            s.rounds_executed,
            s.best_val_accuracy.map(|a| format!("{a:.4}")).unwrap_or_else(|| "n/a".into()),
            config.out_dir.join(&s.genotype_path).display(),
        );
    }
    if let Some(e) = &metrics.eval {
        println!(
            "eval: {} rounds, final val accuracy {:.4}{}",
            e.rounds_executed,
            e.final_val_accuracy,
            e.test_accuracy.map(|a| format!(", test accuracy {a:.4}")).unwrap_or_default(),
        );
    }
    println!("artifacts in {}", config.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    match execute() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ HanfError::Config { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
