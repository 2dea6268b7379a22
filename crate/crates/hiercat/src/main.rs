use std::path::PathBuf;

use clap::{Parser, Subcommand};

use hiercat::cli::{cmd_analyze, cmd_gen_data, cmd_generalize, cmd_report, cmd_train, cmd_train_all};
use hiercat::config::load_config;
use hiercat::network::Regime;
use hiercat::{Error, Result};

#[derive(Parser)]
#[command(
    name = "hiercat",
    version,
    about = "Hierarchical category learning testbed: synthetic taxonomic stimuli, multi-head classifier training, embedding analyses, and few-shot generalization experiments."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config JSON; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory (overrides the config's out_dir).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Master seed (overrides the config's master_seed).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Dotted-path config override, e.g. --set train.epochs_pretrain=10.
    /// Values parse as JSON where possible, else as strings. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the taxonomy and dataset CSVs plus a manifest.
    GenData,
    /// Train a regime (or `all`) on the train split and write a checkpoint.
    Train {
        /// One of: sub, basic, sub-pre-basic, basic-pre-sub, all.
        #[arg(long)]
        regime: String,
        /// With --regime all: train the four regimes on separate threads.
        #[arg(long)]
        parallel: bool,
    },
    /// Analyze a checkpoint's held-out embeddings (similarity, dendrogram,
    /// PCA, purity, optional R2 against gold ratings).
    Analyze {
        /// One of: sub, basic, sub-pre-basic, basic-pre-sub, all.
        #[arg(long)]
        regime: String,
    },
    /// Run the few-shot generalization experiments on a checkpoint.
    Generalize {
        /// One of: sub, basic, sub-pre-basic, basic-pre-sub, all.
        #[arg(long)]
        regime: String,
    },
    /// Summarize all artifacts in the output directory as Markdown.
    Report,
}

fn parse_regimes(raw: &str) -> Result<Vec<Regime>> {
    if raw == "all" {
        Ok(Regime::ALL.to_vec())
    } else {
        Ok(vec![Regime::parse(raw)?])
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(
        cli.config.as_deref(),
        &cli.set,
        cli.seed,
        cli.out.as_deref(),
    )?;
    match cli.command {
        Command::GenData => cmd_gen_data(&cfg),
        Command::Train { regime, parallel } => {
            if regime == "all" {
                cmd_train_all(&cfg, parallel)
            } else {
                cmd_train(&cfg, Regime::parse(&regime)?)
            }
        }
        Command::Analyze { regime } => {
            for r in parse_regimes(&regime)? {
                cmd_analyze(&cfg, r)?;
            }
            Ok(())
        }
        Command::Generalize { regime } => {
            for r in parse_regimes(&regime)? {
                cmd_generalize(&cfg, r)?;
            }
            Ok(())
        }
        Command::Report => cmd_report(&cfg),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        let mut source = std::error::Error::source(&err);
        while let Some(cause) = source {
            eprintln!("  caused by: {cause}");
            source = cause.source();
        }
        std::process::exit(Error::exit_code(&err));
    }
}
