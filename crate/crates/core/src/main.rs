use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use activepool::cli::{self, CliConfig, Subset};
use activepool::datapool::Split;
use activepool::run_loop::RunStrategy;

#[derive(Parser)]
#[command(
    name = "activepool",
    version,
    about = "Active data selection and continuous training for real/fake detectors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark and write its manifest.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides synth.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Manifest file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the base model and run the selection loop.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        /// base | neg-energy | random (overrides run.strategy).
        #[arg(long)]
        strategy: Option<RunStrategy>,
        /// Overrides run.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue an interrupted run.
    Resume {
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the EER of a checkpoint on one split of a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// SEED | POOL | VAL | TEST
        #[arg(long, default_value = "TEST", value_parser = parse_split)]
        split: Split,
        /// all | seen | unseen: restrict to sources seen in the SEED split or not.
        #[arg(long, default_value = "all")]
        subset: Subset,
        /// Report file (JSON).
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.to_ascii_uppercase().parse()
}

fn execute(command: Command) -> activepool::Result<()> {
    match command {
        Command::Synth { config, seed, out } => {
            let mut cfg = CliConfig::load(config.as_deref())?;
            if let Some(seed) = seed {
                cfg.synth.seed = seed;
            }
            cli::cmd_synth(&cfg, &out)?;
        }
        Command::Run {
            config,
            manifest,
            strategy,
            seed,
            out,
        } => {
            let mut cfg = CliConfig::load(config.as_deref())?;
            if let Some(strategy) = strategy {
                cfg.run.strategy = strategy;
            }
            if let Some(seed) = seed {
                cfg.run.seed = seed;
            }
            let outcome = cli::cmd_run(&cfg, &manifest, &out)?;
            if let Some(last) = outcome.records.last() {
                log::info!(
                    "finished at iteration {}: test EER {:.2}%",
                    last.iteration,
                    100.0 * last.eer_test
                );
            }
        }
        Command::Resume { out } => {
            cli::cmd_resume(&out)?;
        }
        Command::Eval {
            checkpoint,
            manifest,
            split,
            subset,
            out,
        } => {
            let report = cli::cmd_eval(&checkpoint, &manifest, split, subset, &out)?;
            log::info!(
                "EER {:.2}% on {} ({:?})",
                100.0 * report.result.eer,
                split,
                subset
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
