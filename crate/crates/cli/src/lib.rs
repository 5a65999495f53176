//! Command-line front end: argument parsing, run configuration, thread pool
//! setup and exit-code mapping around the `latentcd` library.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use commands::Layout;
pub use config::{Overrides, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] latentcd::Error),

    #[error("usage error: {0}")]
    Usage(String),
}

impl CliError {
    /// 2 for usage and validation problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "latentcd",
    version,
    about = "Latent-representation change detection for multispectral tile pairs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Root seed for every random stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Require a seed and bitwise reproducible outputs.
    #[arg(long, global = true)]
    pub deterministic: bool,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene pair, labels and training scenes.
    Synth,
    /// Fit preprocessing and train the VAE.
    Train,
    /// Score the scene pair with every configured method.
    Score,
    /// Bootstrap evaluation and method comparison.
    Eval,
    /// Print the comparison table of the last evaluation.
    Report,
}

impl Cli {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            threads: self.threads,
            deterministic: self.deterministic,
            out: self.out.clone(),
        }
    }

    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        base.finalize(&self.overrides())
    }
}

/// Runs one command inside a pool of the configured size; returns the text to print.
pub fn execute(command: Command, cfg: &RunConfig) -> Result<String, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| {
        CliError::Usage(format!(
            "cannot start {:?} worker threads: {e}",
            cfg.threads
        ))
    })?;
    pool.install(|| match command {
        Command::Synth => commands::cmd_synth(cfg).map(|o| {
            format!(
                "wrote scenes to {} ({} of {} tiles burned)",
                Layout::new(&cfg.paths.out).scenes().display(),
                o.positives,
                o.tiles
            )
        }),
        Command::Train => commands::cmd_train(cfg).map(|o| {
            let best = o.best_epoch.map(|b| (b, o.history[b - 1].validation.total));
            format!(
                "trained on {} tiles for {} epochs; {}",
                o.tiles,
                o.history.len(),
                best.map_or("no epochs run".into(), |(b, v)| format!(
                    "best epoch {b} (validation loss {v:.5})"
                ))
            )
        }),
        Command::Score => commands::cmd_score(cfg).map(|o| {
            o.maps
                .iter()
                .map(|(m, s)| format!("{m}: {} tiles scored", s.present().len()))
                .collect::<Vec<_>>()
                .join("\n")
        }),
        Command::Eval => commands::cmd_eval(cfg).map(|r| r.to_table()),
        Command::Report => commands::cmd_report(cfg),
    })
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = cli.run_config().and_then(|cfg| execute(cli.command, &cfg));
    match result {
        Ok(text) => {
            println!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
