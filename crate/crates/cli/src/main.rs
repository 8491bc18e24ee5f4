use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use psro_cli::commands::{self, EvalSource, PathSource};
use psro_cli::config::{Overrides, RunConfig};
use psro_cli::{exit, server};
use psro_core::session::SessionManager;
use psro_core::{io, Error, Result};

/// Elastoplastic FEM data, POD reduction and LSTM surrogate pipeline.
#[derive(Parser)]
#[command(name = "psro", version)]
struct Cli {
    /// JSON configuration: `preset`, `out`, `search` and pipeline overrides.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = ["table", "beam"])]
    scenario: Option<String>,
    /// Run directory holding every stage's artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve sampled and catalog load paths with the full-order model.
    Generate,
    /// Build POD bases and project the sampled snapshots.
    Reduce,
    /// Train the multi-task ensemble (optionally after a random search).
    Train,
    /// Evaluate a checkpoint on the test catalog, or compare two blobs.
    Eval {
        #[arg(long, requires = "truth")]
        pred: Option<PathBuf>,
        #[arg(long, requires = "pred")]
        truth: Option<PathBuf>,
        #[arg(long)]
        train_max: Option<f64>,
        /// Timed inference repetitions.
        #[arg(long, default_value_t = 200)]
        repetitions: usize,
    },
    /// Predict full fields for one load path.
    Infer {
        /// Catalog case key, e.g. `ramp_up`.
        #[arg(long, conflicts_with_all = ["path", "mu"])]
        case: Option<String>,
        /// JSON file with `[[mu..], ..]` or `{"steps": ...}`.
        #[arg(long, conflicts_with = "mu")]
        path: Option<PathBuf>,
        /// Inline path `"f1,x1;f2,x2;..."`.
        #[arg(long, allow_hyphen_values = true)]
        mu: Option<String>,
        #[arg(long)]
        allow_extrapolation: bool,
    },
    /// Serve stepwise sessions over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Checkpoint directories; defaults to the run's own checkpoint.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        /// Static files (the steering UI) served at `/`.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let flags = Overrides { scenario: cli.scenario, seed: cli.seed, out: cli.out };
    let cfg = RunConfig::load(cli.config.as_deref(), &flags)?;
    let summary = match cli.command {
        Command::Generate => commands::generate_stage(&cfg)?,
        Command::Reduce => commands::reduce_stage(&cfg)?,
        Command::Train => commands::train_stage(&cfg)?,
        Command::Eval { pred, truth, train_max, repetitions } => {
            let source = match (pred, truth) {
                (Some(pred), Some(truth)) => EvalSource::Blobs { pred, truth, train_max },
                _ => EvalSource::Checkpoint,
            };
            commands::eval_stage(&cfg, source, repetitions)?
        }
        Command::Infer { case, path, mu, allow_extrapolation } => {
            let source = match (case, path, mu) {
                (Some(c), _, _) => PathSource::Case(c),
                (_, Some(p), _) => PathSource::File(p),
                (_, _, Some(m)) => PathSource::Inline(m),
                _ => return Err(Error::Config("infer needs --case, --path or --mu".into())),
            };
            commands::infer_stage(&cfg, source, allow_extrapolation)?
        }
        Command::Serve { addr, checkpoint, static_dir } => {
            let dirs = if checkpoint.is_empty() { vec![cfg.checkpoint_dir()] } else { checkpoint };
            let surrogates = dirs.iter().map(|d| io::load_surrogate(d)).collect::<Result<Vec<_>>>()?;
            let manager = Arc::new(SessionManager::new(surrogates)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(server::serve(manager, &addr, static_dir))?;
            return Ok(());
        }
    };
    println!("{summary}");
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("{}", exit::report(&e));
            ExitCode::from(exit::code(&e) as u8)
        }
    }
}
