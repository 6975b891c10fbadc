//! `coevo`: command-line front end for annotation sessions.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "coevo", version, about = "Selective annotation sessions")]
struct Cli {
    /// Session directory.
    #[arg(long, global = true, env = "COEVO_SESSION", default_value = "coevo-session")]
    session: PathBuf,

    #[command(subcommand)]
    command: Command,
}

/// Engine settings: a `key = value` file, then individual overrides.
#[derive(Debug, Args, Default)]
struct ConfigArgs {
    /// Config file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set k=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create a session.
    Init {
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Add samples from an embedding file.
    Ingest {
        #[arg(long)]
        embeddings: PathBuf,
        /// Oracle labels, kept with each sample for evaluation.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// One payload URI per line, in row order.
        #[arg(long)]
        payloads: Option<PathBuf>,
        /// Samples per journaled ingest event.
        #[arg(long, default_value_t = 10_000)]
        chunk: usize,
    },
    /// Load model probabilities from NDJSON `{"id", "probs"}` lines or
    /// compute them with a linear head.
    PredictImport {
        #[arg(long, conflicts_with = "head", required_unless_present = "head")]
        probs: Option<PathBuf>,
        #[arg(long)]
        head: Option<PathBuf>,
    },
    /// Draw a batch; prints one id per line.
    Select {
        #[arg(long)]
        size: Option<usize>,
        /// Weight by distance to already covered samples instead of gain.
        #[arg(long)]
        unlabeled: bool,
    },
    /// Apply `id label [alpha]` lines from a file or standard input.
    Annotate {
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Return selected samples to the pool.
    Release { ids: Vec<String> },
    /// Session counts and gain histogram.
    Stats,
    /// Evaluate the stop rule.
    StopCheck,
    /// Train a linear head on the session's annotations.
    Train {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 2.0)]
        learning_rate: f64,
        #[arg(long, default_value_t = 1e-4)]
        l2: f64,
    },
    /// Replay the annotation loop against oracle labels.
    Simulate(commands::SimulateArgs),
    /// Build a superset from a corpus and retrieve neighbors of targets.
    Enhance(commands::EnhanceArgs),
    /// Confidence calculator.
    Fuse {
        #[command(subcommand)]
        op: commands::FuseOp,
    },
    /// Serve the session over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: std::net::SocketAddr,
        #[arg(long, default_value_t = 600)]
        lease_secs: u64,
        #[arg(long, env = "COEVO_TOKEN")]
        token: Option<String>,
    },
    /// Write a snapshot into the session and compact the journal.
    Snapshot {
        /// Also copy the snapshot here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replace the session state with a snapshot file.
    Restore { file: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: code=usage message={first}");
            return ExitCode::from(2);
        }
    };
    match commands::run(&cli.session, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e
                .downcast_ref::<coevo_core::Error>()
                .map_or("failed", coevo_core::Error::code);
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("error: code={code} message={message}");
            ExitCode::FAILURE
        }
    }
}
