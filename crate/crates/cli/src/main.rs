use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use choir_cli::{router, spawn_sweeper, AppState, SWEEP_INTERVAL};
use choir_core::gateway::journal::read_journal;
use choir_core::gateway::{summarize_records, Config, JournalError, Service, ServiceError};
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

const EXIT_CONFIG: u8 = 2;
const EXIT_CORRUPT_JOURNAL: u8 = 3;

#[derive(Parser)]
#[command(name = "choir", version, about = "Chat-driven knowledge repository service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        /// Config file. Falls back to $CHOIR_CONFIG, then ./choir.toml.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Check a journal and report what it would restore.
    Replay {
        #[arg(long)]
        journal: PathBuf,
        /// Only read and validate; do not open the repository.
        #[arg(long)]
        dry_run: bool,
        /// Config used to rebuild the service when not a dry run.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Serve { config } => serve(config),
        Command::Replay { journal, dry_run, config } => replay(journal, dry_run, config),
    }
}

fn load_config(explicit: Option<PathBuf>) -> Result<Config, ExitCode> {
    let path = Config::resolve_path(explicit.as_deref());
    Config::load(&path).map_err(|e| {
        eprintln!("choir: config {}: {e}", path.display());
        ExitCode::from(EXIT_CONFIG)
    })
}

fn service_exit(e: &ServiceError) -> ExitCode {
    eprintln!("choir: {e}");
    match e {
        ServiceError::Config(_) => ExitCode::from(EXIT_CONFIG),
        ServiceError::Journal(JournalError::Corrupt { .. }) => ExitCode::from(EXIT_CORRUPT_JOURNAL),
        _ => ExitCode::FAILURE,
    }
}

fn serve(config: Option<PathBuf>) -> ExitCode {
    let config = match load_config(config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let service = match Service::from_config(&config) {
        Ok(s) => Arc::new(s),
        Err(e) => return service_exit(&e),
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("choir: cannot start runtime: {e}");
            return ExitCode::FAILURE;
        }
    };
    runtime.block_on(async move {
        let listener = match tokio::net::TcpListener::bind(&config.listen_addr).await {
            Ok(l) => l,
            Err(e) => {
                eprintln!("choir: cannot listen on {}: {e}", config.listen_addr);
                return ExitCode::FAILURE;
            }
        };
        let state = AppState::new(service);
        let sweeper = spawn_sweeper(state.clone(), SWEEP_INTERVAL);
        tracing::info!(addr = %config.listen_addr, repo = %config.repo_root.display(), "listening");
        let served = axum::serve(listener, router(state))
            .with_graceful_shutdown(shutdown_signal())
            .await;
        sweeper.abort();
        match served {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("choir: {e}");
                ExitCode::FAILURE
            }
        }
    })
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        if let Ok(mut term) = signal(SignalKind::terminate()) {
            tokio::select! {
                _ = tokio::signal::ctrl_c() => {}
                _ = term.recv() => {}
            }
            return;
        }
    }
    let _ = tokio::signal::ctrl_c().await;
}

fn replay(journal: PathBuf, dry_run: bool, config: Option<PathBuf>) -> ExitCode {
    let records = match read_journal(&journal) {
        Ok(r) => r,
        Err(e @ JournalError::Corrupt { .. }) => {
            eprintln!("choir: {e}");
            return ExitCode::from(EXIT_CORRUPT_JOURNAL);
        }
        Err(e) => {
            eprintln!("choir: {e}");
            return ExitCode::FAILURE;
        }
    };
    let summary = summarize_records(&records);
    if !dry_run {
        let mut config = match load_config(config) {
            Ok(c) => c,
            Err(code) => return code,
        };
        config.journal_path = journal;
        let service = match Service::from_config(&config) {
            Ok(s) => s,
            Err(e) => return service_exit(&e),
        };
        let state = service.workflow_state();
        let open = state.flows.values().filter(|f| !f.state.is_terminal()).count();
        eprintln!("choir: restored {} flow(s), {open} still open", state.flows.len());
    }
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    ExitCode::SUCCESS
}
