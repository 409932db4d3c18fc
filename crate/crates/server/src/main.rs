use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use vegaplus_server::cli::{self, BenchOptions, BenchSource, RunOptions, UsageError};
use vegaplus_server::config::{network_profile, Config};
use vegaplus_server::{router, AppState};

#[derive(Parser)]
#[command(name = "vegaplus", version, about = "Partitions visualization dataflows between a DBMS and the client")]
struct Cli {
    /// Configuration file (default: $VEGAPLUS_CONFIG, then ./vegaplus.toml).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Backend {
    /// Database url: embedded://[path] or postgres://...
    #[arg(long)]
    db: Option<String>,
    /// Simulated network latency per round trip.
    #[arg(long)]
    latency_ms: Option<f64>,
    /// Simulated bandwidth in megabits per second; unlimited when omitted.
    #[arg(long)]
    bandwidth_mbps: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the HTTP API.
    Serve {
        #[command(flatten)]
        backend: Backend,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Execute a spec once and print its sink datasets.
    Run {
        #[command(flatten)]
        backend: Backend,
        #[arg(long)]
        spec: PathBuf,
        /// Load a CSV file as table NAME (repeatable).
        #[arg(long, value_name = "NAME=FILE")]
        data: Vec<String>,
        /// Apply a signal value after the first run (repeatable).
        #[arg(long, value_name = "NAME=VALUE")]
        signal: Vec<String>,
        /// Print the recommended plan's SQL and cost estimates instead.
        #[arg(long)]
        explain: bool,
        /// Run the all-client plan.
        #[arg(long)]
        baseline: bool,
    },
    /// Time baseline and recommended plans over a sweep of table sizes.
    Bench {
        #[command(flatten)]
        backend: Backend,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_name = "NAME=FILE")]
        data: Vec<String>,
        /// Generate table NAME with a built-in generator (flights or jobs).
        #[arg(long, value_name = "NAME=GENERATOR")]
        synth: Vec<String>,
        /// Comma-separated row counts.
        #[arg(long, value_delimiter = ',', required = true)]
        rows: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repeat: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// CSV output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn apply_backend(config: &mut Config, b: &Backend) -> anyhow::Result<vegaplus_core::partition::NetworkProfile> {
    if let Some(db) = &b.db {
        config.server.db = db.clone();
    }
    if let Some(l) = b.latency_ms {
        config.network.latency_ms = l;
    }
    if b.bandwidth_mbps.is_some() {
        config.network.bandwidth_mbps = b.bandwidth_mbps;
    }
    network_profile(config.network.latency_ms, config.network.bandwidth_mbps)
        .map_err(|m| UsageError(m).into())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn real_main(cli: Cli) -> anyhow::Result<()> {
    let mut config = Config::load(cli.config.as_deref()).map_err(|e| UsageError(e.to_string()))?;
    match cli.command {
        Command::Serve { backend, port } => {
            apply_backend(&mut config, &backend)?;
            if let Some(p) = port {
                config.server.port = p;
            }
            serve(config)
        }
        Command::Run {
            backend,
            spec,
            data,
            signal,
            explain,
            baseline,
        } => {
            let profile = apply_backend(&mut config, &backend)?;
            let opts = RunOptions {
                spec,
                data,
                signals: signal,
                profile,
                explain,
                baseline,
            };
            let stdout = std::io::stdout();
            cli::run(config, &opts, &mut stdout.lock())
        }
        Command::Bench {
            backend,
            spec,
            data,
            synth,
            rows,
            repeat,
            seed,
            out,
        } => {
            let profile = apply_backend(&mut config, &backend)?;
            let mut sources = Vec::new();
            for d in &data {
                sources.push(BenchSource::parse_data(d)?);
            }
            for s in &synth {
                sources.push(BenchSource::parse_synth(s)?);
            }
            let opts = BenchOptions {
                spec,
                sources,
                rows,
                repeat,
                profile,
                seed,
            };
            let mut sink: Box<dyn Write> = match out {
                Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
                None => Box::new(std::io::stdout().lock()),
            };
            cli::bench(config, &opts, &mut *sink)?;
            sink.flush()?;
            Ok(())
        }
    }
}

fn serve(config: Config) -> anyhow::Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let port = config.server.port;
        let ttl = config.server.session_ttl_secs;
        let state = Arc::new(AppState::new(config)?);
        let reaper = state.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_secs(ttl.clamp(1, 60)));
            loop {
                tick.tick().await;
                let n = reaper.reap_expired();
                if n > 0 {
                    tracing::info!(expired = n, "reaped idle sessions");
                }
            }
        });
        let addr = SocketAddr::from(([0, 0, 0, 0], port));
        let listener = tokio::net::TcpListener::bind(addr).await?;
        tracing::info!(%addr, "listening");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
