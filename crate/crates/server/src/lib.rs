//! Network-facing Coral node: tool calls over HTTP, mention and claim
//! streams over SSE, a checksummed write-ahead event log, and the coraliser
//! that onboards external endpoints as proxy agents.
//!
//! ```no_run
//! # async fn run() -> anyhow::Result<()> {
//! use clap::Parser;
//! let config = coral_server::ServerConfig::parse_from(["coral-server", "--port", "0"]);
//! let server = coral_server::serve(config).await?;
//! println!("listening on {}", server.url());
//! # Ok(()) }
//! ```

pub mod audit;
pub mod client;
pub mod coraliser;
pub mod http;
pub mod node;
pub mod wal;

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use anyhow::{bail, Context};
use clap::Parser;
use coral_core::{Clock, EscrowConfig, SimClock, SystemClock, ThreadEngineConfig, TokenAmount};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub use client::{ClientError, CoralClient};
pub use coraliser::{Coraliser, CoraliserSettings, ProxyStatus, SettingsEntry};
pub use node::{Node, NodeConfig, Op, ToolRequest, ToolResponse};

#[derive(Debug, Clone, Parser)]
#[command(name = "coral-server", version, about = "Coral coordination node")]
pub struct ServerConfig {
    /// TCP port; 0 picks a free one.
    #[arg(long, env = "CORAL_PORT", default_value_t = 5555)]
    pub port: u16,
    #[arg(long, env = "CORAL_BIND", default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
    pub bind: IpAddr,
    /// Event log path. Without it nothing survives a restart.
    #[arg(long, env = "CORAL_LOG")]
    pub log: Option<PathBuf>,
    /// fsync after every record.
    #[arg(long, env = "CORAL_FSYNC")]
    pub fsync: bool,
    /// Seconds between session creation and the claim deadline.
    #[arg(long, env = "CORAL_CLAIM_WINDOW", default_value_t = coral_core::escrow::DEFAULT_CLAIM_WINDOW_SECONDS)]
    pub claim_window: u64,
    #[arg(long, env = "CORAL_MAX_AGENTS", default_value_t = coral_core::escrow::MAX_AGENTS)]
    pub max_agents: usize,
    /// Smallest per-agent cap, in base units.
    #[arg(long, env = "CORAL_MIN_CAP", default_value_t = coral_core::escrow::MIN_CAP_LAMPORTS.units())]
    pub min_cap: u64,
    #[arg(long, env = "CORAL_CORALISER_SETTINGS")]
    pub coraliser_settings: Option<PathBuf>,
    /// Simulated clock plus the /test routes. Loopback binds only.
    #[arg(long, env = "CORAL_ENABLE_TEST_CLOCK")]
    pub enable_test_clock: bool,
    /// Start value of the simulated clock.
    #[arg(long, env = "CORAL_CLOCK_START", default_value_t = 0)]
    pub clock_start: u64,
    #[arg(long, env = "CORAL_HEARTBEAT_SECS", default_value_t = 15)]
    pub heartbeat_secs: u64,
    #[arg(long, env = "CORAL_MAX_BODY_BYTES", default_value_t = 65_536)]
    pub max_body_bytes: usize,
}

impl ServerConfig {
    pub fn node_config(&self) -> NodeConfig {
        NodeConfig {
            threads: ThreadEngineConfig {
                max_body_bytes: self.max_body_bytes,
                ..ThreadEngineConfig::default()
            },
            escrow: EscrowConfig {
                max_agents: self.max_agents,
                min_cap: TokenAmount::new(self.min_cap),
                claim_window: self.claim_window,
            },
            ..NodeConfig::default()
        }
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    node: Arc<Node>,
    coraliser: Arc<OnceLock<Coraliser>>,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn node(&self) -> &Arc<Node> {
        &self.node
    }

    pub fn coraliser(&self) -> Option<&Coraliser> {
        self.coraliser.get()
    }

    /// Stops accepting requests. Open event streams are cut after a grace
    /// period.
    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if tokio::time::timeout(Duration::from_secs(1), &mut self.task).await.is_err() {
            self.task.abort();
        }
    }

    /// Resolves when the server task ends.
    pub async fn wait(self) -> anyhow::Result<()> {
        self.task.await.context("server task panicked")?.context("server failed")
    }
}

/// Replays the event log, binds the listener, starts the coraliser and
/// returns once the node is accepting requests.
pub async fn serve(config: ServerConfig) -> anyhow::Result<ServerHandle> {
    if config.enable_test_clock && !config.bind.is_loopback() {
        bail!("--enable-test-clock requires a loopback --bind address, got {}", config.bind);
    }
    let settings = match &config.coraliser_settings {
        Some(p) => Some(coraliser::load_settings(p).with_context(|| format!("coraliser settings {}", p.display()))?),
        None => None,
    };
    let clock: Arc<dyn Clock> = if config.enable_test_clock {
        Arc::new(SimClock::new(config.clock_start))
    } else {
        Arc::new(SystemClock)
    };
    let node = match &config.log {
        Some(path) => {
            let (log, records) = wal::FileLog::open(path, config.fsync)?;
            let n = records.len();
            let node = Node::recover(config.node_config(), clock, Box::new(log), records)?;
            tracing::info!(records = n, path = %path.display(), "event log replayed");
            node
        }
        None => Node::new(config.node_config(), clock, Box::new(wal::NullLog)),
    };
    let node = Arc::new(node);
    let listener = tokio::net::TcpListener::bind((config.bind, config.port))
        .await
        .with_context(|| format!("cannot bind {}:{}", config.bind, config.port))?;
    let addr = listener.local_addr()?;
    let coraliser_cell = Arc::new(OnceLock::new());
    let app = http::router(http::AppState {
        node: node.clone(),
        test_mode: config.enable_test_clock,
        heartbeat: Duration::from_secs(config.heartbeat_secs.max(1)),
        coraliser: coraliser_cell.clone(),
    });
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = rx.await;
            })
            .await
    });
    let handle = ServerHandle {
        addr,
        node: node.clone(),
        coraliser: coraliser_cell.clone(),
        shutdown: Some(tx),
        task,
    };
    if let Some(settings) = settings {
        let client = CoralClient::new(&handle.url())?;
        let node = node.clone();
        let c = Coraliser::start(&settings, &client, move |a| node.token_of(a)).await?;
        let _ = coraliser_cell.set(c);
    }
    tracing::info!(%addr, "coral node listening");
    Ok(handle)
}
