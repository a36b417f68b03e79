//! Telemetry service: the simulated plant (optionally shadowed by the twin)
//! published over the newline-delimited JSON protocol, plus the HTTP gateway
//! used by the operator console.

pub mod gateway;
pub mod hub;
pub mod tcp;

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::sync::Arc;
use std::time::Duration;

use thermotwin::assistant::Backend;
use thermotwin::gru::{FastGru, GruModel};
use thermotwin::plant::PlantConfig;
use thermotwin::telemetry::DEFAULT_PORT;
use thermotwin::twin::{rollout_with, RolloutOptions};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use tokio::time::{interval, MissedTickBehavior};

pub use hub::Hub;

pub const DEFAULT_HTTP_PORT: u16 = 8080;
/// The plant is stepped and sampled at the critical rate.
pub const TICK: Duration = Duration::from_millis(100);

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: IpAddr,
    /// Telemetry port; 0 picks a free one.
    pub port: u16,
    /// Gateway port; 0 picks a free one.
    pub http_port: u16,
    pub plant: PlantConfig,
    pub noise: bool,
    pub seed: u64,
    /// When present the twin publishes `dt_` expectations.
    pub model: Option<GruModel>,
    /// Seconds between twin rollouts.
    pub twin_period: Duration,
    /// Largest rollout length, in simulated seconds.
    pub twin_horizon: usize,
    pub backend: Backend,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: DEFAULT_PORT,
            http_port: DEFAULT_HTTP_PORT,
            plant: PlantConfig::default(),
            noise: true,
            seed: 0,
            model: None,
            twin_period: Duration::from_secs(5),
            twin_horizon: 600,
            backend: Backend::Fallback,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error(transparent)]
    Plant(#[from] thermotwin::plant::PlantError),
}

/// A running server. Dropping the handle stops it.
pub struct ServerHandle {
    pub telemetry_addr: SocketAddr,
    pub http_addr: SocketAddr,
    pub hub: Arc<Hub>,
    tasks: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    /// Resolve when any service task exits (normally never).
    pub async fn wait(&mut self) {
        if self.tasks.is_empty() {
            return;
        }
        let tasks = std::mem::take(&mut self.tasks);
        let (_, _, rest) = futures::future::select_all(tasks).await;
        self.tasks = rest;
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        for t in &self.tasks {
            t.abort();
        }
    }
}

async fn bind(addr: SocketAddr) -> Result<TcpListener, ServerError> {
    TcpListener::bind(addr).await.map_err(|source| ServerError::Bind { addr, source })
}

/// Bind both ports and spawn the pump, the twin loop (if a model is given),
/// the telemetry listener and the gateway.
pub async fn start(cfg: ServerConfig) -> Result<ServerHandle, ServerError> {
    let t_e = cfg.model.as_ref().map(|m| m.dims.t_e).unwrap_or(0);
    let hub = Arc::new(Hub::new(cfg.plant.clone(), cfg.noise, cfg.seed, cfg.model.is_some(), t_e.max(1), cfg.backend.clone())?);
    let tcp = bind(SocketAddr::new(cfg.bind, cfg.port)).await?;
    let http = bind(SocketAddr::new(cfg.bind, cfg.http_port)).await?;
    let telemetry_addr = tcp.local_addr().expect("bound");
    let http_addr = http.local_addr().expect("bound");

    let mut tasks = vec![tokio::spawn(pump(hub.clone()))];
    if let Some(model) = cfg.model {
        tasks.push(tokio::spawn(twin_loop(hub.clone(), model, cfg.twin_period, cfg.twin_horizon)));
    }
    tasks.push(tokio::spawn(tcp::accept_loop(tcp, hub.clone())));
    let app = gateway::router(hub.clone());
    tasks.push(tokio::spawn(async move {
        if let Err(e) = axum::serve(http, app).await {
            tracing::error!("gateway stopped: {e}");
        }
    }));
    tracing::info!(%telemetry_addr, %http_addr, "serving");
    Ok(ServerHandle { telemetry_addr, http_addr, hub, tasks })
}

/// Real-time plant stepping at the critical rate.
async fn pump(hub: Arc<Hub>) {
    let mut ticker = interval(TICK);
    ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let per_second = (1.0 / TICK.as_secs_f64()).round() as u64;
    loop {
        ticker.tick().await;
        if let Err(e) = hub.tick(TICK.as_secs_f64(), per_second) {
            tracing::error!("plant stopped: {e}");
            return;
        }
    }
}

/// Periodically roll the surrogate forward from the latest plant history at
/// the current demand and publish where it settles.
async fn twin_loop(hub: Arc<Hub>, model: GruModel, period: Duration, horizon: usize) {
    let model = Arc::new(model);
    let mut fast = FastGru::new(&model);
    let mut ticker = interval(period);
    ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let opts = RolloutOptions { max_steps: horizon, ..Default::default() };
    loop {
        ticker.tick().await;
        let Some((rows, demand, t0)) = hub.twin_inputs(model.dims.t_e) else { continue };
        let m = model.clone();
        let job = tokio::task::spawn_blocking(move || {
            let r = rollout_with(&mut fast, &m, &rows, demand, t0, opts);
            (fast, r)
        });
        let (f, result) = match job.await {
            Ok(v) => v,
            Err(e) => {
                tracing::error!("twin rollout panicked: {e}");
                return;
            }
        };
        fast = f;
        match result {
            Ok(r) => {
                if let Some(last) = r.trajectory.last() {
                    hub.set_twin(last.clone());
                }
            }
            Err(e) => tracing::warn!("twin rollout failed: {e}"),
        }
    }
}
