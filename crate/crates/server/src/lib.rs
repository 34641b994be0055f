// SPDX-License-Identifier: Apache-2.0

//! HTTP front end for the dbnet kernel.
//!
//! Every request under `/v1` goes to [`Service::handle`] on a blocking
//! thread; routing, access control and error mapping live there.

pub mod fleet;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, Method, StatusCode, Uri};
use axum::response::IntoResponse;
use axum::Router;
use dbnet_core::api::{Response, Service};
use dbnet_core::proxy::{DeviceClient, SimFleet, DEFAULT_PROVISIONING_DELAY};
use dbnet_core::{Error, Kernel};
use tokio::sync::oneshot;

pub use fleet::{fleet_router, HttpFleet};

pub const DEFAULT_ADDR: &str = "127.0.0.1:8484";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FleetMode {
    InProc,
    Http,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub addr: SocketAddr,
    pub journal: Option<PathBuf>,
    pub fleet_mode: FleetMode,
    pub provisioning_delay: Duration,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            addr: DEFAULT_ADDR.parse().expect("valid default address"),
            journal: None,
            fleet_mode: FleetMode::InProc,
            provisioning_delay: DEFAULT_PROVISIONING_DELAY,
        }
    }
}

impl Config {
    /// Reads `DBNET_ADDR`, `DBNET_JOURNAL` and `DBNET_FLEET_MODE`.
    pub fn from_env() -> std::result::Result<Config, String> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> std::result::Result<Config, String> {
        let mut c = Config::default();
        if let Some(a) = get("DBNET_ADDR") {
            c.addr = a.parse().map_err(|e| format!("DBNET_ADDR {a:?}: {e}"))?;
        }
        c.journal = get("DBNET_JOURNAL").filter(|p| !p.is_empty()).map(PathBuf::from);
        c.fleet_mode = match get("DBNET_FLEET_MODE").as_deref() {
            None | Some("inproc") => FleetMode::InProc,
            Some("http") => FleetMode::Http,
            Some(other) => return Err(format!("DBNET_FLEET_MODE must be inproc or http, got {other:?}")),
        };
        Ok(c)
    }
}

fn to_http(r: Response) -> axum::response::Response {
    let status = StatusCode::from_u16(r.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, [(header::CONTENT_TYPE, r.content_type())], r.body_string()).into_response()
}

async fn dispatch(
    State(svc): State<Arc<Service>>,
    method: Method,
    uri: Uri,
    headers: HeaderMap,
    body: Bytes,
) -> axum::response::Response {
    let query = match Query::<Vec<(String, String)>>::try_from_uri(&uri) {
        Ok(Query(q)) => q,
        Err(e) => return to_http(Response::error(&Error::Malformed(e.to_string()), 0)),
    };
    let auth = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .map(str::to_owned);
    let path = uri.path().to_owned();
    let joined =
        tokio::task::spawn_blocking(move || svc.handle(method.as_str(), &path, &query, auth.as_deref(), &body)).await;
    match joined {
        Ok(r) => to_http(r),
        Err(e) => to_http(Response::error(&Error::Internal(e.to_string()), 0)),
    }
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new().fallback(dispatch).with_state(service)
}

/// A server running on its own thread and runtime. Dropping it shuts the
/// server down.
pub struct Running {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl Running {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for Running {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` (port 0 picks a free one) and serves `app` in the background.
pub fn spawn(app: Router, addr: SocketAddr) -> std::io::Result<Running> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind(addr))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        rt.block_on(async move {
            let graceful = async {
                let _ = rx.await;
            };
            if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(graceful).await {
                tracing::error!(error = %e, "server stopped");
            }
        });
    });
    Ok(Running {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

/// Kernel plus whatever it needs kept alive (the loopback fleet server).
pub struct Backend {
    pub kernel: Arc<Kernel>,
    pub fleet: Arc<SimFleet>,
    pub fleet_server: Option<Running>,
}

/// Builds and initializes a kernel per `config`, replaying the journal if
/// one is configured.
pub fn backend(config: &Config) -> dbnet_core::Result<Backend> {
    let fleet = Arc::new(SimFleet::new(config.provisioning_delay));
    let (devices, fleet_server): (Arc<dyn DeviceClient>, _) = match config.fleet_mode {
        FleetMode::InProc => (fleet.clone(), None),
        FleetMode::Http => {
            let running = spawn(fleet_router(fleet.clone()), ([127, 0, 0, 1], 0).into())
                .map_err(|e| Error::Internal(format!("fleet server: {e}")))?;
            (Arc::new(HttpFleet::new(&running.base_url())), Some(running))
        }
    };
    let kernel = match &config.journal {
        Some(path) => Kernel::open(devices, path)?,
        None => Kernel::new(devices),
    };
    kernel.init_provenance()?;
    Ok(Backend {
        kernel: Arc::new(kernel),
        fleet,
        fleet_server,
    })
}

/// Runs the server until ctrl-c.
pub async fn serve(config: Config) -> dbnet_core::Result<()> {
    let cfg = config.clone();
    let backend = tokio::task::spawn_blocking(move || backend(&cfg))
        .await
        .map_err(|e| Error::Internal(e.to_string()))??;
    let _worker = backend.kernel.spawn_outbox_worker();
    let service = Arc::new(Service::new(backend.kernel.clone()));
    let listener = tokio::net::TcpListener::bind(config.addr)
        .await
        .map_err(|e| Error::Internal(format!("bind {}: {e}", config.addr)))?;
    tracing::info!(addr = %config.addr, fleet = ?config.fleet_mode, journal = ?config.journal, "listening");
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::Internal(e.to_string()))?;
    drop(backend.fleet_server);
    Ok(())
}
