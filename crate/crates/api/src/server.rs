//! Building the service from config and running it.

use std::net::SocketAddr;
use std::sync::Arc;

use tenet_core::clock::{SharedClock, SystemClock};
use tenet_core::mockidp::Persona;
use tenet_core::store::{Store, StoreOptions};
use tenet_core::{Tenet, TenetConfig};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::config::ServerConfig;

#[derive(Clone)]
pub struct AppState {
    pub tenet: Arc<Tenet>,
    pub http: reqwest::Client,
}

#[derive(Debug, thiserror::Error)]
pub enum StartError {
    #[error("cannot bind port {port}: {source}")]
    Bind { port: u16, source: std::io::Error },
    #[error("cannot open data directory: {0}")]
    Store(tenet_core::Error),
    #[error("cannot load persona script {path}: {why}")]
    Personas { path: String, why: String },
    #[error("{0}")]
    Http(String),
}

/// A running server. Dropping it leaves the server running; call
/// [`Handle::shutdown`] to stop it.
pub struct Handle {
    pub addr: SocketAddr,
    pub tenet: Arc<Tenet>,
    shutdown: oneshot::Sender<()>,
    task: JoinHandle<std::io::Result<()>>,
}

impl Handle {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(self) -> std::io::Result<()> {
        let _ = self.shutdown.send(());
        self.task.await.unwrap_or(Ok(()))
    }

    /// Runs until the server stops on its own.
    pub async fn wait(self) -> std::io::Result<()> {
        let _keep = self.shutdown;
        self.task.await.unwrap_or(Ok(()))
    }
}

fn personas(config: &ServerConfig) -> Result<Vec<Persona>, StartError> {
    let Some(path) = &config.mock_idp_personas else {
        return Ok(Persona::defaults());
    };
    let err = |why: String| StartError::Personas { path: path.display().to_string(), why };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    Persona::load(&text).map_err(|e| err(e.message))
}

pub async fn start(config: ServerConfig) -> Result<Handle, StartError> {
    start_with_clock(config, Arc::new(SystemClock::new())).await
}

/// Binds first so the broker callback URL can name the real port.
pub async fn start_with_clock(config: ServerConfig, clock: SharedClock) -> Result<Handle, StartError> {
    let listener = TcpListener::bind(("127.0.0.1", config.listen_port))
        .await
        .map_err(|source| StartError::Bind { port: config.listen_port, source })?;
    let addr = listener
        .local_addr()
        .map_err(|source| StartError::Bind { port: config.listen_port, source })?;

    let store = match &config.data_dir {
        Some(dir) => Store::open(dir, StoreOptions::default()).map_err(StartError::Store)?,
        None => {
            tracing::warn!("no data_dir configured; state is kept in memory only");
            Store::in_memory()
        }
    };
    let tenet = Tenet::with_clock(
        store,
        TenetConfig {
            signing_key: config.signing_key,
            master_key: config.master_key,
            operator_key: config.operator_key.clone(),
            callback_url: format!("http://127.0.0.1:{}/oauth2/callback", addr.port()),
            personas: personas(&config)?,
        },
        clock,
    );
    let http = reqwest::Client::builder()
        .redirect(reqwest::redirect::Policy::none())
        .timeout(std::time::Duration::from_secs(10))
        .build()
        .map_err(|e| StartError::Http(e.to_string()))?;
    let app = crate::routes::router(AppState { tenet: tenet.clone(), http });

    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    tracing::info!(%addr, "listening");
    Ok(Handle { addr, tenet, shutdown: tx, task })
}
