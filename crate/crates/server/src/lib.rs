//! Network front end for [`soundmat_core::hub::Hub`].
//!
//! Two transports share one hub: length-prefixed JSON frames over TCP for
//! devices, and a WebSocket route (`/ws`, one JSON envelope per text
//! frame) for browsers.

mod client;
mod tcp;
mod ws;

use std::net::SocketAddr;
use std::sync::Arc;

use soundmat_core::hub::{Hub, HubConfig};
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;

pub use client::TcpLink;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    /// Address for the WebSocket listener; `None` disables it.
    pub ws_bind: Option<SocketAddr>,
    pub hub: HubConfig,
}

impl ServerConfig {
    /// Both listeners on ephemeral localhost ports.
    pub fn local() -> Self {
        let any: SocketAddr = ([127, 0, 0, 1], 0).into();
        Self {
            bind: any,
            ws_bind: Some(any),
            hub: HubConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("cannot bind {addr}: {source}")]
    BindFailed {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("invalid feature configuration: {0}")]
    Config(#[from] soundmat_core::features::FeatureError),
}

/// A running server. Dropping it does not stop it; call
/// [`shutdown`](Self::shutdown).
pub struct ServerHandle {
    pub tcp_addr: SocketAddr,
    pub ws_addr: Option<SocketAddr>,
    pub hub: Arc<Hub>,
    stop: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        for t in self.tasks {
            let _ = t.await;
        }
    }

    /// Resolves when the server stops on its own (it normally does not).
    pub async fn wait(self) {
        for t in self.tasks {
            let _ = t.await;
        }
    }
}

async fn bind(addr: SocketAddr) -> Result<TcpListener, ServerError> {
    TcpListener::bind(addr)
        .await
        .map_err(|source| ServerError::BindFailed { addr, source })
}

/// Binds the listeners and starts serving on the current runtime.
pub async fn serve(config: ServerConfig) -> Result<ServerHandle, ServerError> {
    let hub = Hub::new(config.hub.clone())?;
    serve_hub(hub, config.bind, config.ws_bind).await
}

pub async fn serve_hub(hub: Arc<Hub>, bind_addr: SocketAddr, ws_bind: Option<SocketAddr>) -> Result<ServerHandle, ServerError> {
    let (stop, stopped) = watch::channel(false);
    let tcp = bind(bind_addr).await?;
    let tcp_addr = tcp.local_addr().map_err(|source| ServerError::BindFailed { addr: bind_addr, source })?;
    let mut tasks = vec![tokio::spawn(tcp::accept_loop(tcp, hub.clone(), stopped.clone()))];
    let mut ws_addr = None;
    if let Some(addr) = ws_bind {
        let listener = bind(addr).await?;
        ws_addr = Some(listener.local_addr().map_err(|source| ServerError::BindFailed { addr, source })?);
        tasks.push(tokio::spawn(ws::run(listener, hub.clone(), stopped)));
    }
    log::info!("serving frames on {tcp_addr}, websocket on {ws_addr:?}");
    Ok(ServerHandle {
        tcp_addr,
        ws_addr,
        hub,
        stop,
        tasks,
    })
}

async fn until_stopped(mut stopped: watch::Receiver<bool>) {
    while !*stopped.borrow() {
        if stopped.changed().await.is_err() {
            // Sender dropped without a stop request: keep running.
            std::future::pending::<()>().await;
        }
    }
}
