//! HTTP and websocket endpoints.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use hitl_core::InterventionModel;
use tokio::sync::{broadcast, oneshot};

use crate::protocol::{decode_command, ProtocolError, PROTOCOL_VERSION};
use crate::session::{Applied, LiveIntervenor, Session};

pub const DEFAULT_TICK_HZ: f64 = 8.0;

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot start the async runtime: {0}")]
    Runtime(#[source] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub tick_hz: f64,
    /// Drives the advisory flag in frames; never takes control itself.
    pub monitor: InterventionModel,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            tick_hz: DEFAULT_TICK_HZ,
            monitor: InterventionModel::default(),
        }
    }
}

/// A running gateway: an async runtime serving `/ws` and `/health`, plus the
/// session the deployment loop talks to through [`LiveIntervenor`].
pub struct Gateway {
    addr: SocketAddr,
    session: Arc<Session>,
    shutdown: Option<oneshot::Sender<()>>,
    runtime: Option<tokio::runtime::Runtime>,
}

pub fn router(session: Arc<Session>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/ws", get(ws_upgrade))
        .with_state(session)
}

async fn health() -> impl IntoResponse {
    Json(serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "protocol": PROTOCOL_VERSION,
    }))
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(session): State<Arc<Session>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client_loop(socket, session))
}

async fn client_loop(socket: WebSocket, session: Arc<Session>) {
    let (id, mut frames) = session.connect();
    log::info!("client {id} connected");
    let (mut tx, mut rx) = socket.split();
    let close_reason: Option<ProtocolError> = loop {
        tokio::select! {
            frame = frames.recv() => match frame {
                Ok(text) => {
                    if tx.send(Message::Text(text.into())).await.is_err() {
                        break None;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => log::warn!("client {id} skipped {n} frames"),
                Err(broadcast::error::RecvError::Closed) => break None,
            },
            msg = rx.next() => match msg {
                Some(Ok(Message::Text(text))) => match decode_command(text.as_bytes()) {
                    Ok(cmd) => match session.apply(id, cmd) {
                        Applied::Yes => log::debug!("client {id}: {}", cmd.kind()),
                        other => log::info!("client {id}: {} ignored ({other:?})", cmd.kind()),
                    },
                    Err(e) => break Some(e),
                },
                Some(Ok(Message::Binary(_))) => break Some(ProtocolError::Binary),
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break None,
                Some(Ok(_)) => {}
            },
        }
    };
    if let Some(e) = close_reason {
        log::warn!("client {id}: protocol error: {e}");
        let close = CloseFrame {
            code: e.close_code(),
            reason: e.to_string().into(),
        };
        let _ = tx.send(Message::Close(Some(close))).await;
    }
    session.disconnect(id);
    log::info!("client {id} disconnected");
}

impl Gateway {
    /// Binds `addr` and starts serving on a private runtime.
    pub fn start(addr: SocketAddr, config: GatewayConfig) -> Result<Self, GatewayError> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(1)
            .enable_all()
            .build()
            .map_err(GatewayError::Runtime)?;
        let listener = runtime
            .block_on(tokio::net::TcpListener::bind(addr))
            .map_err(|source| GatewayError::Bind { addr, source })?;
        let addr = listener
            .local_addr()
            .map_err(|source| GatewayError::Bind { addr, source })?;
        let session = Session::new(config.tick_hz, config.monitor);
        let app = router(session.clone());
        let (shutdown, signal) = oneshot::channel::<()>();
        runtime.spawn(async move {
            let serve = axum::serve(listener, app).with_graceful_shutdown(async {
                let _ = signal.await;
            });
            if let Err(e) = serve.await {
                log::error!("gateway stopped: {e}");
            }
        });
        log::info!("gateway listening on {addr}");
        Ok(Gateway {
            addr,
            session,
            shutdown: Some(shutdown),
            runtime: Some(runtime),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn session(&self) -> &Arc<Session> {
        &self.session
    }

    pub fn intervenor(&self) -> LiveIntervenor {
        LiveIntervenor::new(self.session.clone())
    }

    pub fn wait_for_client(&self, timeout: Duration) -> bool {
        self.session.wait_for_client(timeout)
    }

    /// Closes the session on Ctrl-C, which makes a running loop return an
    /// error at its next tick instead of killing the process mid-episode.
    pub fn close_on_interrupt(&self) {
        let session = self.session.clone();
        if let Some(rt) = &self.runtime {
            rt.spawn(async move {
                if tokio::signal::ctrl_c().await.is_ok() {
                    log::warn!("interrupted; closing the session");
                    session.close();
                }
            });
        }
    }

    /// Stops accepting connections and unblocks a paused loop.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.session.close();
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(rt) = self.runtime.take() {
            rt.shutdown_timeout(Duration::from_secs(1));
        }
    }
}

impl Drop for Gateway {
    fn drop(&mut self) {
        self.stop();
    }
}
