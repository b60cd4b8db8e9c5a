use std::sync::Arc;

use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use soundmat_core::hub::Hub;
use soundmat_core::protocol::{encode_body, Envelope};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, watch};

use crate::tcp::{on_blocking, ChannelOutbox};

pub(crate) async fn run(listener: TcpListener, hub: Arc<Hub>, stopped: watch::Receiver<bool>) {
    let app = Router::new()
        .route("/ws", get(upgrade))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(hub);
    if let Err(e) = axum::serve(listener, app)
        .with_graceful_shutdown(super::until_stopped(stopped))
        .await
    {
        log::error!("websocket listener failed: {e}");
    }
}

async fn upgrade(ws: WebSocketUpgrade, State(hub): State<Arc<Hub>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, hub))
}

async fn connection(socket: WebSocket, hub: Arc<Hub>) {
    let (mut sink, mut stream) = socket.split();
    let (tx, mut rx) = mpsc::unbounded_channel::<Envelope>();
    let mut conn = Some(hub.connect(Arc::new(ChannelOutbox(tx))));

    let write_task = tokio::spawn(async move {
        while let Some(env) = rx.recv().await {
            let Ok(body) = encode_body(&env) else { continue };
            let text = String::from_utf8(body).expect("json is utf-8");
            if sink.send(WsMessage::Text(text.into())).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });

    while let Some(Ok(msg)) = stream.next().await {
        let body = match msg {
            WsMessage::Text(t) => t.as_str().as_bytes().to_vec(),
            WsMessage::Binary(b) => b.to_vec(),
            WsMessage::Close(_) => break,
            WsMessage::Ping(_) | WsMessage::Pong(_) => continue,
        };
        let c = conn.take().expect("connection present between messages");
        match on_blocking(&hub, c, body).await {
            Some(c) => conn = Some(c),
            None => break,
        }
    }
    if let Some(c) = conn {
        hub.disconnect(c);
    }
    let _ = write_task.await;
}
