use std::sync::Arc;

use soundmat_core::hub::{Connection, Hub, Outbox};
use soundmat_core::protocol::{encode, Envelope, FrameDecoder};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch};

pub(crate) struct ChannelOutbox(pub mpsc::UnboundedSender<Envelope>);

impl Outbox for ChannelOutbox {
    fn deliver(&self, env: Envelope) -> bool {
        self.0.send(env).is_ok()
    }
}

/// Runs one hub call off the async workers; hub calls may extract features
/// or wait on a session lock.
pub(crate) async fn on_blocking(hub: &Arc<Hub>, mut conn: Connection, body: Vec<u8>) -> Option<Connection> {
    let hub = hub.clone();
    tokio::task::spawn_blocking(move || {
        hub.handle_frame_body(&mut conn, &body);
        conn
    })
    .await
    .map_err(|e| log::error!("message handler panicked: {e}"))
    .ok()
}

pub(crate) async fn accept_loop(listener: TcpListener, hub: Arc<Hub>, stopped: watch::Receiver<bool>) {
    let stop = super::until_stopped(stopped.clone());
    tokio::pin!(stop);
    loop {
        tokio::select! {
            _ = &mut stop => break,
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    log::debug!("connection from {peer}");
                    tokio::spawn(connection(stream, hub.clone(), stopped.clone()));
                }
                Err(e) => log::warn!("accept failed: {e}"),
            },
        }
    }
}

async fn connection(stream: TcpStream, hub: Arc<Hub>, stopped: watch::Receiver<bool>) {
    let _ = stream.set_nodelay(true);
    let (mut reader, mut writer) = stream.into_split();
    let (tx, mut rx) = mpsc::unbounded_channel::<Envelope>();
    let mut conn = Some(hub.connect(Arc::new(ChannelOutbox(tx))));

    let write_task = tokio::spawn(async move {
        while let Some(env) = rx.recv().await {
            match encode(&env) {
                Ok(frame) => {
                    if writer.write_all(&frame).await.is_err() {
                        break;
                    }
                }
                Err(e) => log::error!("dropping unencodable {}: {e}", env.message.type_name()),
            }
        }
        let _ = writer.shutdown().await;
    });

    let stop = super::until_stopped(stopped);
    tokio::pin!(stop);
    let mut decoder = FrameDecoder::new();
    let mut buf = vec![0u8; 64 * 1024];
    'read: loop {
        let n = tokio::select! {
            _ = &mut stop => break,
            r = reader.read(&mut buf) => match r {
                Ok(0) | Err(_) => break,
                Ok(n) => n,
            },
        };
        decoder.push(&buf[..n]);
        while let Some(next) = decoder.next_body() {
            let c = conn.take().expect("connection present between messages");
            match next {
                Ok(body) => match on_blocking(&hub, c, body).await {
                    Some(c) => conn = Some(c),
                    None => break 'read,
                },
                Err(e) => {
                    c.send_error(e.code(), e.to_string());
                    conn = Some(c);
                }
            }
        }
    }
    if let Some(c) = conn {
        hub.disconnect(c);
    }
    // Disconnecting dropped the hub's handle on the outbox; the writer
    // drains what is queued and exits.
    let _ = write_task.await;
}
