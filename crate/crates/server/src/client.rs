use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::{Duration, Instant};

use soundmat_core::device::{Link, LinkError};
use soundmat_core::protocol::{decode_body, encode, ClientKind, Envelope, FrameDecoder, Hello, Message, PROTOCOL_VERSION};

/// A blocking framed-TCP [`Link`], as a device would hold.
pub struct TcpLink {
    stream: TcpStream,
    decoder: FrameDecoder,
    session_id: String,
    seq: u64,
}

fn lost(e: impl std::fmt::Display) -> LinkError {
    LinkError::Disconnected(e.to_string())
}

impl TcpLink {
    /// Connects and sends HELLO. The server's SESSION_STATE reply is left
    /// for the caller.
    pub fn connect(addr: SocketAddr, session_id: &str, kind: ClientKind) -> Result<Self, LinkError> {
        let stream = TcpStream::connect_timeout(&addr, Duration::from_secs(5)).map_err(lost)?;
        stream.set_nodelay(true).map_err(lost)?;
        let mut link = Self {
            stream,
            decoder: FrameDecoder::new(),
            session_id: session_id.to_string(),
            seq: 0,
        };
        link.send(Message::Hello(Hello {
            client_kind: kind,
            protocol_version: PROTOCOL_VERSION,
        }))?;
        Ok(link)
    }

    /// Writes raw bytes, for exercising the server with bad input.
    pub fn send_bytes(&mut self, bytes: &[u8]) -> Result<(), LinkError> {
        self.stream.write_all(bytes).map_err(lost)
    }

    pub fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }
}

impl Link for TcpLink {
    fn send(&mut self, message: Message) -> Result<(), LinkError> {
        let seq = self.next_seq();
        let frame = encode(&Envelope::new(self.session_id.clone(), seq, message))
            .map_err(|e| LinkError::Disconnected(format!("cannot encode: {e}")))?;
        self.send_bytes(&frame)
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Envelope>, LinkError> {
        let deadline = Instant::now() + timeout;
        let mut buf = [0u8; 16 * 1024];
        loop {
            if let Some(next) = self.decoder.next_body() {
                let body = next.map_err(lost)?;
                return decode_body(&body).map(Some).map_err(lost);
            }
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                return Ok(None);
            }
            self.stream.set_read_timeout(Some(remaining)).map_err(lost)?;
            match self.stream.read(&mut buf) {
                Ok(0) => return Err(lost("server closed the connection")),
                Ok(n) => self.decoder.push(&buf[..n]),
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => return Ok(None),
                Err(e) => return Err(lost(e)),
            }
        }
    }
}
