//! Device/UI <-> server wire protocol.
//!
//! A frame is a 4-byte big-endian body length followed by a UTF-8 JSON
//! body of the form
//!
//! ```text
//! {"type":"RECORD_SAMPLE","session_id":"s1","seq":7,"payload":{...}}
//! ```
//!
//! Bodies are at most [`MAX_FRAME_LEN`] bytes. Payload objects are written
//! with sorted keys, so re-encoding a decoded envelope reproduces the
//! original bytes. Browser clients send the same JSON bodies, one per
//! WebSocket text message, without the length prefix.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::action::{ActionLabel, NUM_ACTIONS};
use crate::session::Mode;

pub const PROTOCOL_VERSION: u32 = 1;
pub const MAX_FRAME_LEN: usize = 4 * 1024 * 1024;
pub const LEN_PREFIX: usize = 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error("frame of {len} bytes exceeds the {MAX_FRAME_LEN}-byte limit")]
    FrameTooLarge { len: usize },
    #[error("malformed json: {0}")]
    MalformedJson(String),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
}

impl ProtocolError {
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::FrameTooLarge { .. } => "FrameTooLarge",
            ProtocolError::MalformedJson(_) => "MalformedJson",
            ProtocolError::UnknownType(_) => "UnknownType",
            ProtocolError::InvalidPayload(_) => "InvalidPayload",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientKind {
    Device,
    Ui,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub client_kind: ClientKind,
    pub protocol_version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionUpdate {
    pub x_mm: f64,
    pub y_mm: f64,
    pub heading_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneChanged {
    pub action_id: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSample {
    /// Label bound when the capture started; `null` means "the zone the
    /// device currently occupies".
    #[serde(default)]
    pub action_id: Option<u8>,
    pub pcm_b64: String,
    pub sample_rate_hz: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordAck {
    pub action_id: u8,
    pub count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainState {
    Started,
    Done,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStatus {
    pub state: TrainState,
    pub duration_ms: u64,
    pub classes: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_msg: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferRequest {
    pub pcm_b64: String,
    pub sample_rate_hz: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferResult {
    #[serde(with = "id_keyed")]
    pub probs: BTreeMap<u8, f64>,
    pub top_action_id: u8,
    pub latency_ms: u64,
}

/// Maps keyed by action id travel as JSON objects with decimal string keys.
mod id_keyed {
    use std::collections::BTreeMap;

    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<u8, f64>, s: S) -> Result<S::Ok, S::Error> {
        map.iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect::<BTreeMap<String, f64>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u8, f64>, D::Error> {
        BTreeMap::<String, f64>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| match k.parse::<u8>() {
                Ok(id) if id.to_string() == k => Ok((id, v)),
                _ => Err(D::Error::custom(format!("bad action id key {k:?}"))),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCommand {
    pub action_id: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatePayload {
    pub mode: Mode,
    pub counts: Vec<u32>,
    pub current_zone: Option<u8>,
    pub has_model: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Empty {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Message {
    Hello(Hello),
    PositionUpdate(PositionUpdate),
    ZoneChanged(ZoneChanged),
    RecordSample(RecordSample),
    RecordAck(RecordAck),
    DeleteLast(Empty),
    ResetAll(Empty),
    TrainRequest(Empty),
    TrainStatus(TrainStatus),
    InferRequest(InferRequest),
    InferResult(InferResult),
    ActionCommand(ActionCommand),
    Error(ErrorPayload),
    ModeButton(Empty),
    SessionState(SessionStatePayload),
}

pub const MESSAGE_TYPES: [&str; 15] = [
    "HELLO",
    "POSITION_UPDATE",
    "ZONE_CHANGED",
    "RECORD_SAMPLE",
    "RECORD_ACK",
    "DELETE_LAST",
    "RESET_ALL",
    "TRAIN_REQUEST",
    "TRAIN_STATUS",
    "INFER_REQUEST",
    "INFER_RESULT",
    "ACTION_COMMAND",
    "ERROR",
    "MODE_BUTTON",
    "SESSION_STATE",
];

fn check_action(id: u8) -> Result<(), ProtocolError> {
    if (id as usize) < NUM_ACTIONS {
        Ok(())
    } else {
        Err(ProtocolError::InvalidPayload(format!("action id {id} out of range")))
    }
}

fn check_finite(name: &str, v: f64) -> Result<(), ProtocolError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(ProtocolError::InvalidPayload(format!("{name} is not finite")))
    }
}

impl Message {
    pub fn type_name(&self) -> &'static str {
        match self {
            Message::Hello(_) => "HELLO",
            Message::PositionUpdate(_) => "POSITION_UPDATE",
            Message::ZoneChanged(_) => "ZONE_CHANGED",
            Message::RecordSample(_) => "RECORD_SAMPLE",
            Message::RecordAck(_) => "RECORD_ACK",
            Message::DeleteLast(_) => "DELETE_LAST",
            Message::ResetAll(_) => "RESET_ALL",
            Message::TrainRequest(_) => "TRAIN_REQUEST",
            Message::TrainStatus(_) => "TRAIN_STATUS",
            Message::InferRequest(_) => "INFER_REQUEST",
            Message::InferResult(_) => "INFER_RESULT",
            Message::ActionCommand(_) => "ACTION_COMMAND",
            Message::Error(_) => "ERROR",
            Message::ModeButton(_) => "MODE_BUTTON",
            Message::SessionState(_) => "SESSION_STATE",
        }
    }

    pub fn error(code: &str, message: impl Into<String>) -> Self {
        Message::Error(ErrorPayload {
            code: code.to_string(),
            message: message.into(),
        })
    }

    /// Value-level checks serde cannot express: action ids in range and
    /// finite reals (JSON has no NaN).
    pub fn validate(&self) -> Result<(), ProtocolError> {
        match self {
            Message::PositionUpdate(p) => {
                check_finite("x_mm", p.x_mm)?;
                check_finite("y_mm", p.y_mm)?;
                check_finite("heading_deg", p.heading_deg)
            }
            Message::ZoneChanged(z) => z.action_id.map_or(Ok(()), check_action),
            Message::RecordSample(r) => r.action_id.map_or(Ok(()), check_action),
            Message::RecordAck(r) => check_action(r.action_id),
            Message::TrainStatus(t) => t.classes.iter().try_for_each(|&c| check_action(c)),
            Message::InferResult(r) => {
                check_action(r.top_action_id)?;
                for (&id, &p) in &r.probs {
                    check_action(id)?;
                    check_finite("probability", p)?;
                }
                Ok(())
            }
            Message::ActionCommand(a) => check_action(a.action_id),
            Message::SessionState(s) => {
                if s.counts.len() != NUM_ACTIONS {
                    return Err(ProtocolError::InvalidPayload("counts must have 6 entries".into()));
                }
                s.current_zone.map_or(Ok(()), check_action)
            }
            _ => Ok(()),
        }
    }
}

pub fn action_of(id: u8) -> ActionLabel {
    ActionLabel::from_id(id).expect("validated action id")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub session_id: String,
    pub seq: u64,
    pub message: Message,
}

impl Envelope {
    pub fn new(session_id: impl Into<String>, seq: u64, message: Message) -> Self {
        Self {
            session_id: session_id.into(),
            seq,
            message,
        }
    }
}

#[derive(Serialize)]
struct WireOut<'a> {
    #[serde(rename = "type")]
    kind: &'a str,
    session_id: &'a str,
    seq: u64,
    payload: Value,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

#[derive(Deserialize)]
struct WireIn {
    #[serde(rename = "type")]
    kind: String,
    session_id: String,
    seq: u64,
    #[serde(default = "empty_object")]
    payload: Value,
}

/// JSON body without the length prefix.
pub fn encode_body(env: &Envelope) -> Result<Vec<u8>, ProtocolError> {
    env.message.validate()?;
    let tagged = serde_json::to_value(&env.message)
        .map_err(|e| ProtocolError::InvalidPayload(e.to_string()))?;
    let payload = match tagged {
        Value::Object(mut m) => m.remove("payload").unwrap_or_else(empty_object),
        _ => unreachable!("adjacently tagged enums serialize to objects"),
    };
    serde_json::to_vec(&WireOut {
        kind: env.message.type_name(),
        session_id: &env.session_id,
        seq: env.seq,
        payload,
    })
    .map_err(|e| ProtocolError::InvalidPayload(e.to_string()))
}

pub fn decode_body(body: &[u8]) -> Result<Envelope, ProtocolError> {
    if body.len() > MAX_FRAME_LEN {
        return Err(ProtocolError::FrameTooLarge { len: body.len() });
    }
    let wire: WireIn =
        serde_json::from_slice(body).map_err(|e| ProtocolError::MalformedJson(e.to_string()))?;
    if !MESSAGE_TYPES.contains(&wire.kind.as_str()) {
        return Err(ProtocolError::UnknownType(wire.kind));
    }
    let mut tagged = serde_json::Map::new();
    tagged.insert("type".into(), Value::String(wire.kind));
    tagged.insert("payload".into(), wire.payload);
    let message: Message = serde_json::from_value(Value::Object(tagged))
        .map_err(|e| ProtocolError::InvalidPayload(e.to_string()))?;
    message.validate()?;
    Ok(Envelope {
        session_id: wire.session_id,
        seq: wire.seq,
        message,
    })
}

/// Length-prefixed frame.
pub fn encode(env: &Envelope) -> Result<Vec<u8>, ProtocolError> {
    let body = encode_body(env)?;
    if body.len() > MAX_FRAME_LEN {
        return Err(ProtocolError::FrameTooLarge { len: body.len() });
    }
    let mut frame = Vec::with_capacity(LEN_PREFIX + body.len());
    frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
    frame.extend_from_slice(&body);
    Ok(frame)
}

/// Decodes exactly one complete frame.
pub fn decode(frame: &[u8]) -> Result<Envelope, ProtocolError> {
    if frame.len() < LEN_PREFIX {
        return Err(ProtocolError::MalformedJson("truncated length prefix".into()));
    }
    let len = u32::from_be_bytes([frame[0], frame[1], frame[2], frame[3]]) as usize;
    if len > MAX_FRAME_LEN {
        return Err(ProtocolError::FrameTooLarge { len });
    }
    let body = &frame[LEN_PREFIX..];
    if body.len() < len {
        return Err(ProtocolError::MalformedJson(format!(
            "truncated frame: {} of {len} body bytes",
            body.len()
        )));
    }
    if body.len() > len {
        return Err(ProtocolError::MalformedJson(format!(
            "{} trailing bytes after frame",
            body.len() - len
        )));
    }
    decode_body(body)
}

/// Incremental splitter for a byte stream of frames. Oversized frames are
/// reported once and their bodies skipped, so the stream stays usable.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    skip: usize,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        let skipped = self.skip.min(bytes.len());
        self.skip -= skipped;
        self.buf.extend_from_slice(&bytes[skipped..]);
    }

    /// Next complete frame body, or `None` when more bytes are needed.
    pub fn next_body(&mut self) -> Option<Result<Vec<u8>, ProtocolError>> {
        if self.skip > 0 || self.buf.len() < LEN_PREFIX {
            return None;
        }
        let len = u32::from_be_bytes([self.buf[0], self.buf[1], self.buf[2], self.buf[3]]) as usize;
        if len > MAX_FRAME_LEN {
            let available = self.buf.len() - LEN_PREFIX;
            let dropped = available.min(len);
            self.buf.drain(..LEN_PREFIX + dropped);
            self.skip = len - dropped;
            return Some(Err(ProtocolError::FrameTooLarge { len }));
        }
        if self.buf.len() < LEN_PREFIX + len {
            return None;
        }
        let body = self.buf[LEN_PREFIX..LEN_PREFIX + len].to_vec();
        self.buf.drain(..LEN_PREFIX + len);
        Some(Ok(body))
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}
