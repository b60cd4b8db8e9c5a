//! Message handling for the server: sessions keyed by id, connections
//! attached to them, and the dispatch from protocol messages to session
//! operations.
//!
//! Transport-agnostic. A transport calls [`Hub::connect`] with an
//! [`Outbox`] per connection, feeds it incoming frames, and writes out
//! whatever the outbox receives. All work on one session happens under
//! that session's lock; training runs on its own thread and publishes its
//! result back under the same lock.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::action::{ActionLabel, NUM_ACTIONS};
use crate::audio::{clip_from_samples, decode_pcm_b64, AudioClip};
use crate::device::{Link, LinkError};
use crate::features::{FeatureConfig, FeatureError, FeatureExtractor, LogMelExtractor};
use crate::forest::ForestConfig;
use crate::mat::{DevicePose, MatLayout};
use crate::protocol::{
    decode_body, ActionCommand, ClientKind, Envelope, InferResult, Message, RecordAck,
    SessionStatePayload, TrainState, TrainStatus, ZoneChanged, PROTOCOL_VERSION,
};
use crate::session::{ModeButtonOutcome, Session, SessionError, SessionSnapshot, SnapshotError, TrainingJob};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HubConfig {
    pub features: FeatureConfig,
    pub forest: ForestConfig,
    pub layout: MatLayout,
    /// Seed given to every new session.
    pub seed: u64,
}

impl Default for HubConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            forest: ForestConfig::default(),
            layout: MatLayout::canonical(),
            seed: 42,
        }
    }
}

/// Where a connection's outgoing envelopes go. Returns false once the
/// peer is gone.
pub trait Outbox: Send + Sync {
    fn deliver(&self, env: Envelope) -> bool;
}

impl Outbox for mpsc::Sender<Envelope> {
    fn deliver(&self, env: Envelope) -> bool {
        self.send(env).is_ok()
    }
}

/// Assigns the server's outgoing seq numbers for one connection.
struct Port {
    next_seq: u64,
    outbox: Arc<dyn Outbox>,
}

impl Port {
    fn send(&mut self, session_id: &str, message: Message) -> bool {
        self.next_seq += 1;
        self.outbox.deliver(Envelope::new(session_id, self.next_seq, message))
    }
}

type PortRef = Arc<Mutex<Port>>;

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

struct Attachment {
    conn_id: u64,
    kind: ClientKind,
    port: PortRef,
}

struct SessionSlot {
    session: Session,
    attachments: Vec<Attachment>,
}

struct SessionHandle {
    id: String,
    slot: Mutex<SessionSlot>,
}

impl SessionSlot {
    fn broadcast(&self, session_id: &str, message: Message) {
        for a in &self.attachments {
            lock(&a.port).send(session_id, message.clone());
        }
    }

    fn to_devices(&self, session_id: &str, message: Message) {
        for a in self.attachments.iter().filter(|a| a.kind == ClientKind::Device) {
            lock(&a.port).send(session_id, message.clone());
        }
    }

    fn state_message(&self) -> Message {
        let s = &self.session;
        Message::SessionState(SessionStatePayload {
            mode: s.mode(),
            counts: s.counts().iter().map(|&c| c as u32).collect(),
            current_zone: s.current_zone().map(ActionLabel::id),
            has_model: s.model().is_some(),
        })
    }
}

enum ConnState {
    AwaitingHello,
    Attached {
        session: Arc<SessionHandle>,
        kind: ClientKind,
    },
}

/// One client's view of the hub.
pub struct Connection {
    id: u64,
    port: PortRef,
    state: ConnState,
    last_seq: Option<u64>,
}

impl Connection {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn session_id(&self) -> Option<&str> {
        match &self.state {
            ConnState::Attached { session, .. } => Some(&session.id),
            ConnState::AwaitingHello => None,
        }
    }

    pub fn client_kind(&self) -> Option<ClientKind> {
        match &self.state {
            ConnState::Attached { kind, .. } => Some(*kind),
            ConnState::AwaitingHello => None,
        }
    }

    fn reply(&self, message: Message) {
        let sid = self.session_id().unwrap_or("").to_string();
        lock(&self.port).send(&sid, message);
    }

    /// Sends an ERROR to this connection only. Transports use it for
    /// failures the hub never sees, such as oversized frames.
    pub fn send_error(&self, code: &str, message: impl Into<String>) {
        self.reply(Message::error(code, message));
    }
}

pub struct Hub {
    config: HubConfig,
    extractor: Arc<dyn FeatureExtractor>,
    sessions: Mutex<HashMap<String, Arc<SessionHandle>>>,
    next_conn: AtomicU64,
}

impl std::fmt::Debug for Hub {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Hub").field("config", &self.config).finish_non_exhaustive()
    }
}

fn session_error_msg(e: &SessionError) -> String {
    format!("{}: {e}", e.code())
}

impl Hub {
    pub fn new(config: HubConfig) -> Result<Arc<Self>, FeatureError> {
        let extractor = Arc::new(LogMelExtractor::new(
            config.features.clone(),
            crate::audio::CANONICAL_RATE_HZ,
        )?);
        Ok(Self::with_extractor(config, extractor))
    }

    pub fn with_extractor(config: HubConfig, extractor: Arc<dyn FeatureExtractor>) -> Arc<Self> {
        Arc::new(Self {
            config,
            extractor,
            sessions: Mutex::new(HashMap::new()),
            next_conn: AtomicU64::new(1),
        })
    }

    pub fn config(&self) -> &HubConfig {
        &self.config
    }

    pub fn connect(&self, outbox: Arc<dyn Outbox>) -> Connection {
        Connection {
            id: self.next_conn.fetch_add(1, Ordering::Relaxed),
            port: Arc::new(Mutex::new(Port { next_seq: 0, outbox })),
            state: ConnState::AwaitingHello,
            last_seq: None,
        }
    }

    pub fn disconnect(&self, conn: Connection) {
        if let ConnState::Attached { session, .. } = &conn.state {
            lock(&session.slot).attachments.retain(|a| a.conn_id != conn.id);
        }
    }

    fn session_handle(&self, id: &str) -> Arc<SessionHandle> {
        lock(&self.sessions)
            .entry(id.to_string())
            .or_insert_with(|| {
                Arc::new(SessionHandle {
                    id: id.to_string(),
                    slot: Mutex::new(SessionSlot {
                        session: Session::new(self.extractor.clone(), self.config.forest.clone(), self.config.seed),
                        attachments: Vec::new(),
                    }),
                })
            })
            .clone()
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = lock(&self.sessions).keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn snapshot(&self, session_id: &str) -> Option<SessionSnapshot> {
        let handle = lock(&self.sessions).get(session_id).cloned()?;
        let slot = lock(&handle.slot);
        Some(slot.session.snapshot())
    }

    /// Replaces (or creates) a session from a snapshot, keeping attachments.
    pub fn restore(&self, session_id: &str, snapshot: SessionSnapshot) -> Result<(), SnapshotError> {
        let session = Session::from_snapshot(snapshot, self.extractor.clone())?;
        let handle = self.session_handle(session_id);
        let mut slot = lock(&handle.slot);
        slot.session = session;
        let msg = slot.state_message();
        slot.broadcast(&handle.id, msg);
        Ok(())
    }

    /// Decodes one frame body and handles it; decode failures are answered
    /// with an ERROR and leave all state untouched.
    pub fn handle_frame_body(&self, conn: &mut Connection, body: &[u8]) {
        match decode_body(body) {
            Ok(env) => self.handle_message(conn, env),
            Err(e) => conn.send_error(e.code(), e.to_string()),
        }
    }

    /// Handles one envelope. Replies and broadcasts go out through the
    /// outboxes before this returns, except training results, which follow
    /// when training finishes.
    pub fn handle_message(&self, conn: &mut Connection, env: Envelope) {
        let entered = Instant::now();
        if let Some(last) = conn.last_seq {
            if env.seq <= last {
                conn.send_error("SeqNotIncreasing", format!("seq {} after {last}", env.seq));
                return;
            }
        }
        let session = match (&conn.state, &env.message) {
            (ConnState::AwaitingHello, Message::Hello(h)) => {
                if h.protocol_version != PROTOCOL_VERSION {
                    conn.send_error(
                        "UnsupportedVersion",
                        format!("protocol version {} (server speaks {PROTOCOL_VERSION})", h.protocol_version),
                    );
                    return;
                }
                if env.session_id.is_empty() {
                    conn.send_error("InvalidPayload", "session_id must not be empty");
                    return;
                }
                conn.last_seq = Some(env.seq);
                let handle = self.session_handle(&env.session_id);
                let mut slot = lock(&handle.slot);
                slot.attachments.push(Attachment {
                    conn_id: conn.id,
                    kind: h.client_kind,
                    port: conn.port.clone(),
                });
                let state = slot.state_message();
                drop(slot);
                conn.state = ConnState::Attached {
                    session: handle,
                    kind: h.client_kind,
                };
                conn.reply(state);
                return;
            }
            (ConnState::AwaitingHello, _) => {
                conn.send_error("HelloRequired", "send HELLO first");
                return;
            }
            (ConnState::Attached { .. }, Message::Hello(_)) => {
                conn.send_error("AlreadyAttached", "HELLO already completed");
                return;
            }
            (ConnState::Attached { session, .. }, _) => {
                if env.session_id != session.id {
                    conn.send_error(
                        "SessionMismatch",
                        format!("connection is attached to {:?}", session.id),
                    );
                    return;
                }
                session.clone()
            }
        };
        conn.last_seq = Some(env.seq);
        self.dispatch(conn, &session, env.message, entered);
    }

    fn decode_clip(conn: &Connection, pcm_b64: &str, rate: u32) -> Option<AudioClip> {
        match decode_pcm_b64(pcm_b64).and_then(|s| clip_from_samples(&s, rate)) {
            Ok(clip) => Some(clip),
            Err(e) => {
                conn.send_error("BadAudio", e.to_string());
                None
            }
        }
    }

    fn dispatch(&self, conn: &Connection, handle: &Arc<SessionHandle>, message: Message, entered: Instant) {
        let sid = handle.id.as_str();
        let mut slot = lock(&handle.slot);
        match message {
            Message::PositionUpdate(p) => {
                let pose = DevicePose::new(p.x_mm, p.y_mm, p.heading_deg);
                let zone = self.config.layout.zone_at(&pose);
                if slot.session.set_zone(zone) {
                    slot.broadcast(
                        sid,
                        Message::ZoneChanged(ZoneChanged {
                            action_id: zone.map(ActionLabel::id),
                        }),
                    );
                }
            }
            Message::RecordSample(r) => {
                // Mode and zone are checked before the audio is touched.
                let label = match r.action_id {
                    Some(id) => ActionLabel::from_id(id),
                    None => slot.session.current_zone(),
                };
                let guard = if slot.session.mode() != crate::session::Mode::Training {
                    Err(SessionError::NotInTrainingMode)
                } else {
                    label.ok_or(SessionError::NoZoneSelected)
                };
                let label = match guard {
                    Ok(l) => l,
                    Err(e) => return conn.send_error(e.code(), e.to_string()),
                };
                let Some(clip) = Self::decode_clip(conn, &r.pcm_b64, r.sample_rate_hz) else {
                    return;
                };
                match slot.session.record_sample_as(label, &clip) {
                    Ok(count) => slot.broadcast(
                        sid,
                        Message::RecordAck(RecordAck {
                            action_id: label.id(),
                            count: count as u32,
                        }),
                    ),
                    Err(e) => conn.send_error(e.code(), e.to_string()),
                }
            }
            Message::DeleteLast(_) => match slot.session.delete_last() {
                Ok(_) => {
                    let m = slot.state_message();
                    slot.broadcast(sid, m);
                }
                Err(e) => conn.send_error(e.code(), e.to_string()),
            },
            Message::ResetAll(_) => match slot.session.reset_all() {
                Ok(()) => {
                    let m = slot.state_message();
                    slot.broadcast(sid, m);
                }
                Err(e) => conn.send_error(e.code(), e.to_string()),
            },
            Message::TrainRequest(_) => {
                let begun = slot.session.begin_training();
                self.start_job(conn, handle, slot, begun);
            }
            Message::ModeButton(_) => match slot.session.press_mode_button() {
                Ok(ModeButtonOutcome::ReturnedToTraining) => {
                    let m = slot.state_message();
                    slot.broadcast(sid, m);
                }
                Ok(ModeButtonOutcome::TrainingStarted(job)) => self.start_job(conn, handle, slot, Ok(job)),
                Ok(ModeButtonOutcome::Ignored) => conn.reply(slot.state_message()),
                Err(e) => self.start_job(conn, handle, slot, Err(e)),
            },
            Message::InferRequest(r) => {
                if slot.session.mode() != crate::session::Mode::Inference {
                    let e = SessionError::NotInInferenceMode;
                    return conn.send_error(e.code(), e.to_string());
                }
                let Some(clip) = Self::decode_clip(conn, &r.pcm_b64, r.sample_rate_hz) else {
                    return;
                };
                match slot.session.infer(&clip) {
                    Ok(result) => {
                        let probs = result.probabilities.iter().map(|(a, p)| (a.id(), p)).collect();
                        slot.broadcast(
                            sid,
                            Message::InferResult(InferResult {
                                probs,
                                top_action_id: result.top.id(),
                                latency_ms: entered.elapsed().as_millis() as u64,
                            }),
                        );
                        slot.to_devices(
                            sid,
                            Message::ActionCommand(ActionCommand {
                                action_id: result.top.id(),
                            }),
                        );
                    }
                    Err(e) => conn.send_error(e.code(), e.to_string()),
                }
            }
            Message::Hello(_) => unreachable!("handled before dispatch"),
            other => conn.send_error(
                "UnexpectedMessage",
                format!("{} is sent by the server, not to it", other.type_name()),
            ),
        }
    }

    fn start_job(
        &self,
        conn: &Connection,
        handle: &Arc<SessionHandle>,
        slot: MutexGuard<'_, SessionSlot>,
        begun: Result<TrainingJob, SessionError>,
    ) {
        let job = match begun {
            Ok(job) => job,
            Err(e) => {
                drop(slot);
                return conn.reply(Message::TrainStatus(TrainStatus {
                    state: TrainState::Error,
                    duration_ms: 0,
                    classes: Vec::new(),
                    error_msg: Some(session_error_msg(&e)),
                }));
            }
        };
        let classes: Vec<u8> = job.classes().into_iter().map(ActionLabel::id).collect();
        slot.broadcast(
            &handle.id,
            Message::TrainStatus(TrainStatus {
                state: TrainState::Started,
                duration_ms: 0,
                classes: classes.clone(),
                error_msg: None,
            }),
        );
        drop(slot);
        let handle = handle.clone();
        std::thread::spawn(move || {
            let t0 = Instant::now();
            let result = job.run();
            let duration_ms = t0.elapsed().as_millis() as u64;
            let mut slot = lock(&handle.slot);
            let status = match slot.session.finish_training(job.id, result) {
                Ok(_) => TrainStatus {
                    state: TrainState::Done,
                    duration_ms,
                    classes,
                    error_msg: None,
                },
                // A restore replaced the session while we were training.
                Err(SessionError::StaleTrainingJob(_)) => return,
                Err(e) => TrainStatus {
                    state: TrainState::Error,
                    duration_ms,
                    classes,
                    error_msg: Some(session_error_msg(&e)),
                },
            };
            log::info!("session {}: training {:?} in {duration_ms} ms", handle.id, status.state);
            slot.broadcast(&handle.id, Message::TrainStatus(status));
        });
    }
}

/// A [`Link`] that talks to a [`Hub`] in the same process.
pub struct InProcessLink {
    hub: Arc<Hub>,
    conn: Option<Connection>,
    rx: mpsc::Receiver<Envelope>,
    session_id: String,
    seq: u64,
}

impl InProcessLink {
    /// Connects and completes HELLO; the SESSION_STATE reply is left in the
    /// queue for the caller to observe.
    pub fn connect(hub: Arc<Hub>, session_id: &str, kind: ClientKind) -> Self {
        let (tx, rx) = mpsc::channel();
        let conn = hub.connect(Arc::new(tx));
        let mut link = Self {
            hub,
            conn: Some(conn),
            rx,
            session_id: session_id.to_string(),
            seq: 0,
        };
        link.send(Message::Hello(crate::protocol::Hello {
            client_kind: kind,
            protocol_version: PROTOCOL_VERSION,
        }))
        .expect("fresh in-process link is connected");
        link
    }

    /// Sends a raw frame body, bypassing envelope construction.
    pub fn send_raw(&mut self, body: &[u8]) -> Result<(), LinkError> {
        let conn = self.conn.as_mut().ok_or_else(|| LinkError::Disconnected("closed".into()))?;
        self.hub.handle_frame_body(conn, body);
        Ok(())
    }

    pub fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    /// Drains everything currently queued.
    pub fn drain(&mut self) -> Vec<Envelope> {
        self.rx.try_iter().collect()
    }

    pub fn close(&mut self) {
        if let Some(conn) = self.conn.take() {
            self.hub.disconnect(conn);
        }
    }
}

impl Drop for InProcessLink {
    fn drop(&mut self) {
        self.close();
    }
}

impl Link for InProcessLink {
    fn send(&mut self, message: Message) -> Result<(), LinkError> {
        let seq = self.next_seq();
        let env = Envelope::new(self.session_id.clone(), seq, message);
        let conn = self.conn.as_mut().ok_or_else(|| LinkError::Disconnected("closed".into()))?;
        self.hub.handle_message(conn, env);
        Ok(())
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Envelope>, LinkError> {
        if self.conn.is_none() {
            return Err(LinkError::Disconnected("closed".into()));
        }
        match self.rx.recv_timeout(timeout) {
            Ok(env) => Ok(Some(env)),
            Err(mpsc::RecvTimeoutError::Timeout) => Ok(None),
            Err(mpsc::RecvTimeoutError::Disconnected) => Err(LinkError::Disconnected("hub dropped".into())),
        }
    }
}

/// Count of samples per action as the hub sees them.
pub fn counts_of(snapshot: &SessionSnapshot) -> [usize; NUM_ACTIONS] {
    std::array::from_fn(|i| snapshot.dataset.get(i).map_or(0, Vec::len))
}
