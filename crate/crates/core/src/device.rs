//! Simulated mobile device: pose on the mat, synthetic microphone, the
//! timed inference loop and action kinematics.
//!
//! Time is simulated. Capture windows follow the clock exactly; the only
//! measured quantity is how long the server takes to answer, which is
//! added to the simulated timeline to place the action start. Action
//! execution may overlap the next capture window.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::action::{ActionLabel, NUM_ACTIONS};
use crate::audio::{encode_pcm_b64, validate_clip, AudioClip, CANONICAL_RATE_HZ};
use crate::mat::{normalize_heading, DevicePose, MatLayout};
use crate::protocol::{
    action_of, Empty, Envelope, InferRequest, InferResult, Message, PositionUpdate, RecordSample,
    TrainState,
};
use crate::rng::XorShift64Star;
use crate::session::Mode;
use crate::wav::{read_wav, WavError};

pub const CAPTURE_PERIOD_S: f64 = 2.5;
pub const CAPTURE_LEN_S: f64 = 1.0;
pub const LATENCY_BUDGET_S: f64 = 3.0;
pub const ACTION_DURATION_S: f64 = 1.0;
pub const MOVE_DISTANCE_MM: f64 = 50.0;
pub const TURN_DEG: f64 = 90.0;
pub const SHAKE_AMPLITUDE_MM: f64 = 3.0;
pub const SHAKE_OSCILLATIONS: usize = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinkError {
    #[error("connection lost: {0}")]
    Disconnected(String),
}

/// A device's connection to the server. Implementations wrap outgoing
/// messages in envelopes with the session id and an increasing seq.
pub trait Link {
    fn send(&mut self, message: Message) -> Result<(), LinkError>;
    /// `Ok(None)` on timeout.
    fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Envelope>, LinkError>;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DeviceError {
    #[error("server unreachable: {0}")]
    ServerUnreachable(String),
    #[error("no reply from server within {0:?}")]
    Timeout(Duration),
    #[error("unknown zone {0}")]
    UnknownZone(u8),
    #[error("server error {code}: {message}")]
    Server { code: String, message: String },
    #[error("server reported zone {got:?}, expected {expected}")]
    ZoneMismatch { expected: ActionLabel, got: Option<ActionLabel> },
    #[error("sound source: {0}")]
    Sound(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl From<LinkError> for DeviceError {
    fn from(e: LinkError) -> Self {
        DeviceError::ServerUnreachable(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimClock {
    now_s: f64,
}

impl SimClock {
    pub fn now(&self) -> f64 {
        self.now_s
    }

    /// Moves forward to `t`; never goes backwards.
    pub fn advance_to(&mut self, t: f64) {
        if t > self.now_s {
            self.now_s = t;
        }
    }

    pub fn advance_by(&mut self, dt: f64) {
        self.advance_to(self.now_s + dt);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SoundKind {
    WavFile { path: PathBuf },
    Sine { freq_hz: f64 },
    WhiteNoise,
    ClickTrain { rate_hz: f64 },
}

/// Something to point the simulated microphone at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoundSource {
    #[serde(flatten)]
    pub kind: SoundKind,
    /// Peak amplitude for synthesizers (default 0.5); gain for wav files
    /// (default 1.0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    /// Relative amplitude jitter: each render scales by `1 + U(-j, j)`.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub jitter: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

pub const DEFAULT_SYNTH_AMPLITUDE: f64 = 0.5;

impl SoundSource {
    pub fn new(kind: SoundKind) -> Self {
        Self {
            kind,
            amplitude: None,
            jitter: 0.0,
        }
    }

    pub fn sine(freq_hz: f64) -> Self {
        Self::new(SoundKind::Sine { freq_hz })
    }

    pub fn white_noise() -> Self {
        Self::new(SoundKind::WhiteNoise)
    }

    pub fn click_train(rate_hz: f64) -> Self {
        Self::new(SoundKind::ClickTrain { rate_hz })
    }

    pub fn wav(path: impl Into<PathBuf>) -> Self {
        Self::new(SoundKind::WavFile { path: path.into() })
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = Some(amplitude);
        self
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    /// Renders one second at 16 kHz. Randomness (phase, noise, jitter,
    /// click offset) comes from `rng`.
    pub fn render(&self, rng: &mut XorShift64Star) -> Result<AudioClip, DeviceError> {
        let n = CANONICAL_RATE_HZ as usize;
        let rate = CANONICAL_RATE_HZ as f64;
        let default_amp = match self.kind {
            SoundKind::WavFile { .. } => 1.0,
            _ => DEFAULT_SYNTH_AMPLITUDE,
        };
        let mut amp = self.amplitude.unwrap_or(default_amp);
        if self.jitter > 0.0 {
            amp *= 1.0 + rng.range(-self.jitter, self.jitter);
        }
        let samples: Vec<f32> = match &self.kind {
            SoundKind::Sine { freq_hz } => {
                let phase = rng.range(0.0, std::f64::consts::TAU);
                (0..n)
                    .map(|i| (amp * (std::f64::consts::TAU * freq_hz * i as f64 / rate + phase).sin()) as f32)
                    .collect()
            }
            SoundKind::WhiteNoise => (0..n).map(|_| (amp * rng.range(-1.0, 1.0)) as f32).collect(),
            SoundKind::ClickTrain { rate_hz } => {
                if !(*rate_hz > 0.0) {
                    return Err(DeviceError::Sound(format!("click rate {rate_hz} must be positive")));
                }
                // 2 kHz bursts decaying with a 2 ms time constant.
                let period = rate / rate_hz;
                let offset = rng.range(0.0, period);
                let mut out = vec![0.0f32; n];
                let mut start = offset;
                while (start as usize) < n {
                    let s0 = start as usize;
                    for (k, slot) in out[s0..].iter_mut().take(160).enumerate() {
                        let t = k as f64 / rate;
                        *slot += (amp * (-t / 0.002).exp() * (std::f64::consts::TAU * 2000.0 * t).cos()) as f32;
                    }
                    start += period;
                }
                out
            }
            SoundKind::WavFile { path } => {
                let pcm = read_wav(path).map_err(|e: WavError| DeviceError::Sound(format!("{}: {e}", path.display())))?;
                let clip = pcm.to_clip().map_err(|e| DeviceError::Sound(format!("{}: {e}", path.display())))?;
                clip.samples().iter().map(|&s| (s as f64 * amp) as f32).collect()
            }
        };
        validate_clip(&samples, CANONICAL_RATE_HZ).map_err(|e| DeviceError::Sound(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MotionRecord {
    pub action: ActionLabel,
    pub start_s: f64,
    pub end_s: f64,
    pub from: DevicePose,
    pub to: DevicePose,
    /// Intermediate poses, for actions that are not a straight move.
    pub waypoints: Vec<DevicePose>,
    pub clamped: bool,
    pub led_on_until_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Screen {
    pub mode_text: String,
    pub action_name: Option<String>,
    pub emoticon: String,
    pub sample_count: u32,
    pub probs: Option<[f64; NUM_ACTIONS]>,
}

pub fn emoticon_for(action: Option<ActionLabel>) -> &'static str {
    match action {
        Some(ActionLabel::Shake) => "(>_<)",
        Some(ActionLabel::GoForward) => "(^_^)>",
        Some(ActionLabel::LightUp) => "(*o*)",
        Some(ActionLabel::TurnLeft) => "<(^_^)",
        Some(ActionLabel::GoBackward) => "(-_-)",
        Some(ActionLabel::TurnRight) => "(^_^)>>",
        None => "(._.)",
    }
}

fn mode_text(mode: Mode) -> &'static str {
    match mode {
        Mode::Training => "TRAINING",
        Mode::TrainingInProgress => "TRAINING...",
        Mode::Inference => "INFERENCE",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleRecord {
    pub index: usize,
    pub capture_start_s: f64,
    pub capture_end_s: f64,
    pub action_start_s: f64,
    pub latency_s: f64,
    pub within_budget: bool,
    pub probs: [f64; NUM_ACTIONS],
    pub top: ActionLabel,
    pub server_latency_ms: u64,
    pub action: ActionLabel,
    pub motion: MotionRecord,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("inference loop aborted after {} cycles: {error}", partial.len())]
pub struct LoopAborted {
    pub partial: Vec<CycleRecord>,
    pub error: DeviceError,
}

/// How the capture-end to action-start delay enters the simulated timeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LatencyModel {
    /// Wall-clock round trip to the server.
    Measured,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopTiming {
    pub period_s: f64,
    pub capture_s: f64,
    pub reply_timeout: Duration,
    pub latency: LatencyModel,
}

impl Default for LoopTiming {
    fn default() -> Self {
        Self {
            period_s: CAPTURE_PERIOD_S,
            capture_s: CAPTURE_LEN_S,
            reply_timeout: Duration::from_secs(10),
            latency: LatencyModel::Measured,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ButtonOutcome {
    Trained { classes: Vec<ActionLabel>, duration_ms: u64 },
    TrainingFailed(String),
    ModeChanged(Mode),
}

#[derive(Debug, Clone)]
pub struct SimDevice {
    pub pose: DevicePose,
    pub led_on: bool,
    led_off_at: Option<f64>,
    pub screen: Screen,
    pub clock: SimClock,
    pub layout: MatLayout,
    pub mode: Mode,
    counts: [u32; NUM_ACTIONS],
    server_zone: Option<ActionLabel>,
}

impl SimDevice {
    pub fn new(layout: MatLayout, pose: DevicePose) -> Self {
        Self {
            pose,
            led_on: false,
            led_off_at: None,
            screen: Screen {
                mode_text: mode_text(Mode::Training).into(),
                action_name: None,
                emoticon: emoticon_for(None).into(),
                sample_count: 0,
                probs: None,
            },
            clock: SimClock::default(),
            layout,
            mode: Mode::Training,
            counts: [0; NUM_ACTIONS],
            server_zone: None,
        }
    }

    pub fn counts(&self) -> [u32; NUM_ACTIONS] {
        self.counts
    }

    pub fn server_zone(&self) -> Option<ActionLabel> {
        self.server_zone
    }

    /// Brings time-dependent outputs (the LED) up to `t`.
    pub fn settle(&mut self, t: f64) {
        if let Some(off) = self.led_off_at {
            if t >= off {
                self.led_on = false;
                self.led_off_at = None;
            }
        }
    }

    fn clamp_to_mat(&self, x: f64, y: f64) -> (f64, f64, bool) {
        let cx = x.clamp(0.0, self.layout.width_mm);
        let cy = y.clamp(0.0, self.layout.height_mm);
        (cx, cy, cx != x || cy != y)
    }

    pub fn apply_action(&mut self, action: ActionLabel) -> MotionRecord {
        let t = self.clock.now();
        self.apply_action_at(action, t)
    }

    /// Executes `action` starting at simulated time `start_s`. Heading 0
    /// points along +x; positive turns rotate toward +y.
    pub fn apply_action_at(&mut self, action: ActionLabel, start_s: f64) -> MotionRecord {
        self.settle(start_s);
        let from = self.pose;
        let rad = from.heading_deg.to_radians();
        let (dx, dy) = (rad.cos(), rad.sin());
        let mut waypoints = Vec::new();
        let mut clamped = false;
        let mut led_on_until_s = None;
        let to = match action {
            ActionLabel::GoForward | ActionLabel::GoBackward => {
                let d = if action == ActionLabel::GoForward {
                    MOVE_DISTANCE_MM
                } else {
                    -MOVE_DISTANCE_MM
                };
                let (x, y, c) = self.clamp_to_mat(from.x_mm + d * dx, from.y_mm + d * dy);
                clamped = c;
                DevicePose { x_mm: x, y_mm: y, ..from }
            }
            ActionLabel::TurnLeft | ActionLabel::TurnRight => {
                let d = if action == ActionLabel::TurnRight { TURN_DEG } else { -TURN_DEG };
                DevicePose {
                    heading_deg: normalize_heading(from.heading_deg + d),
                    ..from
                }
            }
            ActionLabel::Shake => {
                let (px, py) = (-dy, dx);
                for _ in 0..SHAKE_OSCILLATIONS {
                    for sign in [1.0, -1.0] {
                        let (x, y, c) = self.clamp_to_mat(
                            from.x_mm + sign * SHAKE_AMPLITUDE_MM * px,
                            from.y_mm + sign * SHAKE_AMPLITUDE_MM * py,
                        );
                        clamped |= c;
                        waypoints.push(DevicePose { x_mm: x, y_mm: y, ..from });
                    }
                }
                from
            }
            ActionLabel::LightUp => {
                self.led_on = true;
                self.led_off_at = Some(start_s + ACTION_DURATION_S);
                led_on_until_s = self.led_off_at;
                from
            }
        };
        self.pose = to;
        MotionRecord {
            action,
            start_s,
            end_s: start_s + ACTION_DURATION_S,
            from,
            to,
            waypoints,
            clamped,
            led_on_until_s,
        }
    }

    /// Updates the screen and local mirrors from a server message.
    pub fn observe(&mut self, env: &Envelope) {
        match &env.message {
            Message::SessionState(s) => {
                self.mode = s.mode;
                for (c, &v) in self.counts.iter_mut().zip(&s.counts) {
                    *c = v;
                }
                self.server_zone = s.current_zone.map(action_of);
                self.refresh_zone_screen();
                self.screen.mode_text = mode_text(s.mode).into();
            }
            Message::ZoneChanged(z) => {
                self.server_zone = z.action_id.map(action_of);
                self.refresh_zone_screen();
            }
            Message::RecordAck(a) => {
                self.counts[a.action_id as usize] = a.count;
                self.refresh_zone_screen();
            }
            Message::TrainStatus(t) => {
                self.mode = match t.state {
                    TrainState::Started => Mode::TrainingInProgress,
                    TrainState::Done => Mode::Inference,
                    TrainState::Error => Mode::Training,
                };
                self.screen.mode_text = mode_text(self.mode).into();
            }
            Message::InferResult(r) => {
                let mut probs = [0.0; NUM_ACTIONS];
                for (&id, &p) in &r.probs {
                    probs[id as usize] = p;
                }
                self.screen.probs = Some(probs);
            }
            Message::ActionCommand(a) => {
                let action = action_of(a.action_id);
                self.screen.action_name = Some(action.name().into());
                self.screen.emoticon = emoticon_for(Some(action)).into();
            }
            _ => {}
        }
    }

    fn refresh_zone_screen(&mut self) {
        self.screen.action_name = self.server_zone.map(|a| a.name().to_string());
        self.screen.emoticon = emoticon_for(self.server_zone).into();
        self.screen.sample_count = self.server_zone.map_or(0, |a| self.counts[a.index()]);
    }

    fn position_message(&self) -> Message {
        Message::PositionUpdate(PositionUpdate {
            x_mm: self.pose.x_mm,
            y_mm: self.pose.y_mm,
            heading_deg: self.pose.heading_deg,
        })
    }

    /// Reports the current pose to the server.
    pub fn report_position(&mut self, link: &mut dyn Link) -> Result<(), DeviceError> {
        link.send(self.position_message())?;
        Ok(())
    }

    /// Receives until `pick` returns a value, feeding everything through
    /// [`observe`](Self::observe). Server ERRORs abort the wait.
    fn wait_for<T>(
        &mut self,
        link: &mut dyn Link,
        timeout: Duration,
        mut pick: impl FnMut(&Message) -> Option<T>,
    ) -> Result<T, DeviceError> {
        let deadline = Instant::now() + timeout;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                return Err(DeviceError::Timeout(timeout));
            }
            let Some(env) = link.recv_timeout(remaining)? else {
                return Err(DeviceError::Timeout(timeout));
            };
            self.observe(&env);
            if let Some(v) = pick(&env.message) {
                return Ok(v);
            }
            if let Message::Error(e) = &env.message {
                return Err(DeviceError::Server {
                    code: e.code.clone(),
                    message: e.message.clone(),
                });
            }
        }
    }

    /// Teleports to the centre of the zone for `action_id`, reports the
    /// pose and waits for the server to confirm the zone.
    pub fn move_to_zone(&mut self, link: &mut dyn Link, action_id: u8, timeout: Duration) -> Result<DevicePose, DeviceError> {
        let action = ActionLabel::from_id(action_id).ok_or(DeviceError::UnknownZone(action_id))?;
        let zone = *self.layout.zone(action).ok_or(DeviceError::UnknownZone(action_id))?;
        let (x, y) = zone.rect.center();
        self.pose = DevicePose { x_mm: x, y_mm: y, ..self.pose };
        self.report_position(link)?;
        if self.server_zone != Some(action) {
            let got = self.wait_for(link, timeout, |m| match m {
                Message::ZoneChanged(z) => Some(z.action_id.map(action_of)),
                _ => None,
            })?;
            if got != Some(action) {
                return Err(DeviceError::ZoneMismatch { expected: action, got });
            }
        }
        Ok(self.pose)
    }

    /// Captures one clip and records it under the zone the server has
    /// for this device. Returns the new count.
    pub fn record_from(
        &mut self,
        link: &mut dyn Link,
        source: &SoundSource,
        rng: &mut XorShift64Star,
        timeout: Duration,
    ) -> Result<u32, DeviceError> {
        let clip = source.render(rng)?;
        self.clock.advance_by(CAPTURE_LEN_S);
        link.send(Message::RecordSample(RecordSample {
            action_id: None,
            pcm_b64: encode_pcm_b64(clip.samples()),
            sample_rate_hz: clip.sample_rate_hz(),
        }))?;
        self.wait_for(link, timeout, |m| match m {
            Message::RecordAck(a) => Some(a.count),
            _ => None,
        })
    }

    /// The physical mode button.
    pub fn press_button(&mut self, link: &mut dyn Link, timeout: Duration) -> Result<ButtonOutcome, DeviceError> {
        link.send(Message::ModeButton(Empty {}))?;
        self.wait_for(link, timeout, |m| match m {
            Message::TrainStatus(t) => match t.state {
                TrainState::Started => None,
                TrainState::Done => Some(ButtonOutcome::Trained {
                    classes: t.classes.iter().map(|&c| action_of(c)).collect(),
                    duration_ms: t.duration_ms,
                }),
                TrainState::Error => Some(ButtonOutcome::TrainingFailed(
                    t.error_msg.clone().unwrap_or_default(),
                )),
            },
            Message::SessionState(s) if s.mode != Mode::TrainingInProgress => Some(ButtonOutcome::ModeChanged(s.mode)),
            _ => None,
        })
    }

    /// Captures every `period_s` of simulated time, asks the server to
    /// classify, and executes the commanded action.
    pub fn run_inference_loop(
        &mut self,
        link: &mut dyn Link,
        source: &SoundSource,
        n_cycles: usize,
        rng: &mut XorShift64Star,
        timing: LoopTiming,
    ) -> Result<Vec<CycleRecord>, LoopAborted> {
        let t0 = self.clock.now();
        let mut cycles = Vec::with_capacity(n_cycles);
        for index in 0..n_cycles {
            match self.run_cycle(link, source, rng, timing, t0, index) {
                Ok(c) => cycles.push(c),
                Err(error) => {
                    return Err(LoopAborted {
                        partial: cycles,
                        error,
                    })
                }
            }
        }
        self.clock.advance_to(t0 + n_cycles as f64 * timing.period_s);
        Ok(cycles)
    }

    fn run_cycle(
        &mut self,
        link: &mut dyn Link,
        source: &SoundSource,
        rng: &mut XorShift64Star,
        timing: LoopTiming,
        t0: f64,
        index: usize,
    ) -> Result<CycleRecord, DeviceError> {
        let capture_start_s = t0 + index as f64 * timing.period_s;
        self.clock.advance_to(capture_start_s);
        let clip = source.render(rng)?;
        let capture_end_s = capture_start_s + timing.capture_s;
        self.clock.advance_to(capture_end_s);

        let wall = Instant::now();
        link.send(Message::InferRequest(InferRequest {
            pcm_b64: encode_pcm_b64(clip.samples()),
            sample_rate_hz: clip.sample_rate_hz(),
        }))?;
        let mut result: Option<InferResult> = None;
        let action = self.wait_for(link, timing.reply_timeout, |m| match m {
            Message::InferResult(r) => {
                result = Some(r.clone());
                None
            }
            Message::ActionCommand(a) => Some(action_of(a.action_id)),
            _ => None,
        })?;
        let result = result.ok_or_else(|| DeviceError::Protocol("ACTION_COMMAND without INFER_RESULT".into()))?;
        let latency_s = match timing.latency {
            LatencyModel::Measured => wall.elapsed().as_secs_f64(),
            LatencyModel::Fixed(s) => s,
        };
        let action_start_s = capture_end_s + latency_s;
        let motion = self.apply_action_at(action, action_start_s);
        self.report_position(link)?;

        let mut probs = [0.0; NUM_ACTIONS];
        for (&id, &p) in &result.probs {
            probs[id as usize] = p;
        }
        Ok(CycleRecord {
            index,
            capture_start_s,
            capture_end_s,
            action_start_s,
            latency_s,
            within_budget: latency_s <= LATENCY_BUDGET_S,
            probs,
            top: action_of(result.top_action_id),
            server_latency_ms: result.latency_ms,
            action,
            motion,
        })
    }
}
