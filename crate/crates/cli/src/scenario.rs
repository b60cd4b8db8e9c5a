//! Scripted runs of the simulated device against an in-process server.
//!
//! A script is either a bare list of commands or an object:
//!
//! ```json
//! {"seed": 42, "session_id": "demo", "start_pose": {"x_mm": 0, "y_mm": 0, "heading_deg": 0},
//!  "config": {...}, "commands": [
//!    {"cmd": "move_to_zone", "action": "go_forward"},
//!    {"cmd": "record_from", "source": {"kind": "sine", "freq_hz": 440}, "count": 4},
//!    {"cmd": "press_button"},
//!    {"at_s": 30, "cmd": "run_loop", "source": {"kind": "sine", "freq_hz": 440}, "cycles": 4}]}
//! ```
//!
//! `at_s` moves the simulated clock forward before the command runs.
//! Relative WAV paths are resolved against the script's directory.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use soundmat_core::device::{
    ButtonOutcome, CycleRecord, DeviceError, LatencyModel, LoopTiming, SimDevice, SoundKind, SoundSource,
    CAPTURE_PERIOD_S,
};
use soundmat_core::hub::{Hub, HubConfig, InProcessLink};
use soundmat_core::mat::DevicePose;
use soundmat_core::protocol::ClientKind;
use soundmat_core::rng::XorShift64Star;
use soundmat_core::{ActionLabel, Mode, NUM_ACTIONS};

use crate::CliError;

pub const REPORT_FORMAT: &str = "soundmat.scenario_report";
pub const REPORT_VERSION: u32 = 1;
const REPLY_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    MoveToZone {
        action: ActionLabel,
    },
    RecordFrom {
        source: SoundSource,
        #[serde(default = "one")]
        count: usize,
    },
    PressButton {},
    RunLoop {
        source: SoundSource,
        cycles: usize,
        /// Fixed capture-end to action-start delay; measured when absent.
        #[serde(default)]
        latency_s: Option<f64>,
    },
}

fn one() -> usize {
    1
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::MoveToZone { .. } => "move_to_zone",
            Command::RecordFrom { .. } => "record_from",
            Command::PressButton {} => "press_button",
            Command::RunLoop { .. } => "run_loop",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub at_s: Option<f64>,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Script {
    pub seed: u64,
    pub session_id: String,
    pub start_pose: DevicePose,
    pub config: HubConfig,
    pub steps: Vec<Step>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptDoc {
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default = "default_session")]
    session_id: String,
    #[serde(default)]
    start_pose: Option<DevicePose>,
    #[serde(default)]
    config: Option<HubConfig>,
    commands: Vec<Value>,
}

fn default_seed() -> u64 {
    42
}

fn default_session() -> String {
    "scenario".into()
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::ScriptInvalid(msg.into())
}

fn parse_step(index: usize, mut value: Value, base_dir: Option<&Path>) -> Result<Step, CliError> {
    let obj = value
        .as_object_mut()
        .ok_or_else(|| invalid(format!("command {index} is not an object")))?;
    let at_s = match obj.remove("at_s") {
        None | Some(Value::Null) => None,
        Some(v) => match v.as_f64() {
            Some(t) if t.is_finite() && t >= 0.0 => Some(t),
            _ => return Err(invalid(format!("command {index}: at_s must be a non-negative number"))),
        },
    };
    let mut command: Command =
        serde_json::from_value(value).map_err(|e| invalid(format!("command {index}: {e}")))?;
    match &mut command {
        Command::RecordFrom { source, count } => {
            if *count == 0 {
                return Err(invalid(format!("command {index}: count must be at least 1")));
            }
            check_source(index, source, base_dir)?;
        }
        Command::RunLoop { source, latency_s, .. } => {
            if latency_s.is_some_and(|l| !(l.is_finite() && l >= 0.0)) {
                return Err(invalid(format!("command {index}: latency_s must be a non-negative number")));
            }
            check_source(index, source, base_dir)?;
        }
        _ => {}
    }
    Ok(Step { at_s, command })
}

fn check_source(index: usize, source: &mut SoundSource, base_dir: Option<&Path>) -> Result<(), CliError> {
    let bad = |what: &str| invalid(format!("command {index}: {what}"));
    if source.amplitude.is_some_and(|a| !(a.is_finite() && a >= 0.0)) {
        return Err(bad("amplitude must be a non-negative number"));
    }
    if !(source.jitter.is_finite() && (0.0..1.0).contains(&source.jitter)) {
        return Err(bad("jitter must be in [0, 1)"));
    }
    match &mut source.kind {
        SoundKind::Sine { freq_hz } if !(freq_hz.is_finite() && *freq_hz > 0.0) => Err(bad("freq_hz must be positive")),
        SoundKind::ClickTrain { rate_hz } if !(rate_hz.is_finite() && *rate_hz > 0.0) => {
            Err(bad("rate_hz must be positive"))
        }
        SoundKind::WavFile { path } => {
            if let (true, Some(base)) = (path.is_relative(), base_dir) {
                *path = base.join(&*path);
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

/// Parses a script. `base_dir` anchors relative WAV paths.
pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Script, CliError> {
    let value: Value = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
    let doc = match value {
        Value::Array(commands) => ScriptDoc {
            seed: default_seed(),
            session_id: default_session(),
            start_pose: None,
            config: None,
            commands,
        },
        other => serde_json::from_value(other).map_err(|e| invalid(e.to_string()))?,
    };
    let config = doc.config.unwrap_or_default();
    crate::config::validate(&config).map_err(|e| invalid(e.to_string()))?;
    let start_pose = doc.start_pose.unwrap_or(DevicePose::new(0.0, 0.0, 0.0));
    if !(start_pose.x_mm.is_finite() && start_pose.y_mm.is_finite() && start_pose.heading_deg.is_finite()) {
        return Err(invalid("start_pose must be finite"));
    }
    if doc.session_id.is_empty() {
        return Err(invalid("session_id must not be empty"));
    }
    let steps = doc
        .commands
        .into_iter()
        .enumerate()
        .map(|(i, v)| parse_step(i, v, base_dir))
        .collect::<Result<_, _>>()?;
    Ok(Script {
        seed: doc.seed,
        session_id: doc.session_id,
        start_pose: DevicePose::new(start_pose.x_mm, start_pose.y_mm, start_pose.heading_deg),
        config,
        steps,
    })
}

pub fn load(path: &Path) -> Result<Script, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Invalid(format!("cannot read script {}: {e}", path.display())))?;
    parse(&text, path.parent())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub index: usize,
    pub cmd: &'static str,
    pub start_s: f64,
    pub end_s: f64,
    pub outcome: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopReport {
    pub step: usize,
    pub capture_starts_s: Vec<f64>,
    pub latencies_ms: Vec<f64>,
    /// Every capture starts exactly one period after the previous one.
    pub cadence_ok: bool,
    /// Every capture-end to action-start delay is within budget.
    pub latency_ok: bool,
    pub cycles: Vec<CycleRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalState {
    pub mode: Mode,
    pub counts: [usize; NUM_ACTIONS],
    pub has_model: bool,
    pub pose: DevicePose,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepFailure {
    pub step: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub format: &'static str,
    pub version: u32,
    pub seed: u64,
    pub session_id: String,
    pub steps: Vec<StepReport>,
    pub loops: Vec<LoopReport>,
    pub final_state: FinalState,
    pub error: Option<StepFailure>,
}

impl ScenarioReport {
    pub fn all_loops_ok(&self) -> bool {
        self.loops.iter().all(|l| l.cadence_ok && l.latency_ok)
    }
}

fn loop_report(step: usize, cycles: Vec<CycleRecord>) -> LoopReport {
    let capture_starts_s: Vec<f64> = cycles.iter().map(|c| c.capture_start_s).collect();
    LoopReport {
        step,
        cadence_ok: capture_starts_s.windows(2).all(|w| w[1] - w[0] == CAPTURE_PERIOD_S),
        latency_ok: cycles.iter().all(|c| c.within_budget),
        latencies_ms: cycles.iter().map(|c| c.latency_s * 1000.0).collect(),
        capture_starts_s,
        cycles,
    }
}

fn button_json(outcome: &ButtonOutcome) -> Value {
    match outcome {
        ButtonOutcome::Trained { classes, duration_ms } => serde_json::json!({
            "result": "trained", "classes": classes, "duration_ms": duration_ms,
        }),
        ButtonOutcome::TrainingFailed(msg) => serde_json::json!({"result": "training_failed", "error": msg}),
        ButtonOutcome::ModeChanged(mode) => serde_json::json!({"result": "mode_changed", "mode": mode}),
    }
}

/// Runs the script. A failing step stops the run; the report up to and
/// including the failure is returned alongside the error.
pub fn run(script: &Script) -> Result<ScenarioReport, (ScenarioReport, CliError)> {
    let hub = match Hub::new(script.config.clone()) {
        Ok(h) => h,
        Err(e) => {
            let report = empty_report(script, script.start_pose);
            return Err((report, CliError::Invalid(e.to_string())));
        }
    };
    let mut link = InProcessLink::connect(hub.clone(), &script.session_id, ClientKind::Device);
    let mut device = SimDevice::new(script.config.layout.clone(), script.start_pose);
    let mut rng = XorShift64Star::new(script.seed);
    let mut report = empty_report(script, device.pose);

    for (index, step) in script.steps.iter().enumerate() {
        if let Some(t) = step.at_s {
            device.clock.advance_to(t);
        }
        let start_s = device.clock.now();
        let outcome: Result<Value, DeviceError> = match &step.command {
            Command::MoveToZone { action } => device
                .move_to_zone(&mut link, action.id(), REPLY_TIMEOUT)
                .map(|pose| serde_json::json!({"pose": pose, "zone": device.server_zone()})),
            Command::RecordFrom { source, count } => (0..*count)
                .map(|_| device.record_from(&mut link, source, &mut rng, REPLY_TIMEOUT))
                .collect::<Result<Vec<u32>, _>>()
                .map(|counts| serde_json::json!({"zone": device.server_zone(), "counts": counts})),
            Command::PressButton {} => device
                .press_button(&mut link, REPLY_TIMEOUT)
                .map(|o| button_json(&o)),
            Command::RunLoop {
                source,
                cycles,
                latency_s,
            } => {
                let timing = LoopTiming {
                    latency: latency_s.map_or(LatencyModel::Measured, LatencyModel::Fixed),
                    ..LoopTiming::default()
                };
                match device.run_inference_loop(&mut link, source, *cycles, &mut rng, timing) {
                    Ok(records) => {
                        let l = loop_report(index, records);
                        let summary = serde_json::json!({
                            "cycles": l.cycles.len(), "cadence_ok": l.cadence_ok, "latency_ok": l.latency_ok,
                            "actions": l.cycles.iter().map(|c| c.action).collect::<Vec<_>>(),
                        });
                        report.loops.push(l);
                        Ok(summary)
                    }
                    Err(aborted) => {
                        report.loops.push(loop_report(index, aborted.partial));
                        Err(aborted.error)
                    }
                }
            }
        };
        let end_s = device.clock.now();
        let failed = outcome.as_ref().err().map(ToString::to_string);
        report.steps.push(StepReport {
            index,
            cmd: step.command.name(),
            start_s,
            end_s,
            outcome: outcome.unwrap_or_else(|e| serde_json::json!({"error": e.to_string()})),
        });
        if let Some(message) = failed {
            log::error!("step {index} ({}) failed: {message}", step.command.name());
            report.error = Some(StepFailure {
                step: index,
                message: message.clone(),
            });
            fill_final(&mut report, &hub, &script.session_id, &device);
            return Err((report, CliError::Runtime(format!("step {index}: {message}"))));
        }
    }
    fill_final(&mut report, &hub, &script.session_id, &device);
    Ok(report)
}

fn empty_report(script: &Script, pose: DevicePose) -> ScenarioReport {
    ScenarioReport {
        format: REPORT_FORMAT,
        version: REPORT_VERSION,
        seed: script.seed,
        session_id: script.session_id.clone(),
        steps: Vec::new(),
        loops: Vec::new(),
        final_state: FinalState {
            mode: Mode::Training,
            counts: [0; NUM_ACTIONS],
            has_model: false,
            pose,
        },
        error: None,
    }
}

fn fill_final(report: &mut ScenarioReport, hub: &Hub, session_id: &str, device: &SimDevice) {
    if let Some(snap) = hub.snapshot(session_id) {
        report.final_state = FinalState {
            mode: snap.mode,
            counts: soundmat_core::hub::counts_of(&snap),
            has_model: snap.model.is_some(),
            pose: device.pose,
        };
    }
}
