//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use soundmat_cli::train_eval::{self, TrainEvalOptions};
use soundmat_core::audio::{encode_pcm_b64, validate_clip};
use soundmat_core::device::{
    ButtonOutcome, Link, LoopTiming, SimDevice, SoundSource, CAPTURE_LEN_S, CAPTURE_PERIOD_S, LATENCY_BUDGET_S,
};
use soundmat_core::features::{FeatureError, FeatureExtractor};
use soundmat_core::forest::{train_forest, ForestConfig, LabeledSample, Node};
use soundmat_core::hub::HubConfig;
use soundmat_core::mat::{DevicePose, MatLayout};
use soundmat_core::protocol::*;
use soundmat_core::rng::XorShift64Star;
use soundmat_core::session::{ModeButtonOutcome, TrainingJob};
use soundmat_core::{ActionLabel, AudioClip, FeatureVector, LogMelExtractor, Mode, Session, SessionError, NUM_ACTIONS};
use soundmat_server::{ServerConfig, TcpLink};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

const WAIT: Duration = Duration::from_secs(30);

// 1. Few-shot accuracy -------------------------------------------------------

fn few_shot_end_to_end() -> Check {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    // 4 training + 20 holdout clips per class.
    common::write_corpus(dir.path(), &common::three_sources(), 24, 42);
    let out = train_eval::run(&TrainEvalOptions {
        data_dir: dir.path().to_path_buf(),
        seed: 42,
        holdout_frac: 20.0 / 24.0,
        config: HubConfig::default(),
    })
    .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let r = &out.report;
    ensure!(r.n_train == 12 && r.n_holdout == 60, "split {}/{}", r.n_train, r.n_holdout);
    ensure!(
        r.classes.iter().all(|c| c.train == 4 && c.holdout == 20),
        "per-class split {:?}",
        r.classes
    );
    let acc = r.accuracy.ok_or("no accuracy")?;
    ensure!(acc >= 0.9, "accuracy {acc:.4} < 0.90; confusion {:?}", r.confusion);
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!("accuracy {acc:.4} on 60 holdout clips, {:.2} s total", elapsed.as_secs_f64()))
}

// 2. Training latency --------------------------------------------------------

fn training_latency() -> Check {
    let sources = [
        SoundSource::white_noise(),
        SoundSource::sine(440.0),
        SoundSource::click_train(4.0),
        SoundSource::sine(1500.0),
        SoundSource::click_train(12.0),
        SoundSource::sine(3000.0).with_amplitude(0.2),
    ];
    let mut session = Session::new(
        Arc::new(LogMelExtractor::new(Default::default(), 16_000).map_err(|e| e.to_string())?),
        ForestConfig::default(),
        42,
    );
    let mut rng = XorShift64Star::new(2);
    for (action, source) in ActionLabel::ALL.into_iter().zip(&sources) {
        for _ in 0..10 {
            let clip = source.clone().with_jitter(0.3).render(&mut rng).map_err(|e| e.to_string())?;
            session.record_sample_as(action, &clip).map_err(|e| e.to_string())?;
        }
    }
    let t = Instant::now();
    let (model, _) = session.start_training().map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    ensure!(model.classes_present().len() == 6, "classes {:?}", model.classes_present());
    ensure!(elapsed < Duration::from_secs(5), "training took {elapsed:?}");
    Ok(format!("6 x 10 samples, 100 trees in {:.3} s", elapsed.as_secs_f64()))
}

// 3. Loop timing -------------------------------------------------------------

fn loop_timing() -> Check {
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let server = rt.block_on(soundmat_server::serve(ServerConfig::local())).map_err(|e| e.to_string())?;
    let result = (|| {
        let mut link = TcpLink::connect(server.tcp_addr, "loop", ClientKind::Device).map_err(|e| e.to_string())?;
        let mut device = SimDevice::new(MatLayout::canonical(), DevicePose::new(200.0, 150.0, 0.0));
        let mut rng = XorShift64Star::new(42);
        let sine = SoundSource::sine(440.0).with_jitter(0.2);
        let noise = SoundSource::white_noise().with_jitter(0.2);
        for (zone, source) in [(ActionLabel::GoForward, &sine), (ActionLabel::Shake, &noise)] {
            device.move_to_zone(&mut link, zone.id(), WAIT).map_err(|e| e.to_string())?;
            for _ in 0..4 {
                device.record_from(&mut link, source, &mut rng, WAIT).map_err(|e| e.to_string())?;
            }
        }
        match device.press_button(&mut link, WAIT).map_err(|e| e.to_string())? {
            ButtonOutcome::Trained { .. } => {}
            other => return Err(format!("training: {other:?}")),
        }
        let t0 = device.clock.now();
        let cycles = device
            .run_inference_loop(&mut link, &sine, 8, &mut rng, LoopTiming::default())
            .map_err(|e| e.to_string())?;
        ensure!(cycles.len() == 8, "{} cycles", cycles.len());
        let mut worst: f64 = 0.0;
        for (i, c) in cycles.iter().enumerate() {
            let expected = t0 + i as f64 * CAPTURE_PERIOD_S;
            ensure!(c.capture_start_s == expected, "cycle {i} starts at {} not {expected}", c.capture_start_s);
            ensure!(c.capture_end_s - c.capture_start_s == CAPTURE_LEN_S, "cycle {i} capture length");
            if i > 0 {
                let gap = c.capture_start_s - cycles[i - 1].capture_start_s;
                ensure!(gap == CAPTURE_PERIOD_S, "cycle {i} interval {gap}");
            }
            ensure!(
                c.latency_s <= LATENCY_BUDGET_S && c.within_budget,
                "cycle {i} latency {} s",
                c.latency_s
            );
            ensure!(c.action_start_s - c.capture_end_s <= LATENCY_BUDGET_S, "cycle {i} action start");
            worst = worst.max(c.latency_s);
        }
        Ok(format!(
            "8 cycles over TCP at exactly {CAPTURE_PERIOD_S} s, worst capture-end to action {:.1} ms",
            worst * 1000.0
        ))
    })();
    rt.block_on(server.shutdown());
    result
}

// 4. Gini oracle ---------------------------------------------------------------

/// Weighted child impurity `n_l*G_l + n_r*G_r` as an exact fraction.
fn weighted_impurity(left: &[i128], right: &[i128]) -> (i128, i128) {
    let nl: i128 = left.iter().sum();
    let nr: i128 = right.iter().sum();
    let sl: i128 = left.iter().map(|c| c * c).sum();
    let sr: i128 = right.iter().map(|c| c * c).sum();
    ((nl + nr) * nl * nr - sl * nr - sr * nl, nl * nr)
}

fn brute_force_split(data: &[LabeledSample]) -> Option<(usize, f64)> {
    let dim = data[0].features.len();
    let counts = |pred: &dyn Fn(&LabeledSample) -> bool| {
        let mut c = vec![0i128; NUM_ACTIONS];
        for s in data.iter().filter(|s| pred(s)) {
            c[s.label.index()] += 1;
        }
        c
    };
    let all = counts(&|_| true);
    let n: i128 = all.iter().sum();
    let parent = (n * n - all.iter().map(|c| c * c).sum::<i128>(), n);
    let mut best: Option<(usize, f64, (i128, i128))> = None;
    for f in 0..dim {
        let mut values: Vec<f64> = data.iter().map(|s| s.features.0[f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let imp = weighted_impurity(
                &counts(&|s| s.features.0[f] <= t),
                &counts(&|s| s.features.0[f] > t),
            );
            if best.as_ref().is_none_or(|(_, _, b)| imp.0 * b.1 < b.0 * imp.1) {
                best = Some((f, t, imp));
            }
        }
    }
    best.filter(|(_, _, imp)| imp.0 * parent.1 < parent.0 * imp.1)
        .map(|(f, t, _)| (f, t))
}

fn gini_oracle() -> Check {
    let mut rng = XorShift64Star::new(7);
    let (mut checked, mut with_split) = (0, 0);
    for case in 0..300u64 {
        let dim = 1 + rng.below(4);
        let n_classes = 2 + rng.below(4);
        let n = n_classes + rng.below(14);
        let grid = 1 + rng.below(8);
        let data: Vec<LabeledSample> = (0..n)
            .map(|i| LabeledSample {
                features: FeatureVector((0..dim).map(|_| rng.below(grid + 1) as f64 * 0.25).collect()),
                label: ActionLabel::ALL[if i < n_classes { i } else { rng.below(n_classes) }],
            })
            .collect();
        let cfg = ForestConfig {
            n_trees: 1,
            max_depth: 1,
            min_samples_leaf: 1,
            features_per_split: Some(dim),
            bootstrap: false,
        };
        let model = train_forest(&data, &cfg, case).map_err(|e| e.to_string())?;
        let got = match model.trees()[0].root() {
            Node::Split { feature, threshold, .. } => Some((*feature, *threshold)),
            Node::Leaf { .. } => None,
        };
        let want = brute_force_split(&data);
        ensure!(got == want, "dataset {case}: got {got:?}, want {want:?}");
        checked += 1;
        with_split += want.is_some() as usize;
    }
    ensure!(with_split >= 50, "only {with_split} datasets had a useful split");
    Ok(format!("{checked} datasets ({with_split} with a split), 0 mismatches"))
}

// 5. Protocol --------------------------------------------------------------------

fn random_text(rng: &mut XorShift64Star) -> String {
    const POOL: &[char] = &['a', 'Z', '0', ' ', '"', '\\', '/', '\n', '\t', '\u{1}', 'é', '漢', '🎵', '{', '}'];
    (0..rng.below(24)).map(|_| POOL[rng.below(POOL.len())]).collect()
}

fn random_real(rng: &mut XorShift64Star) -> f64 {
    match rng.below(4) {
        0 => rng.range(-1000.0, 1000.0),
        1 => f64::from_bits(rng.next_u64() & !(0x7ffu64 << 52) | ((1 + rng.below(2046) as u64) << 52)),
        2 => 0.0,
        _ => (rng.below(2000) as f64 - 1000.0) / 8.0,
    }
}

fn random_id(rng: &mut XorShift64Star) -> u8 {
    rng.below(NUM_ACTIONS) as u8
}

fn random_message(rng: &mut XorShift64Star) -> Message {
    let maybe_id = |rng: &mut XorShift64Star| (rng.below(4) != 0).then(|| random_id(rng));
    let mode = [Mode::Training, Mode::TrainingInProgress, Mode::Inference];
    match rng.below(15) {
        0 => Message::Hello(Hello {
            client_kind: if rng.below(2) == 0 { ClientKind::Device } else { ClientKind::Ui },
            protocol_version: rng.next_u64() as u32,
        }),
        1 => Message::PositionUpdate(PositionUpdate {
            x_mm: random_real(rng),
            y_mm: random_real(rng),
            heading_deg: random_real(rng),
        }),
        2 => Message::ZoneChanged(ZoneChanged { action_id: maybe_id(rng) }),
        3 => Message::RecordSample(RecordSample {
            action_id: maybe_id(rng),
            pcm_b64: encode_pcm_b64(&(0..rng.below(64)).map(|_| rng.range(-1.0, 1.0) as f32).collect::<Vec<_>>()),
            sample_rate_hz: rng.next_u64() as u32,
        }),
        4 => Message::RecordAck(RecordAck {
            action_id: random_id(rng),
            count: rng.next_u64() as u32,
        }),
        5 => Message::DeleteLast(Empty {}),
        6 => Message::ResetAll(Empty {}),
        7 => Message::TrainRequest(Empty {}),
        8 => Message::TrainStatus(TrainStatus {
            state: [TrainState::Started, TrainState::Done, TrainState::Error][rng.below(3)],
            duration_ms: rng.next_u64(),
            classes: (0..rng.below(7)).map(|_| random_id(rng)).collect(),
            error_msg: (rng.below(2) == 0).then(|| random_text(rng)),
        }),
        9 => Message::InferRequest(InferRequest {
            pcm_b64: random_text(rng),
            sample_rate_hz: 16_000,
        }),
        10 => Message::InferResult(InferResult {
            probs: (0..rng.below(7)).map(|_| (random_id(rng), rng.unit())).collect::<BTreeMap<_, _>>(),
            top_action_id: random_id(rng),
            latency_ms: rng.next_u64(),
        }),
        11 => Message::ActionCommand(ActionCommand { action_id: random_id(rng) }),
        12 => Message::Error(ErrorPayload {
            code: random_text(rng),
            message: random_text(rng),
        }),
        13 => Message::ModeButton(Empty {}),
        _ => Message::SessionState(SessionStatePayload {
            mode: mode[rng.below(3)],
            counts: (0..NUM_ACTIONS).map(|_| rng.next_u64() as u32).collect(),
            current_zone: maybe_id(rng),
            has_model: rng.below(2) == 0,
        }),
    }
}

fn malformed_frame(i: usize) -> Vec<u8> {
    let seq = 1000 + i;
    let body: Vec<u8> = match i % 6 {
        0 => b"{\"type\": \"HELLO\", ".to_vec(),
        1 => format!(r#"{{"type":"JUMP","session_id":"acc","seq":{seq},"payload":{{}}}}"#).into_bytes(),
        2 => format!(r#"{{"type":"POSITION_UPDATE","session_id":"acc","seq":{seq},"payload":{{"x_mm":[]}}}}"#)
            .into_bytes(),
        3 => vec![0xc3, 0x28, 0xa0, 0xa1, i as u8],
        4 => format!(
            r#"{{"type":"RECORD_SAMPLE","session_id":"acc","seq":{seq},"payload":{{"action_id":9,"pcm_b64":"","sample_rate_hz":16000}}}}"#
        )
        .into_bytes(),
        _ => format!(
            r#"{{"type":"RECORD_SAMPLE","session_id":"acc","seq":{seq},"payload":{{"action_id":1,"pcm_b64":"%%%","sample_rate_hz":16000}}}}"#
        )
        .into_bytes(),
    };
    let mut frame = (body.len() as u32).to_be_bytes().to_vec();
    frame.extend(body);
    frame
}

fn protocol() -> Check {
    let mut rng = XorShift64Star::new(5);
    for i in 0..1_000 {
        let env = Envelope::new(random_text(&mut rng), rng.next_u64(), random_message(&mut rng));
        let frame = encode(&env).map_err(|e| format!("envelope {i}: encode: {e}"))?;
        let back = decode(&frame).map_err(|e| format!("envelope {i}: decode: {e}"))?;
        ensure!(back == env, "envelope {i}: {back:?} != {env:?}");
        ensure!(encode(&back).map_err(|e| e.to_string())? == frame, "envelope {i}: re-encode differs");
    }

    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let server = rt.block_on(soundmat_server::serve(ServerConfig::local())).map_err(|e| e.to_string())?;
    let result = (|| {
        let recv = |link: &mut TcpLink| -> Result<Message, String> {
            Ok(link.recv_timeout(WAIT).map_err(|e| e.to_string())?.ok_or("no reply")?.message)
        };
        let mut link = TcpLink::connect(server.tcp_addr, "acc", ClientKind::Device).map_err(|e| e.to_string())?;
        recv(&mut link)?;
        for (action, level) in [(ActionLabel::Shake, 0.3f32), (ActionLabel::TurnRight, -0.2)] {
            link.send(Message::RecordSample(RecordSample {
                action_id: Some(action.id()),
                pcm_b64: encode_pcm_b64(&vec![level; 16_000]),
                sample_rate_hz: 16_000,
            }))
            .map_err(|e| e.to_string())?;
            ensure!(matches!(recv(&mut link)?, Message::RecordAck(_)), "record not acknowledged");
        }
        let before = server.hub.snapshot("acc").ok_or("no session")?;
        for i in 0..100 {
            link.send_bytes(&malformed_frame(i)).map_err(|e| e.to_string())?;
            match recv(&mut link)? {
                Message::Error(_) => {}
                other => return Err(format!("malformed frame {i} answered with {other:?}")),
            }
        }
        ensure!(server.hub.snapshot("acc") == Some(before), "session state changed");
        while link.next_seq() < 5_000 {}
        link.send(Message::DeleteLast(Empty {})).map_err(|e| e.to_string())?;
        match recv(&mut link)? {
            Message::SessionState(s) => ensure!(s.counts == [1, 0, 0, 0, 0, 0], "counts {:?}", s.counts),
            other => return Err(format!("after malformed frames: {other:?}")),
        }
        Ok("1000 envelopes round-tripped; 100 malformed frames rejected, state intact, connection usable".to_string())
    })();
    rt.block_on(server.shutdown());
    result
}

// 6. Session state machine -------------------------------------------------------

/// Two cheap features: first sample and mean.
struct Stub;

impl FeatureExtractor for Stub {
    fn dim(&self) -> usize {
        2
    }

    fn extract(&self, clip: &AudioClip) -> Result<FeatureVector, FeatureError> {
        let s = clip.samples();
        Ok(FeatureVector(vec![
            s[0] as f64,
            s.iter().map(|&v| v as f64).sum::<f64>() / s.len() as f64,
        ]))
    }
}

fn stub_clip(v: i8) -> AudioClip {
    let v = v as f32 / 128.0;
    validate_clip(&[v, -v, v * 0.5], 100).unwrap()
}

#[derive(Default)]
struct RefSession {
    mode: Option<Mode>,
    counts: [usize; NUM_ACTIONS],
    log: Vec<usize>,
    zone: Option<usize>,
    has_model: bool,
}

impl RefSession {
    fn mode(&self) -> Mode {
        self.mode.unwrap_or(Mode::Training)
    }

    fn guard(&self) -> Result<(), SessionError> {
        let classes = self.counts.iter().filter(|&&c| c > 0).count();
        match self.mode() {
            Mode::TrainingInProgress => Err(SessionError::AlreadyTraining),
            Mode::Inference => Err(SessionError::NotInTrainingMode),
            Mode::Training if classes < 2 => Err(SessionError::InsufficientClasses { found: classes }),
            Mode::Training => Ok(()),
        }
    }

    fn record(&mut self, label: usize) -> Result<usize, SessionError> {
        if self.mode() != Mode::Training {
            return Err(SessionError::NotInTrainingMode);
        }
        self.counts[label] += 1;
        self.log.push(label);
        Ok(self.counts[label])
    }
}

fn session_step(s: &mut Session, r: &mut RefSession, job: &mut Option<TrainingJob>, rng: &mut XorShift64Star) -> Result<(), String> {
    let v = rng.next_u64() as i8;
    match rng.below(11) {
        0 => {
            let z = (rng.below(7) < 6).then(|| rng.below(NUM_ACTIONS));
            s.set_zone(z.map(|i| ActionLabel::ALL[i]));
            r.zone = z;
        }
        1 | 2 => {
            let want = match r.zone {
                _ if r.mode() != Mode::Training => Err(SessionError::NotInTrainingMode),
                None => Err(SessionError::NoZoneSelected),
                Some(z) => r.record(z),
            };
            ensure!(s.record_sample(&stub_clip(v)) == want, "record_sample disagrees");
        }
        3 | 4 => {
            let l = rng.below(NUM_ACTIONS);
            let want = r.record(l);
            ensure!(s.record_sample_as(ActionLabel::ALL[l], &stub_clip(v)) == want, "record_sample_as disagrees");
        }
        5 => {
            let want = if r.mode() != Mode::Training {
                Err(SessionError::NotInTrainingMode)
            } else if let Some(l) = r.log.pop() {
                r.counts[l] -= 1;
                Ok(ActionLabel::ALL[l])
            } else {
                Err(SessionError::NothingToDelete)
            };
            ensure!(s.delete_last() == want, "delete_last disagrees");
        }
        6 => {
            let want = if r.mode() == Mode::Training {
                r.counts = Default::default();
                r.log.clear();
                Ok(())
            } else {
                Err(SessionError::NotInTrainingMode)
            };
            ensure!(s.reset_all() == want, "reset_all disagrees");
        }
        7 => {
            // the mode button
            let want = r.guard();
            match (r.mode(), s.press_mode_button()) {
                (Mode::Training, Ok(ModeButtonOutcome::TrainingStarted(j))) if want.is_ok() => {
                    *job = Some(j);
                    r.mode = Some(Mode::TrainingInProgress);
                }
                (Mode::Training, Err(e)) => ensure!(Err(e) == want, "button guard disagrees"),
                (Mode::TrainingInProgress, Ok(ModeButtonOutcome::Ignored)) => {}
                (Mode::Inference, Ok(ModeButtonOutcome::ReturnedToTraining)) => r.mode = Some(Mode::Training),
                (m, got) => return Err(format!("button in {m:?} gave {got:?}")),
            }
        }
        8 => match job.take() {
            Some(j) => {
                let model = j.run();
                s.finish_training(j.id, model).map_err(|e| e.to_string())?;
                r.mode = Some(Mode::Inference);
                r.has_model = true;
            }
            None => {
                let want = r.guard();
                match (s.start_training(), want) {
                    (Ok(_), Ok(())) => {
                        r.mode = Some(Mode::Inference);
                        r.has_model = true;
                    }
                    (Err(e), Err(w)) => ensure!(e == w, "start_training: {e:?} vs {w:?}"),
                    (got, want) => return Err(format!("start_training {:?} vs {want:?}", got.map(|_| ()))),
                }
            }
        },
        9 => match s.infer(&stub_clip(v)) {
            Ok(res) => {
                ensure!(r.mode() == Mode::Inference, "inferred outside inference mode");
                ensure!((res.probabilities.sum() - 1.0).abs() <= 1e-9, "probabilities do not sum to 1");
            }
            Err(e) => ensure!(
                r.mode() != Mode::Inference && e == SessionError::NotInInferenceMode,
                "infer error {e:?}"
            ),
        },
        _ => {
            let stale = job.as_ref().map_or(0, |j| j.id + 1);
            let res = s.finish_training(stale, Err(soundmat_core::forest::ForestError::InvalidConfig("stale".into())));
            ensure!(res.err() == Some(SessionError::StaleTrainingJob(stale)), "stale job accepted");
        }
    }
    Ok(())
}

fn session_matches(s: &Session, r: &RefSession) -> Result<(), String> {
    s.check_invariants()?;
    ensure!(s.mode() == r.mode(), "mode {:?} vs {:?}", s.mode(), r.mode());
    ensure!(s.counts() == r.counts, "counts {:?} vs {:?}", s.counts(), r.counts);
    ensure!(s.model().is_some() == r.has_model, "model presence");
    ensure!(s.current_zone().map(|a| a.index()) == r.zone, "zone");
    let log: Vec<usize> = s.recording_log().iter().map(|(a, _)| a.index()).collect();
    ensure!(log == r.log, "recording log");
    ensure!(s.mode() != Mode::Inference || s.model().is_some(), "inference without a model");
    Ok(())
}

fn state_machine() -> Check {
    let cfg = ForestConfig {
        n_trees: 3,
        max_depth: 3,
        ..ForestConfig::default()
    };
    let mut rng = XorShift64Star::new(6);
    let mut ops = 0;
    for seq in 0..10_000 {
        let mut s = Session::new(Arc::new(Stub), cfg.clone(), seq);
        let mut r = RefSession::default();
        let mut job = None;
        for _ in 0..1 + rng.below(40) {
            session_step(&mut s, &mut r, &mut job, &mut rng).map_err(|e| format!("sequence {seq}: {e}"))?;
            session_matches(&s, &r).map_err(|e| format!("sequence {seq}: {e}"))?;
            ops += 1;
        }
        // back to training, then delete_last must undo record_sample exactly
        if let Some(j) = job.take() {
            let model = j.run();
            s.finish_training(j.id, model).map_err(|e| e.to_string())?;
        }
        if s.mode() == Mode::Inference {
            s.press_mode_button().map_err(|e| e.to_string())?;
        }
        let before = s.snapshot();
        let label = ActionLabel::ALL[rng.below(NUM_ACTIONS)];
        s.record_sample_as(label, &stub_clip(rng.next_u64() as i8)).map_err(|e| e.to_string())?;
        ensure!(s.delete_last() == Ok(label), "sequence {seq}: delete_last returned another label");
        ensure!(s.snapshot() == before, "sequence {seq}: delete_last did not undo record");
    }
    Ok(format!("10000 sequences ({ops} operations), invariants held; delete_last undid record_sample 10000/10000"))
}

// 7. Mat oracle -----------------------------------------------------------------

/// Zone rectangles from the printed mat dimensions, independent of the
/// layout code: 420 x 297 mm, 10 mm margins and gutters, 3 x 2 grid.
fn reference_rects() -> Vec<(f64, f64, f64, f64)> {
    let w = (420.0 - 2.0 * 10.0 - 2.0 * 10.0) / 3.0;
    let h = (297.0 - 2.0 * 10.0 - 10.0) / 2.0;
    let mut rects = Vec::new();
    for row in 0..2 {
        for col in 0..3 {
            let x0 = 10.0 + col as f64 * (w + 10.0);
            let y0 = 10.0 + row as f64 * (h + 10.0);
            rects.push((x0, y0, x0 + w, y0 + h));
        }
    }
    rects
}

fn mat_oracle() -> Check {
    let layout = MatLayout::canonical();
    let rects = reference_rects();
    let scan = |x: f64, y: f64| {
        rects
            .iter()
            .position(|&(x0, y0, x1, y1)| x0 <= x && x <= x1 && y0 <= y && y <= y1)
            .map(|i| ActionLabel::ALL[i])
    };
    let mut rng = XorShift64Star::new(77);
    let mut hits = [0usize; NUM_ACTIONS + 1];
    let n = 10_000;
    for i in 0..n {
        // every fourth pose sits on or just beside a zone edge
        let (x, y) = if i % 4 == 3 {
            let (x0, y0, x1, y1) = rects[rng.below(rects.len())];
            let edge = [x0, x1, x0.next_down(), x1.next_up()][rng.below(4)];
            let edge_y = [y0, y1, y0.next_down(), y1.next_up()][rng.below(4)];
            match rng.below(3) {
                0 => (edge, rng.range(y0, y1)),
                1 => (rng.range(x0, x1), edge_y),
                _ => (edge, edge_y),
            }
        } else {
            (rng.range(-20.0, 440.0), rng.range(-20.0, 317.0))
        };
        let pose = DevicePose::new(x, y, rng.range(-720.0, 720.0));
        let got = layout.zone_at(&pose);
        let want = scan(x, y);
        ensure!(got == want, "pose ({x}, {y}): {got:?} vs {want:?}");
        hits[want.map_or(NUM_ACTIONS, |a| a.index())] += 1;
    }
    ensure!(hits[..NUM_ACTIONS].iter().all(|&h| h > 0), "some zone never sampled: {hits:?}");
    Ok(format!("{n} poses, 0 mismatches ({} outside any zone)", hits[NUM_ACTIONS]))
}

// 8. Determinism ----------------------------------------------------------------

fn train_eval_binary(data: &Path, out: &Path, model: &Path) -> Result<serde_json::Value, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_soundmat"))
        .args(["train-eval", "--seed", "42", "--holdout-frac", "0.5", "--data-dir"])
        .arg(data)
        .arg("--out")
        .arg(out)
        .arg("--model-out")
        .arg(model)
        .env("SOUNDMAT_LOG", "warn")
        .status()
        .map_err(|e| e.to_string())?;
    ensure!(status.success(), "train-eval exited with {status}");
    let text = std::fs::read_to_string(out).map_err(|e| e.to_string())?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    common::write_corpus(&data, &common::three_sources(), 10, 8);
    let paths = |k: &str| (dir.path().join(format!("report_{k}.json")), dir.path().join(format!("model_{k}.json")));
    let (ra, ma) = paths("a");
    let (rb, mb) = paths("b");
    let a = train_eval_binary(&data, &ra, &ma)?;
    let b = train_eval_binary(&data, &rb, &mb)?;
    ensure!(a["confusion"] == b["confusion"], "confusion matrices differ");
    let model_a = std::fs::read(&ma).map_err(|e| e.to_string())?;
    let model_b = std::fs::read(&mb).map_err(|e| e.to_string())?;
    ensure!(model_a == model_b, "serialized models differ");
    Ok(format!(
        "two runs: identical confusion matrices and identical {}-byte models",
        model_a.len()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("few-shot end-to-end", few_shot_end_to_end),
        ("training latency", training_latency),
        ("loop timing", loop_timing),
        ("gini oracle", gini_oracle),
        ("protocol round-trip and malformed frames", protocol),
        ("session state machine", state_machine),
        ("mat oracle", mat_oracle),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            Err(panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {} {name}: {detail} [{secs:.2} s]", i + 1),
            Err(reason) => {
                failed += 1;
                println!("FAIL {} {name}: {reason} [{secs:.2} s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 8 acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 8 acceptance criteria passed");
}
