//! Wire-format round trips over randomly generated envelopes.

use std::collections::BTreeMap;

use proptest::prelude::*;
use soundmat_core::protocol::*;
use soundmat_core::Mode;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
        -1000.0f64..1000.0,
    ]
}

fn action() -> impl Strategy<Value = u8> {
    0u8..6
}

fn text() -> impl Strategy<Value = String> {
    prop_oneof![".{0,24}", "[A-Za-z0-9+/=]{0,200}"]
}

fn empty() -> impl Strategy<Value = Empty> {
    Just(Empty {})
}

fn message() -> impl Strategy<Value = Message> {
    let kind = prop_oneof![Just(ClientKind::Device), Just(ClientKind::Ui)];
    let state = prop_oneof![Just(TrainState::Started), Just(TrainState::Done), Just(TrainState::Error)];
    let mode = prop_oneof![Just(Mode::Training), Just(Mode::TrainingInProgress), Just(Mode::Inference)];
    prop_oneof![
        (kind, any::<u32>()).prop_map(|(client_kind, protocol_version)| Message::Hello(Hello {
            client_kind,
            protocol_version
        })),
        (finite(), finite(), finite()).prop_map(|(x_mm, y_mm, heading_deg)| Message::PositionUpdate(PositionUpdate {
            x_mm,
            y_mm,
            heading_deg
        })),
        prop::option::of(action()).prop_map(|action_id| Message::ZoneChanged(ZoneChanged { action_id })),
        (prop::option::of(action()), text(), any::<u32>()).prop_map(|(action_id, pcm_b64, sample_rate_hz)| {
            Message::RecordSample(RecordSample {
                action_id,
                pcm_b64,
                sample_rate_hz,
            })
        }),
        (action(), any::<u32>()).prop_map(|(action_id, count)| Message::RecordAck(RecordAck { action_id, count })),
        empty().prop_map(Message::DeleteLast),
        empty().prop_map(Message::ResetAll),
        empty().prop_map(Message::TrainRequest),
        empty().prop_map(Message::ModeButton),
        (state, any::<u64>(), prop::collection::vec(action(), 0..6), prop::option::of(text())).prop_map(
            |(state, duration_ms, classes, error_msg)| Message::TrainStatus(TrainStatus {
                state,
                duration_ms,
                classes,
                error_msg
            })
        ),
        (text(), any::<u32>()).prop_map(|(pcm_b64, sample_rate_hz)| Message::InferRequest(InferRequest {
            pcm_b64,
            sample_rate_hz
        })),
        (prop::collection::btree_map(action(), 0.0f64..=1.0, 0..6), action(), any::<u64>()).prop_map(
            |(probs, top_action_id, latency_ms): (BTreeMap<u8, f64>, u8, u64)| Message::InferResult(InferResult {
                probs,
                top_action_id,
                latency_ms
            })
        ),
        action().prop_map(|action_id| Message::ActionCommand(ActionCommand { action_id })),
        (text(), text()).prop_map(|(code, message)| Message::Error(ErrorPayload { code, message })),
        (mode, prop::collection::vec(any::<u32>(), 6), prop::option::of(action()), any::<bool>()).prop_map(
            |(mode, counts, current_zone, has_model)| Message::SessionState(SessionStatePayload {
                mode,
                counts,
                current_zone,
                has_model
            })
        ),
    ]
}

fn envelope() -> impl Strategy<Value = Envelope> {
    (text(), any::<u64>(), message()).prop_map(|(s, seq, m)| Envelope::new(s, seq, m))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn decode_inverts_encode(env in envelope()) {
        let frame = encode(&env).unwrap();
        let back = decode(&frame).unwrap();
        prop_assert_eq!(&back, &env);
        prop_assert_eq!(encode(&back).unwrap(), frame);
    }

    #[test]
    fn stream_decoder_reassembles_any_chunking(
        envs in prop::collection::vec(envelope(), 1..8),
        cuts in prop::collection::vec(1usize..64, 1..32),
    ) {
        let stream: Vec<u8> = envs.iter().flat_map(|e| encode(e).unwrap()).collect();
        let mut dec = FrameDecoder::new();
        let mut out = Vec::new();
        let mut pos = 0;
        for cut in cuts.iter().cycle() {
            if pos >= stream.len() {
                break;
            }
            let end = (pos + cut).min(stream.len());
            dec.push(&stream[pos..end]);
            pos = end;
            while let Some(body) = dec.next_body() {
                out.push(decode_body(&body.unwrap()).unwrap());
            }
        }
        prop_assert_eq!(out, envs);
        prop_assert_eq!(dec.buffered(), 0);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = decode(&bytes);
        let _ = decode_body(&bytes);
        let mut dec = FrameDecoder::new();
        dec.push(&bytes);
        while let Some(r) = dec.next_body() {
            if let Ok(body) = r {
                let _ = decode_body(&body);
            }
        }
    }
}

#[test]
fn oversized_frame_is_skipped_and_stream_recovers() {
    let good = encode(&Envelope::new("s", 1, Message::DeleteLast(Empty {}))).unwrap();
    let big_len = MAX_FRAME_LEN + 10;
    let mut stream = (big_len as u32).to_be_bytes().to_vec();
    stream.extend(std::iter::repeat(b'x').take(big_len));
    stream.extend_from_slice(&good);
    let mut dec = FrameDecoder::new();
    let mut results = Vec::new();
    for chunk in stream.chunks(100_003) {
        dec.push(chunk);
        while let Some(r) = dec.next_body() {
            results.push(r);
        }
    }
    assert_eq!(results.len(), 2);
    assert_eq!(results[0], Err(ProtocolError::FrameTooLarge { len: big_len }));
    assert_eq!(decode_body(results[1].as_ref().unwrap()).unwrap().seq, 1);
}

#[test]
fn error_codes_for_bad_frames() {
    let frame = encode(&Envelope::new("s", 1, Message::DeleteLast(Empty {}))).unwrap();
    assert_eq!(decode(&frame[..frame.len() - 1]).unwrap_err().code(), "MalformedJson");
    assert_eq!(
        decode_body(br#"{"type":"FLY","session_id":"s","seq":1,"payload":{}}"#).unwrap_err().code(),
        "UnknownType"
    );
    assert_eq!(
        decode_body(br#"{"type":"ACTION_COMMAND","session_id":"s","seq":1,"payload":{"action_id":9}}"#)
            .unwrap_err()
            .code(),
        "InvalidPayload"
    );
    let mut huge = ((MAX_FRAME_LEN + 1) as u32).to_be_bytes().to_vec();
    huge.extend_from_slice(b"{}");
    assert_eq!(decode(&huge).unwrap_err().code(), "FrameTooLarge");
}

#[test]
fn probabilities_survive_decimal_serialization() {
    let probs: BTreeMap<u8, f64> = [(0, 1.0 / 3.0), (1, 1.0 / 3.0), (4, 1.0 / 3.0)].into();
    let env = Envelope::new(
        "s",
        2,
        Message::InferResult(InferResult {
            probs,
            top_action_id: 0,
            latency_ms: 12,
        }),
    );
    let body = encode_body(&env).unwrap();
    let text = String::from_utf8(body.clone()).unwrap();
    assert!(text.contains(r#""probs":{"0":"#), "{text}");
    let Message::InferResult(r) = decode_body(&body).unwrap().message else { panic!() };
    assert!((r.probs.values().sum::<f64>() - 1.0).abs() <= 1e-6);
}
