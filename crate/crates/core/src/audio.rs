//! One-second mono clips and the conversions that produce them.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

/// Canonical sample rate for everything downstream of loading.
pub const CANONICAL_RATE_HZ: u32 = 16_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AudioError {
    #[error("empty input")]
    EmptyInput,
    #[error("sample rate must be positive")]
    InvalidRate,
    #[error("pcm payload is not valid base64: {0}")]
    Base64(String),
    #[error("pcm payload has odd byte length {0}")]
    OddPcmLength(usize),
}

/// Exactly one second of mono audio; every sample is finite and in [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate_hz: u32,
}

impl AudioClip {
    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn silence(rate_hz: u32) -> Self {
        Self {
            samples: vec![0.0; rate_hz as usize],
            sample_rate_hz: rate_hz,
        }
    }
}

/// Pads with trailing zeros or truncates to exactly `rate_hz` samples and
/// clamps amplitudes to [-1, 1]. NaN samples become 0.
pub fn validate_clip(raw: &[f32], rate_hz: u32) -> Result<AudioClip, AudioError> {
    if rate_hz == 0 {
        return Err(AudioError::InvalidRate);
    }
    if raw.is_empty() {
        return Err(AudioError::EmptyInput);
    }
    let n = rate_hz as usize;
    let mut samples: Vec<f32> = raw
        .iter()
        .take(n)
        .map(|&s| if s.is_nan() { 0.0 } else { s.clamp(-1.0, 1.0) })
        .collect();
    samples.resize(n, 0.0);
    Ok(AudioClip {
        samples,
        sample_rate_hz: rate_hz,
    })
}

/// Linear-interpolation resampler. Output length is
/// `round(len * to / from)`; output sample `i` reads input position
/// `i * from / to`.
pub fn resample_linear(input: &[f32], from_hz: u32, to_hz: u32) -> Vec<f32> {
    if from_hz == to_hz || input.is_empty() {
        return input.to_vec();
    }
    let ratio = from_hz as f64 / to_hz as f64;
    let out_len = ((input.len() as f64) * to_hz as f64 / from_hz as f64).round() as usize;
    let last = input.len() - 1;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let i0 = (pos.floor() as usize).min(last);
            let i1 = (i0 + 1).min(last);
            let frac = (pos - i0 as f64) as f32;
            input[i0] + (input[i1] - input[i0]) * frac
        })
        .collect()
}

/// Resamples to the canonical rate, then validates.
pub fn clip_from_samples(raw: &[f32], rate_hz: u32) -> Result<AudioClip, AudioError> {
    if rate_hz == 0 {
        return Err(AudioError::InvalidRate);
    }
    // Only the first second survives validation. Output sample i < 16000
    // reads input positions below rate_hz + 1, so resampling just that
    // prefix gives identical samples and bounds the work whatever rate
    // the sender claims.
    let keep = raw.len().min(rate_hz as usize + 1);
    let resampled = resample_linear(&raw[..keep], rate_hz, CANONICAL_RATE_HZ);
    validate_clip(&resampled, CANONICAL_RATE_HZ)
}

pub fn i16_to_f32(s: i16) -> f32 {
    s as f32 / 32768.0
}

/// Inverse of [`i16_to_f32`] on its range; +1.0 saturates to `i16::MAX`.
pub fn f32_to_i16(s: f32) -> i16 {
    (s.clamp(-1.0, 1.0) * 32768.0).round() as i16
}

/// Little-endian signed 16-bit PCM bytes.
pub fn encode_pcm16(samples: &[f32]) -> Vec<u8> {
    samples
        .iter()
        .flat_map(|&s| f32_to_i16(s).to_le_bytes())
        .collect()
}

pub fn decode_pcm16(bytes: &[u8]) -> Result<Vec<f32>, AudioError> {
    if bytes.len() % 2 != 0 {
        return Err(AudioError::OddPcmLength(bytes.len()));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|b| i16_to_f32(i16::from_le_bytes([b[0], b[1]])))
        .collect())
}

pub fn encode_pcm_b64(samples: &[f32]) -> String {
    B64.encode(encode_pcm16(samples))
}

pub fn decode_pcm_b64(text: &str) -> Result<Vec<f32>, AudioError> {
    let bytes = B64
        .decode(text)
        .map_err(|e| AudioError::Base64(e.to_string()))?;
    decode_pcm16(&bytes)
}
