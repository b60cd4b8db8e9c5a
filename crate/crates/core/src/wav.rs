//! WAV loading: 16-bit PCM mono at any rate, resampled to 16 kHz.

use std::io::Cursor;
use std::path::Path;

use crate::audio::{clip_from_samples, i16_to_f32, resample_linear, AudioClip, AudioError, CANONICAL_RATE_HZ};

#[derive(Debug, thiserror::Error)]
pub enum WavError {
    #[error("unreadable wav: {0}")]
    Unreadable(String),
    #[error("unsupported wav format: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Decoded audio at its original rate.
#[derive(Debug, Clone, PartialEq)]
pub struct PcmAudio {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
}

impl PcmAudio {
    pub fn to_canonical_rate(&self) -> Vec<f32> {
        resample_linear(&self.samples, self.sample_rate_hz, CANONICAL_RATE_HZ)
    }

    /// The first second at 16 kHz, zero-padded if shorter.
    pub fn to_clip(&self) -> Result<AudioClip, AudioError> {
        clip_from_samples(&self.samples, self.sample_rate_hz)
    }
}

pub fn decode_wav(bytes: &[u8]) -> Result<PcmAudio, WavError> {
    let reader =
        hound::WavReader::new(Cursor::new(bytes)).map_err(|e| WavError::Unreadable(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(WavError::Unsupported(format!("{} channels", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(WavError::Unsupported(format!(
            "{:?} {}-bit",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.sample_rate == 0 {
        return Err(WavError::Unsupported("zero sample rate".into()));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(i16_to_f32))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| WavError::Unreadable(e.to_string()))?;
    Ok(PcmAudio {
        samples,
        sample_rate_hz: spec.sample_rate,
    })
}

pub fn read_wav(path: &Path) -> Result<PcmAudio, WavError> {
    decode_wav(&std::fs::read(path)?)
}

pub fn encode_wav(samples: &[f32], sample_rate_hz: u32) -> Vec<u8> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut cursor, spec).expect("in-memory wav writer");
        for &s in samples {
            w.write_sample(crate::audio::f32_to_i16(s))
                .expect("in-memory wav write");
        }
        w.finalize().expect("in-memory wav finalize");
    }
    cursor.into_inner()
}

pub fn write_wav(path: &Path, samples: &[f32], sample_rate_hz: u32) -> std::io::Result<()> {
    std::fs::write(path, encode_wav(samples, sample_rate_hz))
}
