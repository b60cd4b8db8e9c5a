//! Log-mel feature extraction.
//!
//! A clip is cut into Hann-windowed frames, each frame's power spectrum is
//! pooled by a triangular mel filterbank and log-compressed. The clip is
//! then summarized per band by the mean, the population standard deviation
//! and the mean absolute frame-to-frame change, giving a vector of
//! `3 * n_bands` values (96 with the default config).

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("invalid feature config: {0}")]
    ConfigInvalid(String),
    #[error("clip rate {clip} Hz does not match extractor rate {extractor} Hz")]
    RateMismatch { clip: u32, extractor: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub window_s: f64,
    pub hop_s: f64,
    pub n_fft: usize,
    pub n_bands: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub energy_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window_s: 0.025,
            hop_s: 0.010,
            n_fft: 512,
            n_bands: 32,
            fmin_hz: 125.0,
            fmax_hz: 7500.0,
            energy_floor: 1e-6,
        }
    }
}

pub const MAX_N_FFT: usize = 1 << 16;
pub const MAX_BANDS: usize = 512;

impl FeatureConfig {
    /// Length of the feature vector this config produces.
    pub fn feature_dim(&self) -> usize {
        3 * self.n_bands
    }

    pub fn window_len(&self, rate_hz: u32) -> usize {
        (self.window_s * rate_hz as f64).round() as usize
    }

    pub fn hop_len(&self, rate_hz: u32) -> usize {
        (self.hop_s * rate_hz as f64).round() as usize
    }

    pub fn validate(&self, rate_hz: u32) -> Result<(), FeatureError> {
        let bad = |m: String| Err(FeatureError::ConfigInvalid(m));
        let nyquist = rate_hz as f64 / 2.0;
        if rate_hz == 0 {
            return bad("sample rate must be positive".into());
        }
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < self.fmax_hz) {
            return bad(format!("need 0 <= fmin ({}) < fmax ({})", self.fmin_hz, self.fmax_hz));
        }
        if self.fmax_hz > nyquist {
            return bad(format!("fmax {} Hz exceeds Nyquist {} Hz", self.fmax_hz, nyquist));
        }
        if !(self.hop_s > 0.0 && self.window_s >= self.hop_s) {
            return bad("need window_s >= hop_s > 0".into());
        }
        if self.n_bands == 0 || self.n_bands > MAX_BANDS {
            return bad(format!("n_bands must be in 1..={MAX_BANDS}"));
        }
        if self.n_fft > MAX_N_FFT {
            return bad(format!("n_fft must be at most {MAX_N_FFT}"));
        }
        let win = self.window_len(rate_hz);
        if win == 0 || self.hop_len(rate_hz) == 0 || win > self.n_fft {
            return bad(format!("window of {win} samples must fit in n_fft {}", self.n_fft));
        }
        if !(self.energy_floor > 0.0 && self.energy_floor.is_finite()) {
            return bad("energy_floor must be positive".into());
        }
        Ok(())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters whose centers are equally spaced on the mel scale.
/// Filter `b` rises from `edges[b]` to a peak of 1 at `edges[b + 1]` and
/// falls to zero at `edges[b + 2]`, so neighbours overlap by half.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    /// `n_bands + 2` ascending frequencies.
    pub edges_hz: Vec<f64>,
    /// `n_bands` rows of `n_fft / 2 + 1` weights.
    pub weights: Vec<Vec<f64>>,
}

impl MelFilterbank {
    pub fn new(cfg: &FeatureConfig, rate_hz: u32) -> Self {
        let (mlo, mhi) = (hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz));
        let step = (mhi - mlo) / (cfg.n_bands + 1) as f64;
        let edges_hz: Vec<f64> = (0..cfg.n_bands + 2)
            .map(|i| mel_to_hz(mlo + step * i as f64))
            .collect();
        let n_bins = cfg.n_fft / 2 + 1;
        let bin_hz = rate_hz as f64 / cfg.n_fft as f64;
        let weights = (0..cfg.n_bands)
            .map(|b| {
                let (lo, mid, hi) = (edges_hz[b], edges_hz[b + 1], edges_hz[b + 2]);
                (0..n_bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f <= lo || f >= hi {
                            0.0
                        } else if f <= mid {
                            (f - lo) / (mid - lo)
                        } else {
                            (hi - f) / (hi - mid)
                        }
                    })
                    .collect()
            })
            .collect();
        Self { edges_hz, weights }
    }

    pub fn n_bands(&self) -> usize {
        self.weights.len()
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.edges_hz[1..self.edges_hz.len() - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    /// `n_frames` rows of `n_bands` natural-log energies.
    pub frames: Vec<Vec<f64>>,
    pub frame_hop_s: f64,
    pub band_edges_hz: Vec<f64>,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_bands(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    pub fn band_mean(&self, band: usize) -> f64 {
        self.frames.iter().map(|f| f[band]).sum::<f64>() / self.frames.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Anything that turns a clip into a fixed-length vector. The forest only
/// ever sees the output, so a learned embedding can replace the log-mel
/// statistics without touching the rest of the pipeline.
pub trait FeatureExtractor: Send + Sync {
    fn dim(&self) -> usize;
    fn extract(&self, clip: &AudioClip) -> Result<FeatureVector, FeatureError>;
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Reference extractor: log-mel statistics.
pub struct LogMelExtractor {
    cfg: FeatureConfig,
    rate_hz: u32,
    window: Vec<f64>,
    filterbank: MelFilterbank,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LogMelExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogMelExtractor")
            .field("cfg", &self.cfg)
            .field("rate_hz", &self.rate_hz)
            .finish_non_exhaustive()
    }
}

impl LogMelExtractor {
    pub fn new(cfg: FeatureConfig, rate_hz: u32) -> Result<Self, FeatureError> {
        cfg.validate(rate_hz)?;
        let window = hann_window(cfg.window_len(rate_hz));
        let filterbank = MelFilterbank::new(&cfg, rate_hz);
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Ok(Self {
            cfg,
            rate_hz,
            window,
            filterbank,
            fft,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn log_mel(&self, clip: &AudioClip) -> Result<MelSpectrogram, FeatureError> {
        if clip.sample_rate_hz() != self.rate_hz {
            return Err(FeatureError::RateMismatch {
                clip: clip.sample_rate_hz(),
                extractor: self.rate_hz,
            });
        }
        let samples = clip.samples();
        let win = self.window.len();
        let hop = self.cfg.hop_len(self.rate_hz);
        let n_frames = if samples.len() <= win {
            1
        } else {
            1 + (samples.len() - win) / hop
        };
        let n_bins = self.cfg.n_fft / 2 + 1;
        let floor = self.cfg.energy_floor;

        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0f64; n_bins];
        let mut frames = Vec::with_capacity(n_frames);
        for t in 0..n_frames {
            let start = t * hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                let s = if i < win {
                    samples.get(start + i).copied().unwrap_or(0.0) as f64 * self.window[i]
                } else {
                    0.0
                };
                *slot = Complex::new(s, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            let row = self
                .filterbank
                .weights
                .iter()
                .map(|w| {
                    let e: f64 = w.iter().zip(&power).map(|(a, b)| a * b).sum();
                    e.max(floor).ln()
                })
                .collect();
            frames.push(row);
        }
        Ok(MelSpectrogram {
            frames,
            frame_hop_s: self.cfg.hop_s,
            band_edges_hz: self.filterbank.edges_hz.clone(),
        })
    }
}

/// Per-band mean, population standard deviation and mean absolute delta,
/// concatenated block by block.
pub fn summarize(spec: &MelSpectrogram) -> FeatureVector {
    let n = spec.n_frames() as f64;
    let bands = spec.n_bands();
    let mut means = vec![0.0; bands];
    let mut stds = vec![0.0; bands];
    let mut deltas = vec![0.0; bands];
    for b in 0..bands {
        // Shifted by the first frame so a constant band has an exact mean.
        let first = spec.frames[0][b];
        let mean = first + spec.frames.iter().map(|f| f[b] - first).sum::<f64>() / n;
        let var = spec.frames.iter().map(|f| (f[b] - mean).powi(2)).sum::<f64>() / n;
        let delta = if spec.n_frames() > 1 {
            spec.frames
                .windows(2)
                .map(|w| (w[1][b] - w[0][b]).abs())
                .sum::<f64>()
                / (n - 1.0)
        } else {
            0.0
        };
        means[b] = mean;
        stds[b] = var.sqrt();
        deltas[b] = delta;
    }
    means.extend(stds);
    means.extend(deltas);
    FeatureVector(means)
}

impl FeatureExtractor for LogMelExtractor {
    fn dim(&self) -> usize {
        self.cfg.feature_dim()
    }

    fn extract(&self, clip: &AudioClip) -> Result<FeatureVector, FeatureError> {
        Ok(summarize(&self.log_mel(clip)?))
    }
}

pub fn compute_log_mel(clip: &AudioClip, cfg: &FeatureConfig) -> Result<MelSpectrogram, FeatureError> {
    LogMelExtractor::new(cfg.clone(), clip.sample_rate_hz())?.log_mel(clip)
}

pub fn extract_features(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureVector, FeatureError> {
    LogMelExtractor::new(cfg.clone(), clip.sample_rate_hz())?.extract(clip)
}
