//! Signal substrate shared by every stage: waveforms, WAV I/O, short-time
//! Fourier analysis, mel features, tapered segment masks and the log-spectral
//! distance.

pub(crate) mod fft;
pub mod lsd;
pub mod mask;
pub mod mel;
pub mod stft;
pub mod wav;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use lsd::lsd;
pub use mask::{build_mask, composite, tukey_envelope, zero_mask, SegmentMask, DEFAULT_TAPER_SHAPE};
pub use mel::{mel_spectrogram, MelFilterbank, MelSpectrogram};
pub use stft::{istft, stft, Spectrogram, StftParams, Window};
pub use wav::{load_wav, save_wav, LoadedWav, WavEncoding, WavWarning};

/// Mono audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidParameter("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::InvalidParameter("waveform must be non-empty".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub(crate) fn ensure_same_shape(&self, other: &Waveform) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: other.len(),
            });
        }
        if self.sample_rate != other.sample_rate {
            return Err(Error::SampleRateMismatch {
                expected: self.sample_rate,
                actual: other.sample_rate,
            });
        }
        Ok(())
    }
}

/// Half-open sample range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn duration_seconds(&self, sample_rate: u32) -> f64 {
        self.len() as f64 / sample_rate as f64
    }

    pub fn overlap(&self, other: &Segment) -> usize {
        self.end
            .min(other.end)
            .saturating_sub(self.start.max(other.start))
    }

    pub fn check_bounds(&self, track_length: usize) -> Result<()> {
        if self.start >= self.end || self.end > track_length {
            return Err(Error::SegmentOutOfBounds {
                start: self.start,
                end: self.end,
                len: track_length,
            });
        }
        Ok(())
    }

    /// Splits into `parts` contiguous pieces; the last piece absorbs any remainder.
    pub fn split(&self, parts: usize) -> Vec<Segment> {
        let step = self.len() / parts;
        (0..parts)
            .map(|i| {
                let start = self.start + i * step;
                let end = if i + 1 == parts {
                    self.end
                } else {
                    start + step
                };
                Segment::new(start, end)
            })
            .collect()
    }
}
