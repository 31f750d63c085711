use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{fft, Waveform};
use crate::error::{Error, Result};

/// Denominators of the weighted overlap-add below this are treated as zero.
const WOLA_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Hann,
    Hamming,
    Rectangular,
}

impl Window {
    /// Periodic (DFT-even) window of length `len`.
    pub fn coefficients(&self, len: usize) -> Vec<f64> {
        let n = len as f64;
        (0..len)
            .map(|i| {
                let phase = 2.0 * PI * i as f64 / n;
                match self {
                    Window::Hann => 0.5 - 0.5 * phase.cos(),
                    Window::Hamming => 0.54 - 0.46 * phase.cos(),
                    Window::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftParams {
    pub window_length: usize,
    pub hop_length: usize,
    pub window: Window,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            window_length: 1024,
            hop_length: 512,
            window: Window::Hann,
        }
    }
}

impl StftParams {
    pub fn new(window_length: usize, hop_length: usize, window: Window) -> Result<Self> {
        let params = Self {
            window_length,
            hop_length,
            window,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn bins(&self) -> usize {
        self.window_length / 2 + 1
    }

    /// Frames that fit entirely inside `len` samples; trailing partial windows are dropped.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.window_length {
            0
        } else {
            (len - self.window_length) / self.hop_length + 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.window_length.is_power_of_two() || self.window_length < 2 {
            return Err(Error::InvalidParameter(format!(
                "window length {} is not a power of two",
                self.window_length
            )));
        }
        if self.hop_length == 0 || self.hop_length > self.window_length {
            return Err(Error::InvalidParameter(format!(
                "hop {} must lie in 1..={}",
                self.hop_length, self.window_length
            )));
        }
        // Weighted overlap-add needs a strictly positive squared-window sum in steady state.
        let w = self.window.coefficients(self.window_length);
        let min_sum = (0..self.hop_length)
            .map(|offset| {
                w.iter()
                    .skip(offset)
                    .step_by(self.hop_length)
                    .map(|v| v * v)
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        if min_sum <= WOLA_FLOOR {
            return Err(Error::InvalidParameter(format!(
                "{:?} window of {} at hop {} does not satisfy overlap-add reconstruction",
                self.window, self.window_length, self.hop_length
            )));
        }
        Ok(())
    }

    /// Sample range covered by the full number of overlapping frames.
    pub fn interior(&self, len: usize) -> std::ops::Range<usize> {
        let frames = self.frame_count(len);
        if frames == 0 {
            return 0..0;
        }
        let start = self.window_length - self.hop_length;
        let end = (frames - 1) * self.hop_length + self.hop_length;
        start..end.max(start)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// `frames x (window_length / 2 + 1)` complex bins.
    pub frames: Array2<Complex64>,
    pub params: StftParams,
    pub origin_length: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn frame_count(&self) -> usize {
        self.frames.nrows()
    }

    pub fn magnitudes(&self) -> Array2<f64> {
        self.frames.mapv(|c| c.norm())
    }
}

pub(crate) fn analyze_frame(samples: &[f64], window: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<f64> = samples.iter().zip(window).map(|(s, w)| s * w).collect();
    fft::forward(&mut buf)
}

pub fn stft(w: &Waveform, p: &StftParams) -> Result<Spectrogram> {
    p.validate()?;
    let frames = p.frame_count(w.len());
    if frames == 0 {
        return Err(Error::TrackTooShort {
            len: w.len(),
            window: p.window_length,
        });
    }
    let window = p.window.coefficients(p.window_length);
    let mut out = Array2::zeros((frames, p.bins()));
    for f in 0..frames {
        let start = f * p.hop_length;
        let spectrum = analyze_frame(&w.samples[start..start + p.window_length], &window);
        for (dst, src) in out.row_mut(f).iter_mut().zip(spectrum) {
            *dst = src;
        }
    }
    Ok(Spectrogram {
        frames: out,
        params: *p,
        origin_length: w.len(),
        sample_rate: w.sample_rate,
    })
}

/// Weighted overlap-add inverse. Samples covered by no window (or only by
/// window zeros) come back as zero.
pub fn istft(s: &Spectrogram, p: &StftParams) -> Result<Waveform> {
    p.validate()?;
    if s.frames.ncols() != p.bins() {
        return Err(Error::InvalidParameter(format!(
            "spectrogram has {} bins but params imply {}",
            s.frames.ncols(),
            p.bins()
        )));
    }
    let window = p.window.coefficients(p.window_length);
    let mut acc = vec![0.0; s.origin_length];
    let mut norm = vec![0.0; s.origin_length];
    let scale = 1.0 / p.window_length as f64;
    for (f, row) in s.frames.rows().into_iter().enumerate() {
        let start = f * p.hop_length;
        if start + p.window_length > s.origin_length {
            return Err(Error::InvalidParameter(format!(
                "frame {f} extends past the stored length {}",
                s.origin_length
            )));
        }
        let mut spectrum: Vec<Complex64> = row.to_vec();
        let frame = fft::inverse(&mut spectrum, p.window_length);
        for (i, (v, w)) in frame.iter().zip(&window).enumerate() {
            acc[start + i] += v * scale * w;
            norm[start + i] += w * w;
        }
    }
    let samples = acc
        .iter()
        .zip(&norm)
        .map(|(a, n)| if *n > WOLA_FLOOR { a / n } else { 0.0 })
        .collect();
    Ok(Waveform {
        samples,
        sample_rate: s.sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tone(freq: f64, rate: u32, len: usize) -> Waveform {
        let samples = (0..len)
            .map(|n| (2.0 * PI * freq * n as f64 / rate as f64).sin() * 0.5)
            .collect();
        Waveform::new(samples, rate).unwrap()
    }

    #[test]
    fn zero_input_gives_zero_spectrogram() {
        let s = stft(&Waveform::zeros(4096, 16000), &StftParams::default()).unwrap();
        assert!(s.frames.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let s = stft(&tone(440.0, 16000, 16000), &StftParams::default()).unwrap();
        let mags = s.magnitudes();
        for row in mags.rows() {
            let peak = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(peak, 28);
        }
    }

    #[test]
    fn linear_in_amplitude() {
        let x = tone(300.0, 16000, 5000);
        let a = stft(&x, &StftParams::default()).unwrap();
        let b = stft(&x.scaled(2.0), &StftParams::default()).unwrap();
        for (u, v) in a.frames.iter().zip(b.frames.iter()) {
            assert!((u * 2.0 - v).norm() <= 1e-12 * (1.0 + v.norm()));
        }
    }

    #[test]
    fn frame_count_formula() {
        let p = StftParams::default();
        assert_eq!(p.frame_count(32000), 61);
        assert_eq!(p.frame_count(1023), 0);
        assert_eq!(p.frame_count(1024), 1);
    }

    #[test]
    fn short_track_is_rejected() {
        let err = stft(&Waveform::zeros(100, 16000), &StftParams::default()).unwrap_err();
        assert!(matches!(err, Error::TrackTooShort { .. }));
    }

    #[test]
    fn white_noise_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<f64> = (0..20000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Waveform::new(samples, 16000).unwrap();
        let p = StftParams::default();
        let y = istft(&stft(&x, &p).unwrap(), &p).unwrap();
        let err = p
            .interior(x.len())
            .map(|n| (x.samples[n] - y.samples[n]).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "max interior error {err}");
    }

    #[test]
    fn chirp_round_trip_at_quarter_hop() {
        let rate = 16000.0;
        let samples: Vec<f64> = (0..12000)
            .map(|n| {
                let t = n as f64 / rate;
                (2.0 * PI * (200.0 * t + 1500.0 * t * t)).sin() * 0.8
            })
            .collect();
        let x = Waveform::new(samples, 16000).unwrap();
        let p = StftParams::new(512, 128, Window::Hann).unwrap();
        let y = istft(&stft(&x, &p).unwrap(), &p).unwrap();
        let err = p
            .interior(x.len())
            .map(|n| (x.samples[n] - y.samples[n]).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "max interior error {err}");
    }

    #[test]
    fn zero_spectrogram_inverts_to_silence() {
        let p = StftParams::default();
        let s = Spectrogram {
            frames: Array2::zeros((5, p.bins())),
            params: p,
            origin_length: 4096,
            sample_rate: 16000,
        };
        assert!(istft(&s, &p).unwrap().samples.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn inconsistent_params_are_rejected() {
        let p = StftParams::default();
        let s = stft(&Waveform::zeros(4096, 16000), &p).unwrap();
        let other = StftParams::new(512, 256, Window::Hann).unwrap();
        assert!(istft(&s, &other).is_err());
    }

    #[test]
    fn invalid_params() {
        assert!(StftParams::new(1000, 500, Window::Hann).is_err());
        assert!(StftParams::new(1024, 0, Window::Hann).is_err());
        assert!(StftParams::new(1024, 2048, Window::Hann).is_err());
        // Periodic Hann at hop == window has a zero at every frame start.
        assert!(StftParams::new(1024, 1024, Window::Hann).is_err());
        assert!(StftParams::new(1024, 1024, Window::Rectangular).is_ok());
    }
}
