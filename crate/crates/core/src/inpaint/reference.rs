use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use super::{Inpainter, Latent, DEFAULT_LATENT_DIM};
use crate::audio::mel::{hz_to_mel, mel_to_hz};
use crate::audio::stft::analyze_frame;
use crate::audio::{composite, fft, Segment, SegmentMask, StftParams, Waveform, Window};
use crate::error::{Error, Result};

const MAX_GAIN_DB: f64 = 6.0;
const MAX_NOISE_MIX: f64 = 0.3;
const LOG_FLOOR: f64 = 1e-12;

/// Fills each gap by interpolating log-magnitudes between the STFT frames
/// flanking it and continuing the left frame's phase at its instantaneous
/// frequency.
///
/// The latent splits in two halves over mel-spaced bands: the first half sets
/// a per-band gain of `6 * tanh(z)` dB, the second half mixes in
/// random-phase noise with weight `0.3 * sigmoid(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceInpainter {
    params: StftParams,
    latent_dim: usize,
    noise_seed: u64,
}

impl Default for ReferenceInpainter {
    fn default() -> Self {
        Self::new(
            StftParams::new(1024, 256, Window::Hann).expect("valid default"),
            DEFAULT_LATENT_DIM,
            0,
        )
        .expect("valid default")
    }
}

struct Flank {
    /// Frame start, possibly negative.
    position: i64,
    phase: Vec<f64>,
    log_mag: Vec<f64>,
    omega: Vec<f64>,
}

fn princarg(phase: f64) -> f64 {
    phase - 2.0 * PI * (phase / (2.0 * PI)).round()
}

impl ReferenceInpainter {
    pub fn new(params: StftParams, latent_dim: usize, noise_seed: u64) -> Result<Self> {
        params.validate()?;
        if latent_dim < 2 || latent_dim % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "latent dimension must be even and at least 2, got {latent_dim}"
            )));
        }
        Ok(Self {
            params,
            latent_dim,
            noise_seed,
        })
    }

    fn bands(&self) -> usize {
        self.latent_dim / 2
    }

    fn band_of_bins(&self, sample_rate: u32) -> Vec<usize> {
        let n = self.params.window_length as f64;
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let bands = self.bands();
        let edges: Vec<f64> = (1..bands).map(|b| mel_to_hz(top * b as f64 / bands as f64)).collect();
        (0..self.params.bins())
            .map(|k| {
                let hz = k as f64 * sample_rate as f64 / n;
                edges.iter().filter(|e| hz >= **e).count()
            })
            .collect()
    }

    fn spectrum_at(&self, context: &[f64], start: usize, window: &[f64]) -> Vec<Complex64> {
        analyze_frame(&context[start..start + self.params.window_length], window)
    }

    /// Frame at `start` plus the instantaneous frequency from its neighbour at
    /// `start + step` (step is `+hop` or `-hop`), if that neighbour fits.
    fn flank(&self, context: &[f64], start: usize, step: i64, window: &[f64]) -> Flank {
        let n = self.params.window_length;
        let hop = self.params.hop_length as f64;
        let spectrum = self.spectrum_at(context, start, window);
        let neighbour = start as i64 + step;
        let other = (neighbour >= 0 && neighbour as usize + n <= context.len())
            .then(|| self.spectrum_at(context, neighbour as usize, window));
        let omega = (0..spectrum.len())
            .map(|k| {
                let centre = 2.0 * PI * k as f64 / n as f64;
                match &other {
                    Some(o) => {
                        // Phase advance from the earlier frame to the later one.
                        let (early, late) = if step > 0 { (spectrum[k], o[k]) } else { (o[k], spectrum[k]) };
                        centre + princarg(late.arg() - early.arg() - centre * hop) / hop
                    }
                    None => centre,
                }
            })
            .collect();
        Flank {
            position: start as i64,
            phase: spectrum.iter().map(|c| c.arg()).collect(),
            log_mag: spectrum.iter().map(|c| c.norm().max(LOG_FLOOR).ln()).collect(),
            omega,
        }
    }

    fn fill_gap(&self, context: &[f64], gap: Segment, z: &[f64], band_of: &[usize], out: &mut [f64]) -> Result<()> {
        let n = self.params.window_length;
        let hop = self.params.hop_length;
        let len = context.len();
        let window = self.params.window.coefficients(n);
        let hop_i = hop as i64;
        let left = (gap.start >= n).then(|| self.flank(context, gap.start - n, -hop_i, &window));
        let right = (gap.end + n <= len).then(|| self.flank(context, gap.end, hop_i, &window));
        if left.is_none() && right.is_none() {
            return Err(Error::NoContext {
                start: gap.start,
                end: gap.end,
            });
        }
        let bands = self.bands();
        let gains: Vec<f64> = z[..bands]
            .iter()
            .map(|v| 10f64.powf(MAX_GAIN_DB * v.tanh() / 20.0))
            .collect();
        let mixes: Vec<f64> = z[bands..]
            .iter()
            .map(|v| MAX_NOISE_MIX / (1.0 + (-v).exp()))
            .collect();

        let anchor = gap.start as i64 - n as i64;
        let left_centre = anchor as f64 + n as f64 / 2.0;
        let right_centre = gap.end as f64 + n as f64 / 2.0;
        let mut acc = vec![0.0; gap.len()];
        let mut norm = vec![0.0; gap.len()];
        let mut spectrum = vec![Complex64::new(0.0, 0.0); self.params.bins()];
        let mut position = anchor + hop_i;
        let mut frame_index = 0u64;
        while position < gap.end as i64 {
            let centre = position as f64 + n as f64 / 2.0;
            let w = ((centre - left_centre) / (right_centre - left_centre)).clamp(0.0, 1.0);
            let mut noise = ChaCha8Rng::seed_from_u64(self.noise_seed);
            noise.set_stream(frame_index);
            for (k, bin) in spectrum.iter_mut().enumerate() {
                let log_mag = match (&left, &right) {
                    (Some(l), Some(r)) => (1.0 - w) * l.log_mag[k] + w * r.log_mag[k],
                    (Some(l), None) => l.log_mag[k],
                    (None, Some(r)) => r.log_mag[k],
                    (None, None) => unreachable!(),
                };
                let phase = match (&left, &right) {
                    (Some(l), _) => l.phase[k] + l.omega[k] * (position - l.position) as f64,
                    (None, Some(r)) => r.phase[k] - r.omega[k] * (r.position - position) as f64,
                    (None, None) => unreachable!(),
                };
                let random_phase = noise.random_range(-PI..PI);
                let b = band_of[k];
                let mag = log_mag.exp() * gains[b];
                *bin = Complex64::from_polar(mag * (1.0 - mixes[b]), phase)
                    + Complex64::from_polar(mag * mixes[b], random_phase);
            }
            let frame = fft::inverse(&mut spectrum, n);
            for (i, (v, wv)) in frame.iter().zip(&window).enumerate() {
                let t = position + i as i64;
                if t >= gap.start as i64 && t < gap.end as i64 {
                    let j = (t - gap.start as i64) as usize;
                    acc[j] += v / n as f64 * wv;
                    norm[j] += wv * wv;
                }
            }
            position += hop_i;
            frame_index += 1;
        }
        for ((dst, a), w2) in out[gap.start..gap.end].iter_mut().zip(&acc).zip(&norm) {
            *dst = if *w2 > 1e-10 { a / w2 } else { 0.0 };
        }
        Ok(())
    }
}

impl Inpainter for ReferenceInpainter {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn inpaint(&self, x: &Waveform, mask: &SegmentMask, z: &Latent) -> Result<Waveform> {
        if mask.len() != x.len() {
            return Err(Error::LengthMismatch {
                expected: x.len(),
                actual: mask.len(),
            });
        }
        if z.dim() != self.latent_dim {
            return Err(Error::InvalidParameter(format!(
                "latent has {} entries, generator expects {}",
                z.dim(),
                self.latent_dim
            )));
        }
        let runs = mask.active_runs();
        if runs.is_empty() {
            return Ok(x.clone());
        }
        let context: Vec<f64> = x
            .samples
            .iter()
            .zip(&mask.envelope)
            .map(|(s, m)| if *m == 0.0 { *s } else { s * (1.0 - m) })
            .collect();
        let band_of = self.band_of_bins(x.sample_rate);
        let mut fill = vec![0.0; x.len()];
        for gap in runs {
            self.fill_gap(&context, gap, z.as_slice(), &band_of, &mut fill)?;
        }
        composite(
            x,
            &Waveform {
                samples: fill,
                sample_rate: x.sample_rate,
            },
            mask,
        )
    }
}
