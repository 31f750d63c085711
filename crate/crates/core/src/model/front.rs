//! Differentiable log-mel front end.

use rustfft::num_complex::Complex64;

use crate::audio::stft::analyze_frame;
use crate::audio::{fft, MelFilterbank, StftParams, Waveform};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct LogMel {
    pub params: StftParams,
    pub floor_value: f64,
    bank: MelFilterbank,
    window: Vec<f64>,
}

pub(crate) struct LogMelTrace {
    spectra: Vec<Vec<Complex64>>,
    mel: Vec<f64>,
    len: usize,
}

impl LogMel {
    pub fn new(params: StftParams, n_mels: usize, floor_value: f64, sample_rate: u32) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            floor_value,
            bank: MelFilterbank::new(n_mels, params.bins(), sample_rate)?,
            window: params.window.coefficients(params.window_length),
        })
    }

    pub fn n_mels(&self) -> usize {
        self.bank.n_mels()
    }

    /// Returns `frames x n_mels` log-mel values, row-major.
    pub fn forward(&self, x: &Waveform) -> Result<(usize, Vec<f64>, LogMelTrace)> {
        let p = &self.params;
        let frames = p.frame_count(x.len());
        if frames == 0 {
            return Err(Error::TrackTooShort {
                len: x.len(),
                window: p.window_length,
            });
        }
        let n_mels = self.n_mels();
        let mut out = vec![0.0; frames * n_mels];
        let mut mel = vec![0.0; frames * n_mels];
        let mut spectra = Vec::with_capacity(frames);
        let mut mags = vec![0.0; p.bins()];
        for f in 0..frames {
            let start = f * p.hop_length;
            let spectrum = analyze_frame(&x.samples[start..start + p.window_length], &self.window);
            for (m, c) in mags.iter_mut().zip(&spectrum) {
                *m = c.norm();
            }
            let row = &mut mel[f * n_mels..(f + 1) * n_mels];
            self.bank.apply(&mags, row);
            for (dst, v) in out[f * n_mels..(f + 1) * n_mels].iter_mut().zip(row.iter()) {
                *dst = v.max(self.floor_value).ln();
            }
            spectra.push(spectrum);
        }
        Ok((
            frames,
            out,
            LogMelTrace {
                spectra,
                mel,
                len: x.len(),
            },
        ))
    }

    /// Pulls a gradient on the log-mel values back to the raw samples.
    pub fn backward(&self, trace: &LogMelTrace, grad: &[f64]) -> Vec<f64> {
        let p = &self.params;
        let n_mels = self.n_mels();
        let mut dx = vec![0.0; trace.len];
        let mut dmel = vec![0.0; n_mels];
        let mut dmag = vec![0.0; p.bins()];
        for (f, spectrum) in trace.spectra.iter().enumerate() {
            let mel = &trace.mel[f * n_mels..(f + 1) * n_mels];
            let g = &grad[f * n_mels..(f + 1) * n_mels];
            let mut any = false;
            for ((d, m), gv) in dmel.iter_mut().zip(mel).zip(g) {
                // The floor is flat, so only bands above it pass gradient.
                *d = if *m > self.floor_value { gv / m } else { 0.0 };
                any |= *d != 0.0;
            }
            if !any {
                continue;
            }
            dmag.iter_mut().for_each(|v| *v = 0.0);
            self.bank.apply_transpose(&dmel, &mut dmag);
            let dspec: Vec<Complex64> = spectrum
                .iter()
                .zip(&dmag)
                .map(|(c, g)| {
                    let norm = c.norm();
                    if norm > 0.0 && *g != 0.0 {
                        // d|X|/dRe = Re/|X|, d|X|/dIm = Im/|X| with X = sum x w e^{-i theta}.
                        Complex64::new(g * c.re / norm, g * c.im / norm)
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
                .collect();
            let frame_grad = fft::half_spectrum_adjoint(&dspec, p.window_length);
            let start = f * p.hop_length;
            for ((dst, v), w) in dx[start..start + p.window_length]
                .iter_mut()
                .zip(&frame_grad)
                .zip(&self.window)
            {
                *dst += v * w;
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let params = StftParams::new(256, 128, crate::audio::Window::Hann).unwrap();
        let front = LogMel::new(params, 16, 1e-5, 8000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Waveform::new((0..1024).map(|_| rng.random_range(-0.5..0.5)).collect(), 8000).unwrap();
        let (frames, out, trace) = front.forward(&x).unwrap();
        let weights: Vec<f64> = (0..frames * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert_eq!(out.len(), weights.len());
        let objective = |w: &Waveform| -> f64 {
            let (_, o, _) = front.forward(w).unwrap();
            o.iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let grad = front.backward(&trace, &weights);
        let scale = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        for n in [0usize, 5, 127, 128, 300, 511, 700, 1023] {
            let h = 1e-5;
            let mut plus = x.clone();
            plus.samples[n] += h;
            let mut minus = x.clone();
            minus.samples[n] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let denom = fd.abs().max(grad[n].abs()).max(1e-3 * scale);
            assert!((fd - grad[n]).abs() / denom < 1e-5, "n={n}: {fd} vs {}", grad[n]);
        }
    }
}
