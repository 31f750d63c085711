use ndarray::Array2;

use super::stft::{stft, StftParams};
use super::Waveform;
use crate::error::{Error, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters on the mel scale spanning 0 Hz to Nyquist, stored sparsely.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    bands: Vec<(usize, Vec<f64>)>,
    centers_hz: Vec<f64>,
    bins: usize,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, bins: usize, sample_rate: u32) -> Result<Self> {
        if n_mels == 0 {
            return Err(Error::InvalidParameter("n_mels must be at least 1".into()));
        }
        let fft_len = (bins - 1) * 2;
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = |k: usize| k as f64 * sample_rate as f64 / fft_len as f64;
        let bands = (0..n_mels)
            .map(|b| {
                let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
                let weights: Vec<(usize, f64)> = (0..bins)
                    .filter_map(|k| {
                        let f = bin_hz(k);
                        let w = if f > lo && f <= mid {
                            (f - lo) / (mid - lo)
                        } else if f > mid && f < hi {
                            (hi - f) / (hi - mid)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                match weights.first() {
                    Some(&(first, _)) => {
                        let last = weights.last().unwrap().0;
                        let mut dense = vec![0.0; last - first + 1];
                        for (k, w) in weights {
                            dense[k - first] = w;
                        }
                        (first, dense)
                    }
                    // Band narrower than one bin: take the bin nearest the centre.
                    None => {
                        let k = ((mid / bin_hz(1)).round() as usize).min(bins - 1);
                        (k, vec![1.0])
                    }
                }
            })
            .collect();
        Ok(Self {
            bands,
            centers_hz: edges[1..=n_mels].to_vec(),
            bins,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.bands.len()
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn apply(&self, magnitudes: &[f64], out: &mut [f64]) {
        for ((start, weights), dst) in self.bands.iter().zip(out.iter_mut()) {
            *dst = weights
                .iter()
                .zip(&magnitudes[*start..])
                .map(|(w, m)| w * m)
                .sum();
        }
    }

    /// Adds `W^T g` into `out`.
    pub fn apply_transpose(&self, grad: &[f64], out: &mut [f64]) {
        for ((start, weights), g) in self.bands.iter().zip(grad) {
            if *g == 0.0 {
                continue;
            }
            for (dst, w) in out[*start..].iter_mut().zip(weights) {
                *dst += w * g;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    /// `frames x n_mels` natural-log magnitudes.
    pub frames: Array2<f64>,
    pub n_mels: usize,
    pub floor_value: f64,
}

pub fn mel_spectrogram(
    w: &Waveform,
    p: &StftParams,
    n_mels: usize,
    floor_value: f64,
) -> Result<MelSpectrogram> {
    if !(floor_value > 0.0) {
        return Err(Error::InvalidParameter(
            "mel floor value must be positive".into(),
        ));
    }
    let bank = MelFilterbank::new(n_mels, p.bins(), w.sample_rate)?;
    let spec = stft(w, p)?;
    let mags = spec.magnitudes();
    let mut frames = Array2::zeros((spec.frame_count(), n_mels));
    let mut band = vec![0.0; n_mels];
    for (f, row) in mags.rows().into_iter().enumerate() {
        bank.apply(row.as_slice().expect("standard layout"), &mut band);
        for (dst, v) in frames.row_mut(f).iter_mut().zip(&band) {
            *dst = v.max(floor_value).ln();
        }
    }
    Ok(MelSpectrogram {
        frames,
        n_mels,
        floor_value,
    })
}
