use super::stft::{stft, StftParams};
use super::Waveform;
use crate::error::Result;

const LSD_EPS: f64 = 1e-10;

/// Log-spectral distance in dB: per-frame RMS of the log-magnitude
/// difference, averaged over frames.
pub fn lsd(a: &Waveform, b: &Waveform, p: &StftParams) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let sa = stft(a, p)?;
    let sb = stft(b, p)?;
    let frames = sa.frame_count();
    let total: f64 = sa
        .frames
        .rows()
        .into_iter()
        .zip(sb.frames.rows())
        .map(|(ra, rb)| {
            let mean_sq = ra
                .iter()
                .zip(rb.iter())
                .map(|(u, v)| {
                    let d = 20.0 * (u.norm() + LSD_EPS).log10() - 20.0 * (v.norm() + LSD_EPS).log10();
                    d * d
                })
                .sum::<f64>()
                / ra.len() as f64;
            mean_sq.sqrt()
        })
        .sum();
    Ok(total / frames as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn noise(seed: u64, len: usize, scale: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-scale..scale)).collect()
    }

    #[test]
    fn identity_and_gain() {
        let x = Waveform::new(noise(1, 8192, 0.5), 16000).unwrap();
        let p = StftParams::default();
        assert_eq!(lsd(&x, &x, &p).unwrap(), 0.0);
        let d = lsd(&x, &x.scaled(2.0), &p).unwrap();
        assert!((d - 20.0 * 2f64.log10()).abs() < 1e-6, "{d}");
    }

    #[test]
    fn matches_direct_dft_reference() {
        // Oracle: naive O(N^2) DFT per frame, independent of the FFT path.
        let rate = 16000;
        let len = 4096;
        let tone: Vec<f64> = (0..len)
            .map(|n| 0.5 * (2.0 * PI * 440.0 * n as f64 / rate as f64).sin())
            .collect();
        let noisy: Vec<f64> = tone
            .iter()
            .zip(noise(9, len, 0.005))
            .map(|(a, b)| a + b)
            .collect();
        let p = StftParams::new(256, 128, super::super::Window::Hann).unwrap();
        let window: Vec<f64> = (0..256)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / 256.0).cos())
            .collect();
        let dft_mag = |frame: &[f64], k: usize| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, v) in frame.iter().enumerate() {
                let th = 2.0 * PI * ((k * n) % 256) as f64 / 256.0;
                re += v * window[n] * th.cos();
                im -= v * window[n] * th.sin();
            }
            (re * re + im * im).sqrt()
        };
        let frames = (len - 256) / 128 + 1;
        let mut total = 0.0;
        for f in 0..frames {
            let a = &tone[f * 128..f * 128 + 256];
            let b = &noisy[f * 128..f * 128 + 256];
            let mut acc = 0.0;
            for k in 0..=128 {
                let d = 20.0 * (dft_mag(a, k) + 1e-10).log10() - 20.0 * (dft_mag(b, k) + 1e-10).log10();
                acc += d * d;
            }
            total += (acc / 129.0).sqrt();
        }
        let reference = total / frames as f64;
        let got = lsd(
            &Waveform::new(tone, rate).unwrap(),
            &Waveform::new(noisy, rate).unwrap(),
            &p,
        )
        .unwrap();
        assert!(got > 0.0);
        assert!((got - reference).abs() < 1e-6, "{got} vs {reference}");
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let p = StftParams::default();
        assert!(lsd(&Waveform::zeros(2048, 16000), &Waveform::zeros(4096, 16000), &p).is_err());
    }

    proptest::proptest! {
        #[test]
        fn symmetric(seed in 0u64..500) {
            let a = Waveform::new(noise(seed, 2048, 0.7), 16000).unwrap();
            let b = Waveform::new(noise(seed + 1000, 2048, 0.2), 16000).unwrap();
            let p = StftParams::new(512, 256, super::super::Window::Hann).unwrap();
            let ab = lsd(&a, &b, &p).unwrap();
            let ba = lsd(&b, &a, &p).unwrap();
            proptest::prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
            proptest::prop_assert_eq!(lsd(&a, &a, &p).unwrap(), 0.0);
        }
    }
}
