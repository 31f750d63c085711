use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{Segment, Waveform};
use crate::error::{Error, Result};

pub const DEFAULT_TAPER_SHAPE: f64 = 0.1;

/// Tukey window: cosine ramps over `shape * (length - 1) / 2` samples on each
/// side of a flat top. `shape = 0` is rectangular, `shape = 1` is a
/// symmetric Hann window.
pub fn tukey_envelope(length: usize, shape: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&shape) {
        return Err(Error::InvalidParameter(format!(
            "taper shape {shape} outside [0, 1]"
        )));
    }
    if length == 0 {
        return Err(Error::InvalidParameter("envelope length must be at least 1".into()));
    }
    if length == 1 || shape == 0.0 {
        return Ok(vec![1.0; length]);
    }
    let span = shape * (length - 1) as f64;
    let width = (span / 2.0).floor() as usize;
    Ok((0..length)
        .map(|n| {
            if n <= width {
                0.5 * (1.0 + (PI * (-1.0 + 2.0 * n as f64 / span)).cos())
            } else if n >= length - width - 1 {
                0.5 * (1.0 + (PI * (-2.0 / shape + 1.0 + 2.0 * n as f64 / span)).cos())
            } else {
                1.0
            }
        })
        .collect())
}

/// Per-sample attenuation envelope built from tapered segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMask {
    pub envelope: Vec<f64>,
    pub segments: Vec<Segment>,
    pub taper_shape: f64,
}

impl SegmentMask {
    pub fn len(&self) -> usize {
        self.envelope.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envelope.iter().all(|v| *v == 0.0)
    }

    /// Maximal runs of samples with a non-zero envelope.
    pub fn active_runs(&self) -> Vec<Segment> {
        let mut runs = Vec::new();
        let mut start = None;
        for (n, v) in self.envelope.iter().enumerate() {
            match (start, *v > 0.0) {
                (None, true) => start = Some(n),
                (Some(s), false) => {
                    runs.push(Segment::new(s, n));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push(Segment::new(s, self.envelope.len()));
        }
        runs
    }

    /// Pointwise maximum of two masks over the same track.
    pub fn union(&self, other: &SegmentMask) -> Result<SegmentMask> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: other.len(),
            });
        }
        let mut segments = self.segments.clone();
        segments.extend(other.segments.iter().copied());
        Ok(SegmentMask {
            envelope: self
                .envelope
                .iter()
                .zip(&other.envelope)
                .map(|(a, b)| a.max(*b))
                .collect(),
            segments,
            taper_shape: self.taper_shape,
        })
    }

    fn ensure_len(&self, len: usize) -> Result<()> {
        if self.len() != len {
            return Err(Error::LengthMismatch {
                expected: len,
                actual: self.len(),
            });
        }
        Ok(())
    }
}

pub fn build_mask(segments: &[Segment], track_length: usize, taper_shape: f64) -> Result<SegmentMask> {
    if !(0.0..=1.0).contains(&taper_shape) {
        return Err(Error::InvalidParameter(format!(
            "taper shape {taper_shape} outside [0, 1]"
        )));
    }
    let mut envelope: Vec<f64> = vec![0.0; track_length];
    for seg in segments {
        seg.check_bounds(track_length)?;
        let window = tukey_envelope(seg.len(), taper_shape)?;
        for (dst, w) in envelope[seg.start..seg.end].iter_mut().zip(window) {
            *dst = dst.max(w);
        }
    }
    Ok(SegmentMask {
        envelope,
        segments: segments.to_vec(),
        taper_shape,
    })
}

/// Silences the masked region: `w * (1 - envelope)`.
pub fn zero_mask(w: &Waveform, mask: &SegmentMask) -> Result<Waveform> {
    mask.ensure_len(w.len())?;
    let samples = w
        .samples
        .iter()
        .zip(&mask.envelope)
        .map(|(s, m)| if *m == 0.0 { *s } else { s * (1.0 - m) })
        .collect();
    Ok(Waveform {
        samples,
        sample_rate: w.sample_rate,
    })
}

/// `x * (1 - m) + fill * m`, copying `x` (resp. `fill`) exactly where the
/// envelope is 0 (resp. 1).
pub fn composite(x: &Waveform, fill: &Waveform, mask: &SegmentMask) -> Result<Waveform> {
    x.ensure_same_shape(fill)?;
    mask.ensure_len(x.len())?;
    let samples = x
        .samples
        .iter()
        .zip(&fill.samples)
        .zip(&mask.envelope)
        .map(|((a, b), m)| {
            if *m == 0.0 {
                *a
            } else if *m == 1.0 {
                *b
            } else {
                a * (1.0 - m) + b * m
            }
        })
        .collect();
    Ok(Waveform {
        samples,
        sample_rate: x.sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tukey_limits() {
        assert_eq!(tukey_envelope(64, 0.0).unwrap(), vec![1.0; 64]);
        let hann = tukey_envelope(65, 1.0).unwrap();
        for (n, v) in hann.iter().enumerate() {
            let expected = 0.5 - 0.5 * (2.0 * PI * n as f64 / 64.0).cos();
            assert!((v - expected).abs() < 1e-12);
        }
        assert!(tukey_envelope(10, 1.5).is_err());
        assert!(tukey_envelope(10, -0.1).is_err());
    }

    #[test]
    fn tukey_thousand_samples() {
        let w = tukey_envelope(1000, 0.1).unwrap();
        let ramp = w.iter().take_while(|v| **v < 1.0).count();
        assert_eq!(ramp, 50);
        let tail = w.iter().rev().take_while(|v| **v < 1.0).count();
        assert_eq!(tail, 50);
        assert_eq!(w[500], 1.0);
        assert_eq!(w[0], 0.0);
        // Closed form at the middle of the left ramp.
        let expected = 0.5 * (1.0 + (PI * (-1.0 + 2.0 * 25.0 / 99.9)).cos());
        assert!((w[25] - expected).abs() < 1e-15);
    }

    #[test]
    fn mask_edge_cases() {
        let empty = build_mask(&[], 100, 0.1).unwrap();
        assert!(empty.envelope.iter().all(|v| *v == 0.0));
        let full = build_mask(&[Segment::new(0, 100)], 100, 0.0).unwrap();
        assert!(full.envelope.iter().all(|v| *v == 1.0));
        assert!(matches!(
            build_mask(&[Segment::new(50, 101)], 100, 0.1),
            Err(Error::SegmentOutOfBounds { .. })
        ));
    }

    #[test]
    fn overlapping_segments_take_pointwise_max() {
        let a = Segment::new(100, 400);
        let b = Segment::new(300, 700);
        let mask = build_mask(&[a, b], 800, 0.5).unwrap();
        let wa = tukey_envelope(a.len(), 0.5).unwrap();
        let wb = tukey_envelope(b.len(), 0.5).unwrap();
        for n in 0..800 {
            let va = if (a.start..a.end).contains(&n) { wa[n - a.start] } else { 0.0 };
            let vb = if (b.start..b.end).contains(&n) { wb[n - b.start] } else { 0.0 };
            assert_eq!(mask.envelope[n], va.max(vb));
        }
    }

    #[test]
    fn zero_mask_behaviour() {
        let x = Waveform::new((0..1000).map(|n| (n as f64 * 0.01).sin()).collect(), 8000).unwrap();
        let none = build_mask(&[], 1000, 0.1).unwrap();
        assert_eq!(zero_mask(&x, &none).unwrap(), x);
        let mask = build_mask(&[Segment::new(200, 600)], 1000, 0.1).unwrap();
        let out = zero_mask(&x, &mask).unwrap();
        for n in 0..1000 {
            if mask.envelope[n] == 0.0 {
                assert_eq!(out.samples[n].to_bits(), x.samples[n].to_bits());
            }
            if mask.envelope[n] == 1.0 {
                assert_eq!(out.samples[n], 0.0);
            }
        }
        assert!(zero_mask(&Waveform::zeros(10, 8000), &mask).is_err());
    }

    #[test]
    fn zero_mask_boundary_continuity_on_tone() {
        let rate = 16000;
        let x = Waveform::new(
            (0..16000)
                .map(|n| 0.8 * (2.0 * PI * 440.0 * n as f64 / rate as f64).sin())
                .collect(),
            rate,
        )
        .unwrap();
        let seg = Segment::new(4000, 12000);
        let mask = build_mask(&[seg], x.len(), 0.1).unwrap();
        let out = zero_mask(&x, &mask).unwrap();
        let max_step = |v: &[f64]| v.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        let input_step = max_step(&x.samples);
        let amplitude = x.samples.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let taper = 0.1 * (seg.len() - 1) as f64 / 2.0;
        let bound = input_step + amplitude * (PI / (2.0 * taper)).sin();
        assert!(max_step(&out.samples) <= bound);
    }

    #[test]
    fn composite_cases() {
        let x = Waveform::new((0..400).map(|n| n as f64 / 400.0).collect(), 8000).unwrap();
        let fill = Waveform::new((0..400).map(|n| -(n as f64) / 800.0).collect(), 8000).unwrap();
        let zero = build_mask(&[], 400, 0.1).unwrap();
        assert_eq!(composite(&x, &fill, &zero).unwrap(), x);
        let one = build_mask(&[Segment::new(0, 400)], 400, 0.0).unwrap();
        assert_eq!(composite(&x, &fill, &one).unwrap(), fill);

        let half = build_mask(&[Segment::new(200, 400)], 400, 0.1).unwrap();
        let out = composite(&x, &fill, &half).unwrap();
        for n in 0..400 {
            let m = half.envelope[n];
            let expected = x.samples[n] * (1.0 - m) + fill.samples[n] * m;
            assert!((out.samples[n] - expected).abs() < 1e-15);
            if n < 200 {
                assert_eq!(out.samples[n], x.samples[n]);
            }
        }
        assert_eq!(out.samples[300], fill.samples[300]);
    }

    proptest! {
        #[test]
        fn envelope_is_continuous(start in 0usize..500, len in 2usize..1500, shape in 0.05f64..1.0) {
            let track = 2000;
            let end = (start + len).min(track);
            prop_assume!(end > start + 1);
            let seg = Segment::new(start, end);
            let mask = build_mask(&[seg], track, shape).unwrap();
            let taper = shape * (seg.len() - 1) as f64 / 2.0;
            let bound = (PI / (2.0 * taper)).min(PI / 2.0).sin() + 1e-12;
            // The outer edges of the segment sit at envelope 0, so only interior jumps count.
            for n in seg.start + 1..seg.end {
                let jump = (mask.envelope[n] - mask.envelope[n - 1]).abs();
                prop_assert!(jump <= bound, "jump {} > {} at {}", jump, bound, n);
            }
            prop_assert!(mask.envelope.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn zero_mask_preserves_unmasked(seed in 0u64..1000, start in 0usize..900, len in 10usize..400) {
            let track = 1000;
            let end = (start + len).min(track);
            prop_assume!(end > start);
            let x: Vec<f64> = (0..track).map(|n| ((n as u64 * 31 + seed) % 97) as f64 / 97.0 - 0.5).collect();
            let x = Waveform::new(x, 8000).unwrap();
            let mask = build_mask(&[Segment::new(start, end)], track, 0.1).unwrap();
            let out = zero_mask(&x, &mask).unwrap();
            for n in 0..track {
                if mask.envelope[n] == 0.0 {
                    prop_assert_eq!(out.samples[n].to_bits(), x.samples[n].to_bits());
                }
            }
        }
    }
}
