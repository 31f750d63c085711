use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::audio::{build_mask, Segment, SegmentMask, StftParams};
use crate::error::{Error, Result};
use crate::model::{LayerActivations, ModelHandle};
use crate::audio::Waveform;

/// Class-activation map over the model input's `frames x bins` grid, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub values: Array2<f64>,
    /// Frame `f` covers samples `[f * hop, f * hop + window)`.
    pub frame_params: StftParams,
    pub sample_rate: u32,
}

impl Heatmap {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn frame_span(&self, frame: usize) -> Segment {
        let start = frame * self.frame_params.hop_length;
        Segment::new(start, start + self.frame_params.window_length)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

/// Grad-CAM of class `y` at `layer`, upsampled to the input resolution.
pub fn grad_cam(m: &ModelHandle, x: &Waveform, y: usize, layer: &str) -> Result<Heatmap> {
    let frame_params = m.frame_params()?;
    let acts = m.layer_activations(x, y, layer)?;
    Ok(Heatmap {
        values: cam_from_activations(&acts),
        frame_params,
        sample_rate: x.sample_rate,
    })
}

/// Channel weights are the spatially averaged gradients; the weighted map is
/// rectified, resized and min-max normalized.
pub(crate) fn cam_from_activations(acts: &LayerActivations) -> Array2<f64> {
    let (_, t, f) = acts.feature_map.dim();
    let alphas = acts
        .gradient
        .mean_axis(Axis(1))
        .and_then(|g| g.mean_axis(Axis(1)))
        .expect("non-empty feature map");
    let mut raw = Array2::<f64>::zeros((t, f));
    for (k, alpha) in alphas.iter().enumerate() {
        raw.scaled_add(*alpha, &acts.feature_map.index_axis(Axis(0), k));
    }
    raw.mapv_inplace(|v| v.max(0.0));
    let mut map = bilinear_resize(&raw, acts.input_frames, acts.input_bins);
    let (lo, hi) = map
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if hi <= 0.0 {
        map.fill(0.0);
    } else if hi == lo {
        map.fill(1.0);
    } else {
        map.mapv_inplace(|v| (v - lo) / (hi - lo));
    }
    map
}

/// Half-pixel-centred bilinear interpolation with edge clamping.
pub(crate) fn bilinear_resize(src: &Array2<f64>, rows: usize, cols: usize) -> Array2<f64> {
    let (r0, c0) = src.dim();
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        (0..out)
            .map(|i| {
                let pos = ((i as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let ry = axis(rows, r0);
    let cx = axis(cols, c0);
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        let (y0, y1, wy) = ry[i];
        let (x0, x1, wx) = cx[j];
        let top = src[[y0, x0]] * (1.0 - wx) + src[[y0, x1]] * wx;
        let bottom = src[[y1, x0]] * (1.0 - wx) + src[[y1, x1]] * wx;
        top * (1.0 - wy) + bottom * wy
    })
}

/// Linear-interpolated percentile, `q` in `[0, 100]`.
pub(crate) fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Turns the top `top_p` percent of heatmap cells into a tapered time mask.
///
/// A frame is selected when its maximum over frequency lies strictly above
/// the `(100 - top_p)` percentile or equals the global maximum; `top_p = 100`
/// selects every frame. Selected frames become their window spans,
/// touching spans merge, and runs shorter than `min_segment` are widened
/// symmetrically (clamped to the track).
pub fn heatmap_to_mask(
    h: &Heatmap,
    top_p: f64,
    track_length: usize,
    taper_shape: f64,
    min_segment: usize,
) -> Result<SegmentMask> {
    if !(top_p > 0.0 && top_p <= 100.0) {
        return Err(Error::InvalidParameter(format!("top_p must lie in (0, 100], got {top_p}")));
    }
    if h.values.is_empty() || h.is_zero() {
        return Err(Error::EmptyMask);
    }
    let flat: Vec<f64> = h.values.iter().copied().collect();
    let threshold = percentile(&flat, 100.0 - top_p);
    let peak = flat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spans: Vec<Segment> = h
        .values
        .axis_iter(Axis(0))
        .enumerate()
        .filter(|(_, row)| {
            let v = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            top_p >= 100.0 || v > threshold || v == peak
        })
        .map(|(f, _)| {
            let s = h.frame_span(f);
            Segment::new(s.start.min(track_length), s.end.min(track_length))
        })
        .filter(|s| !s.is_empty())
        .collect();
    let dilated: Vec<Segment> = merge_segments(spans)
        .into_iter()
        .map(|s| dilate(s, min_segment, track_length))
        .collect();
    let segments = merge_segments(dilated);
    if segments.is_empty() {
        return Err(Error::EmptyMask);
    }
    build_mask(&segments, track_length, taper_shape)
}

/// Sorts and merges overlapping or touching segments.
pub(crate) fn merge_segments(mut segments: Vec<Segment>) -> Vec<Segment> {
    segments.sort_by_key(|s| (s.start, s.end));
    let mut out: Vec<Segment> = Vec::with_capacity(segments.len());
    for s in segments {
        match out.last_mut() {
            Some(last) if s.start <= last.end => last.end = last.end.max(s.end),
            _ => out.push(s),
        }
    }
    out
}

fn dilate(s: Segment, min_len: usize, track_length: usize) -> Segment {
    let min_len = min_len.min(track_length);
    if s.len() >= min_len {
        return s;
    }
    let missing = min_len - s.len();
    let start = s.start.saturating_sub(missing / 2);
    let end = (start + min_len).min(track_length);
    Segment::new(end - min_len, end)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn acts(map: Array3<f64>, grad: Array3<f64>) -> LayerActivations {
        let (_, t, f) = map.dim();
        LayerActivations {
            feature_map: map,
            gradient: grad,
            input_frames: t,
            input_bins: f,
        }
    }

    #[test]
    fn single_channel_sum_logit_gives_normalized_relu() {
        let map = Array3::from_shape_fn((1, 4, 3), |(_, t, f)| t as f64 - f as f64 * 1.5);
        let cam = cam_from_activations(&acts(map.clone(), Array3::ones((1, 4, 3))));
        let relu = map.index_axis(Axis(0), 0).mapv(|v| v.max(0.0));
        let hi = relu.iter().copied().fold(0.0, f64::max);
        for (c, r) in cam.iter().zip(relu.iter()) {
            assert!((c - r / hi).abs() < 1e-15);
        }
    }

    #[test]
    fn negative_weighted_sum_is_zero_map() {
        let map = Array3::from_elem((2, 3, 3), 1.0);
        let cam = cam_from_activations(&acts(map, -Array3::ones((2, 3, 3))));
        assert!(cam.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_functional_matches_closed_form() {
        // logit = sum_k w_k * sum F_k, so the gradient is w_k everywhere.
        let w = [0.5, -2.0, 1.25];
        let map = Array3::from_shape_fn((3, 5, 4), |(k, t, f)| ((k * 7 + t * 3 + f) % 5) as f64 - 1.0);
        let grad = Array3::from_shape_fn((3, 5, 4), |(k, _, _)| w[k]);
        let cam = cam_from_activations(&acts(map.clone(), grad));
        let expected = Array2::from_shape_fn((5, 4), |(t, f)| {
            (0..3).map(|k| w[k] * map[[k, t, f]]).sum::<f64>().max(0.0)
        });
        let (lo, hi) = expected
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        for (c, e) in cam.iter().zip(expected.iter()) {
            assert!((c - (e - lo) / (hi - lo)).abs() < 1e-12);
        }
    }

    #[test]
    fn bilinear_resize_identity_and_constant() {
        let src = Array2::from_shape_fn((3, 5), |(i, j)| (i * 5 + j) as f64);
        assert_eq!(bilinear_resize(&src, 3, 5), src);
        let flat = Array2::from_elem((2, 2), 0.7);
        assert!(bilinear_resize(&flat, 9, 5).iter().all(|v| (v - 0.7).abs() < 1e-15));
        // Upsampling a ramp by two keeps it monotone with the half-pixel offsets.
        let ramp = Array2::from_shape_fn((1, 4), |(_, j)| j as f64);
        let up = bilinear_resize(&ramp, 1, 8);
        let row: Vec<f64> = up.iter().copied().collect();
        assert_eq!(row, vec![0.0, 0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3.0]);
    }

    #[test]
    fn percentile_interpolates_linearly() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 100.0), 4.0);
        assert!((percentile(&v, 50.0) - 2.5).abs() < 1e-15);
    }

    fn heatmap(values: Array2<f64>) -> Heatmap {
        Heatmap {
            values,
            frame_params: StftParams::default(),
            sample_rate: 16000,
        }
    }

    #[test]
    fn full_percentage_covers_every_frame() {
        let h = heatmap(Array2::from_shape_fn((61, 8), |(t, f)| ((t + f) % 3) as f64 / 2.0));
        let mask = heatmap_to_mask(&h, 100.0, 32000, 0.1, 0).unwrap();
        assert_eq!(mask.segments, vec![Segment::new(0, 60 * 512 + 1024)]);
    }

    #[test]
    fn single_peak_yields_one_segment_around_it() {
        let mut values = Array2::zeros((61, 8));
        values[[30, 4]] = 1.0;
        values[[31, 4]] = 0.4;
        let mask = heatmap_to_mask(&heatmap(values), 10.0, 32000, 0.1, 0).unwrap();
        // The percentile is 0 here; zero frames must not be selected.
        assert_eq!(mask.segments.len(), 1);
        let peak = 30 * 512;
        assert!(mask.segments[0].start <= peak && mask.segments[0].end >= peak + 1024);
    }

    #[test]
    fn all_zero_heatmap_is_an_error() {
        let h = heatmap(Array2::zeros((61, 8)));
        assert!(matches!(heatmap_to_mask(&h, 10.0, 32000, 0.1, 0), Err(Error::EmptyMask)));
        let h = heatmap(Array2::ones((61, 8)));
        assert!(heatmap_to_mask(&h, 0.0, 32000, 0.1, 0).is_err());
    }

    #[test]
    fn short_runs_are_dilated_and_merged() {
        assert_eq!(dilate(Segment::new(100, 200), 400, 1000), Segment::new(0, 400));
        assert_eq!(dilate(Segment::new(900, 1000), 400, 1000), Segment::new(600, 1000));
        assert_eq!(dilate(Segment::new(400, 500), 300, 1000), Segment::new(300, 600));
        assert_eq!(
            merge_segments(vec![Segment::new(5, 9), Segment::new(0, 5), Segment::new(20, 30), Segment::new(25, 26)]),
            vec![Segment::new(0, 9), Segment::new(20, 30)]
        );
    }
}
