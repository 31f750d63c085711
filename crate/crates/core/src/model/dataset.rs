//! Synthetic three-class corpus. Each clip is low-level background noise with
//! the class-defining sound confined to an annotated sub-interval, so
//! importance analysis has ground truth to aim at.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::{load_wav, save_wav, tukey_envelope, Segment, WavEncoding, Waveform};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipClass {
    HarmonicTone,
    FilteredNoise,
    Chirp,
}

impl ClipClass {
    pub const ALL: [ClipClass; 3] = [ClipClass::HarmonicTone, ClipClass::FilteredNoise, ClipClass::Chirp];

    pub fn label(self) -> usize {
        self as usize
    }

    pub fn from_label(label: usize) -> Option<Self> {
        Self::ALL.get(label).copied()
    }
}

pub const FUNDAMENTALS_HZ: [f64; 3] = [220.0, 330.0, 440.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthDatasetConfig {
    pub clips_per_class: usize,
    pub clip_seconds: f64,
    pub sample_rate: u32,
    pub seed: u64,
    /// Standard deviation of the white background noise.
    pub background_level: f64,
    pub min_interval_seconds: f64,
    pub max_interval_seconds: f64,
}

impl Default for SynthDatasetConfig {
    fn default() -> Self {
        Self {
            clips_per_class: 100,
            clip_seconds: 2.0,
            sample_rate: 16000,
            seed: 7,
            background_level: 0.0003,
            min_interval_seconds: 0.5,
            max_interval_seconds: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub waveform: Waveform,
    pub label: usize,
    pub class: ClipClass,
    /// Where the class-defining signal lives.
    pub interval: Segment,
    pub fundamental_hz: Option<f64>,
}

fn bandpass(input: &[f64], rate: f64, center: f64, q: f64) -> Vec<f64> {
    // RBJ cookbook band-pass, 0 dB peak gain.
    let w0 = 2.0 * PI * center / rate;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let (b0, b2) = (alpha / a0, -alpha / a0);
    let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    input
        .iter()
        .map(|&x| {
            let y = b0 * x + b2 * x2 - a1 * y1 - a2 * y2;
            x2 = x1;
            x1 = x;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

fn render_signal(class: ClipClass, len: usize, rate: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, Option<f64>) {
    match class {
        ClipClass::HarmonicTone => {
            let f0 = FUNDAMENTALS_HZ[rng.random_range(0..FUNDAMENTALS_HZ.len())];
            let phases: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            let amp = rng.random_range(0.25..0.45);
            let raw: Vec<f64> = (0..len)
                .map(|n| {
                    let t = n as f64 / rate;
                    (1..=4)
                        .map(|h| (2.0 * PI * f0 * h as f64 * t + phases[h - 1]).sin() / h as f64)
                        .sum()
                })
                .collect();
            let peak = raw.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            (raw.iter().map(|v| v * amp / peak).collect(), Some(f0))
        }
        ClipClass::FilteredNoise => {
            let center = rng.random_range(800.0..3000.0);
            let q = rng.random_range(1.5..3.0);
            let rms_target = rng.random_range(0.08..0.15);
            let white: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let band = bandpass(&white, rate, center, q);
            let rms = (band.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
            (band.iter().map(|v| v * rms_target / rms).collect(), None)
        }
        ClipClass::Chirp => {
            let f_start = rng.random_range(300.0..600.0);
            let f_end = rng.random_range(2000.0..3500.0);
            let amp = rng.random_range(0.25..0.45);
            let duration = len as f64 / rate;
            let sweep = (f_end - f_start) / duration;
            (
                (0..len)
                    .map(|n| {
                        let t = n as f64 / rate;
                        amp * (2.0 * PI * (f_start * t + 0.5 * sweep * t * t)).sin()
                    })
                    .collect(),
                None,
            )
        }
    }
}

/// Pure function of the config: the same seed yields bit-identical clips.
/// Classes are interleaved, `clips_per_class` of each.
pub fn synth_dataset(cfg: &SynthDatasetConfig) -> Result<Vec<LabeledClip>> {
    if cfg.clips_per_class == 0 {
        return Err(Error::InvalidParameter("clips_per_class must be at least 1".into()));
    }
    if !(cfg.min_interval_seconds > 0.0
        && cfg.max_interval_seconds >= cfg.min_interval_seconds
        && cfg.clip_seconds > cfg.max_interval_seconds + 0.2)
    {
        return Err(Error::InvalidParameter(format!(
            "interval range {}..{} s does not fit a {} s clip",
            cfg.min_interval_seconds, cfg.max_interval_seconds, cfg.clip_seconds
        )));
    }
    let rate = cfg.sample_rate as f64;
    let len = (cfg.clip_seconds * rate).round() as usize;
    let background = Normal::new(0.0, cfg.background_level)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let total = cfg.clips_per_class * ClipClass::ALL.len();
    (0..total)
        .map(|i| {
            let class = ClipClass::ALL[i % ClipClass::ALL.len()];
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let interval_len = if cfg.max_interval_seconds > cfg.min_interval_seconds {
                rng.random_range(cfg.min_interval_seconds..cfg.max_interval_seconds)
            } else {
                cfg.min_interval_seconds
            };
            let interval_len = (interval_len * rate).round() as usize;
            let margin = (0.1 * rate) as usize;
            let start = rng.random_range(margin..=len - interval_len - margin);
            let interval = Segment::new(start, start + interval_len);
            let (signal, fundamental_hz) = render_signal(class, interval_len, rate, &mut rng);
            let gate = tukey_envelope(interval_len, 0.1)?;
            let mut samples: Vec<f64> = (0..len).map(|_| background.sample(&mut rng)).collect();
            for ((dst, s), g) in samples[interval.start..interval.end].iter_mut().zip(&signal).zip(&gate) {
                *dst += s * g;
            }
            // Stored at float32 precision so WAV round trips are lossless.
            samples.iter_mut().for_each(|s| *s = *s as f32 as f64);
            Ok(LabeledClip {
                waveform: Waveform::new(samples, cfg.sample_rate)?,
                label: class.label(),
                class,
                interval,
                fundamental_hz,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
    pub class: ClipClass,
    pub interval: Segment,
    pub interval_seconds: [f64; 2],
    pub fundamental_hz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub config: SynthDatasetConfig,
    pub clips: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes clips as float32 WAV files next to a JSON manifest.
pub fn write_dataset(dir: impl AsRef<Path>, cfg: &SynthDatasetConfig, clips: &[LabeledClip]) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let rate = cfg.sample_rate as f64;
    let mut entries = Vec::with_capacity(clips.len());
    for (i, clip) in clips.iter().enumerate() {
        let name = PathBuf::from(format!("clip_{i:05}.wav"));
        save_wav(&clip.waveform, dir.join(&name), WavEncoding::Float32)?;
        entries.push(ManifestEntry {
            path: name,
            label: clip.label,
            class: clip.class,
            interval: clip.interval,
            interval_seconds: [clip.interval.start as f64 / rate, clip.interval.end as f64 / rate],
            fundamental_hz: clip.fundamental_hz,
        });
    }
    let manifest = DatasetManifest {
        config: cfg.clone(),
        clips: entries,
    };
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Vec<LabeledClip>> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(Error::MissingFile(manifest_path));
    }
    let manifest: DatasetManifest = serde_json::from_slice(&std::fs::read(&manifest_path)?)?;
    manifest
        .clips
        .into_iter()
        .map(|entry| {
            Ok(LabeledClip {
                waveform: load_wav(dir.join(&entry.path))?.waveform,
                label: entry.label,
                class: entry.class,
                interval: entry.interval,
                fundamental_hz: entry.fundamental_hz,
            })
        })
        .collect()
}
