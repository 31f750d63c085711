use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WavWarning {
    DownmixedChannels(u16),
    ClippedSamples(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedWav {
    pub waveform: Waveform,
    pub warnings: Vec<WavWarning>,
}

fn map_hound(err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::Io(e),
        hound::Error::FormatError(msg) => Error::MalformedHeader(msg.to_string()),
        hound::Error::Unsupported => Error::UnsupportedEncoding("unsupported WAV feature".into()),
        hound::Error::TooWide => Error::UnsupportedEncoding("sample width too large".into()),
        hound::Error::InvalidSampleFormat => {
            Error::UnsupportedEncoding("invalid sample format".into())
        }
        other => Error::MalformedHeader(other.to_string()),
    }
}

/// Reads PCM16 or float32 WAV audio, averaging multi-channel input to mono.
pub fn load_wav(path: impl AsRef<Path>) -> Result<LoadedWav> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = WavReader::open(path).map_err(map_hound)?;
    let spec = reader.spec();
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(map_hound)?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(map_hound)?,
        (format, bits) => {
            return Err(Error::UnsupportedEncoding(format!("{format:?} {bits}-bit")));
        }
    };
    let channels = spec.channels.max(1) as usize;
    let mut warnings = Vec::new();
    let samples = if channels == 1 {
        interleaved
    } else {
        log::warn!("{}: averaging {channels} channels to mono", path.display());
        warnings.push(WavWarning::DownmixedChannels(spec.channels));
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    Ok(LoadedWav {
        waveform: Waveform::new(samples, spec.sample_rate)?,
        warnings,
    })
}

/// Writes mono audio. Samples outside [-1, 1] are clipped and reported.
pub fn save_wav(w: &Waveform, path: impl AsRef<Path>, encoding: WavEncoding) -> Result<Vec<WavWarning>> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => SampleFormat::Int,
            WavEncoding::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec).map_err(map_hound)?;
    let mut clipped = 0usize;
    for &s in &w.samples {
        let v = if s > 1.0 || s < -1.0 {
            clipped += 1;
            s.clamp(-1.0, 1.0)
        } else {
            s
        };
        match encoding {
            WavEncoding::Pcm16 => {
                let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(q).map_err(map_hound)?;
            }
            WavEncoding::Float32 => writer.write_sample(v as f32).map_err(map_hound)?,
        }
    }
    writer.finalize().map_err(map_hound)?;
    let mut warnings = Vec::new();
    if clipped > 0 {
        log::warn!("{}: clipped {clipped} samples to [-1, 1]", path.display());
        warnings.push(WavWarning::ClippedSamples(clipped));
    }
    Ok(warnings)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Minimal canonical RIFF/WAVE bytes, written by hand.
    fn pcm16_bytes(channels: u16, rate: u32, samples: &[i16]) -> Vec<u8> {
        let data_len = (samples.len() * 2) as u32;
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(36 + data_len).to_le_bytes());
        b.extend_from_slice(b"WAVEfmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&channels.to_le_bytes());
        b.extend_from_slice(&rate.to_le_bytes());
        b.extend_from_slice(&(rate * channels as u32 * 2).to_le_bytes());
        b.extend_from_slice(&(channels * 2).to_le_bytes());
        b.extend_from_slice(&16u16.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&data_len.to_le_bytes());
        for s in samples {
            b.extend_from_slice(&s.to_le_bytes());
        }
        b
    }

    #[test]
    fn decodes_handwritten_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("max.wav");
        std::fs::write(&path, pcm16_bytes(1, 16000, &[32767, -32768, 0, 16384])).unwrap();
        let loaded = load_wav(&path).unwrap();
        assert_eq!(loaded.waveform.sample_rate, 16000);
        assert_eq!(loaded.waveform.samples, vec![32767.0 / 32768.0, -1.0, 0.0, 0.5]);
        assert!(loaded.warnings.is_empty());
    }

    #[test]
    fn mono_pcm16_length() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mono.wav");
        let samples: Vec<i16> = (0..8000).map(|n| (n % 200) as i16 * 10).collect();
        std::fs::write(&path, pcm16_bytes(1, 16000, &samples)).unwrap();
        let w = load_wav(&path).unwrap().waveform;
        assert_eq!(w.len(), 8000);
        assert_eq!(w.sample_rate, 16000);
    }

    #[test]
    fn opposite_stereo_channels_cancel() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let mut inter = Vec::new();
        for n in 0..1000i16 {
            let v = (n * 17) % 3000 - 1500;
            inter.push(v);
            inter.push(-v);
        }
        std::fs::write(&path, pcm16_bytes(2, 8000, &inter)).unwrap();
        let loaded = load_wav(&path).unwrap();
        assert!(loaded.waveform.samples.iter().all(|s| *s == 0.0));
        assert_eq!(loaded.warnings, vec![WavWarning::DownmixedChannels(2)]);
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_wav(dir.path().join("nope.wav")),
            Err(Error::MissingFile(_))
        ));
        let bad = dir.path().join("bad.wav");
        std::fs::write(&bad, b"RIFX\0\0\0\0garbage").unwrap();
        assert!(matches!(load_wav(&bad), Err(Error::MalformedHeader(_))));

        let int8 = dir.path().join("int8.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 8,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&int8, spec).unwrap();
        w.write_sample(3i8).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&int8), Err(Error::UnsupportedEncoding(_))));
    }

    #[test]
    fn round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<f64> = (0..500).map(|n| ((n as f32 * 0.37).sin() * 0.9) as f64).collect();
        let w = Waveform::new(samples, 22050).unwrap();
        let f32_path = dir.path().join("f.wav");
        save_wav(&w, &f32_path, WavEncoding::Float32).unwrap();
        assert_eq!(load_wav(&f32_path).unwrap().waveform, w);

        let half = Waveform::new(vec![0.5, -0.25, 0.3333], 8000).unwrap();
        let pcm_path = dir.path().join("p.wav");
        save_wav(&half, &pcm_path, WavEncoding::Pcm16).unwrap();
        let back = load_wav(&pcm_path).unwrap().waveform;
        for (a, b) in half.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn out_of_range_is_clipped_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.wav");
        let w = Waveform::new(vec![1.5, 0.0, -2.0], 8000).unwrap();
        let warnings = save_wav(&w, &path, WavEncoding::Float32).unwrap();
        assert_eq!(warnings, vec![WavWarning::ClippedSamples(2)]);
        assert_eq!(load_wav(&path).unwrap().waveform.samples, vec![1.0, 0.0, -1.0]);
    }
}
