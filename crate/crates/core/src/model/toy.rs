use std::path::Path;

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::front::LogMel;
use super::net::{self, NetParams, Shape};
use super::{Classifier, Differentiable, LayerActivations, ProbVector};
use crate::audio::{StftParams, Waveform};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "toy-cnn";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const LAYER_NAMES: [&str; 2] = ["conv1", "conv2"];

/// Fixed layout of the reference classifier: log-mel input, two 3x3
/// conv + ReLU + 2x2 max-pool blocks, global average pooling, dense head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyArchitecture {
    pub sample_rate: u32,
    pub stft: StftParams,
    pub n_mels: usize,
    pub floor_value: f64,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub classes: usize,
    /// Affine standardization applied to log-mel values before the first conv.
    pub input_mean: f64,
    pub input_std: f64,
}

impl Default for ToyArchitecture {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            stft: StftParams::default(),
            n_mels: 40,
            floor_value: 1e-5,
            conv1_channels: 8,
            conv2_channels: 16,
            classes: 3,
            input_mean: 0.0,
            input_std: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyModel {
    arch: ToyArchitecture,
    pub(crate) params: NetParams,
    front: LogMel,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    version: u32,
    architecture: ToyArchitecture,
    parameters: NetParams,
}

impl ToyModel {
    pub fn new(arch: ToyArchitecture, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = Self::shape_of(&arch)?;
        let params = NetParams::init(shape, &mut rng);
        Self::from_parts(arch, params)
    }

    fn shape_of(arch: &ToyArchitecture) -> Result<Shape> {
        if arch.n_mels < 4 || arch.conv1_channels == 0 || arch.conv2_channels == 0 || arch.classes < 2 {
            return Err(Error::InvalidParameter(format!(
                "unsupported toy architecture {arch:?}"
            )));
        }
        if !(arch.input_std > 0.0) {
            return Err(Error::InvalidParameter("input_std must be positive".into()));
        }
        Ok(Shape {
            c1: arch.conv1_channels,
            c2: arch.conv2_channels,
            classes: arch.classes,
            bins: arch.n_mels,
        })
    }

    pub(crate) fn from_parts(arch: ToyArchitecture, params: NetParams) -> Result<Self> {
        let shape = Self::shape_of(&arch)?;
        let expected = [
            shape.c1 * 9,
            shape.c1,
            shape.c2 * shape.c1 * 9,
            shape.c2,
            shape.classes * shape.feature_len(),
            shape.classes,
        ];
        for (tensor, len) in params.tensors().iter().zip(expected) {
            if tensor.len() != len {
                return Err(Error::InvalidParameter(format!(
                    "parameter tensor has {} entries, architecture needs {len}",
                    tensor.len()
                )));
            }
        }
        let front = LogMel::new(arch.stft, arch.n_mels, arch.floor_value, arch.sample_rate)?;
        Ok(Self { arch, params, front })
    }

    pub fn architecture(&self) -> &ToyArchitecture {
        &self.arch
    }

    pub(crate) fn shape(&self) -> Shape {
        Self::shape_of(&self.arch).expect("validated at construction")
    }

    pub(crate) fn set_standardization(&mut self, mean: f64, std: f64) {
        self.arch.input_mean = mean;
        self.arch.input_std = std;
    }

    /// Raw (unstandardized) log-mel frames, row-major `frames x n_mels`.
    pub fn log_mel(&self, x: &Waveform) -> Result<(usize, Vec<f64>)> {
        let (t, v, _) = self.front.forward(x)?;
        Ok((t, v))
    }

    pub(crate) fn standardize(&self, log_mel: &[f64]) -> Vec<f64> {
        log_mel
            .iter()
            .map(|v| (v - self.arch.input_mean) / self.arch.input_std)
            .collect()
    }

    fn trace(&self, x: &Waveform) -> Result<(net::Trace, super::front::LogMelTrace)> {
        let (t, mel, front_trace) = self.front.forward(x)?;
        if t < 4 {
            return Err(Error::TrackTooShort {
                len: x.len(),
                window: self.min_samples(),
            });
        }
        let input = self.standardize(&mel);
        Ok((net::forward(&self.params, self.shape(), input, t), front_trace))
    }

    fn layer_index(layer: &str) -> Result<usize> {
        LAYER_NAMES
            .iter()
            .position(|l| *l == layer)
            .map(|i| i + 1)
            .ok_or_else(|| Error::UnknownLayer(layer.to_string()))
    }

    /// Logits recomputed with the activation of `layer` replaced by `map`.
    pub fn logits_from_layer(&self, layer: &str, map: &Array3<f64>) -> Result<Vec<f64>> {
        let index = Self::layer_index(layer)?;
        let (_, t, _) = map.dim();
        let t_in = if index == 1 { t } else { t * 2 };
        let flat: Vec<f64> = map.iter().copied().collect();
        Ok(net::logits_from_layer(&self.params, self.shape(), index, &flat, t_in))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let checkpoint = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            architecture: self.arch.clone(),
            parameters: self.params.clone(),
        };
        std::fs::write(path, serde_json::to_vec(&checkpoint)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let checkpoint: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        if checkpoint.format != CHECKPOINT_FORMAT || checkpoint.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported checkpoint {} v{}",
                checkpoint.format, checkpoint.version
            )));
        }
        Self::from_parts(checkpoint.architecture, checkpoint.parameters)
    }

    /// Probabilities without going through a counting handle (training and evaluation helpers).
    pub fn probabilities(&self, x: &Waveform) -> Result<ProbVector> {
        Ok(ProbVector::from_logits(&self.logits(x)?))
    }
}

impl Classifier for ToyModel {
    fn class_count(&self) -> usize {
        self.arch.classes
    }

    fn sample_rate(&self) -> u32 {
        self.arch.sample_rate
    }

    fn min_samples(&self) -> usize {
        self.arch.stft.window_length + 3 * self.arch.stft.hop_length
    }

    fn logits(&self, x: &Waveform) -> Result<Vec<f64>> {
        Ok(self.trace(x)?.0.logits)
    }
}

impl Differentiable for ToyModel {
    fn layer_names(&self) -> Vec<String> {
        LAYER_NAMES.iter().map(|s| s.to_string()).collect()
    }

    fn frame_params(&self) -> StftParams {
        self.arch.stft
    }

    fn ce_gradient(&self, x: &Waveform, y: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let (trace, front_trace) = self.trace(x)?;
        let probs = ProbVector::from_logits(&trace.logits);
        let dlogits: Vec<f64> = probs
            .as_slice()
            .iter()
            .enumerate()
            .map(|(c, p)| if c == y { p - 1.0 } else { *p })
            .collect();
        let grads = net::backward(&self.params, self.shape(), &trace, &dlogits, false);
        let dmel: Vec<f64> = grads.input.iter().map(|g| g / self.arch.input_std).collect();
        Ok((trace.logits, self.front.backward(&front_trace, &dmel)))
    }

    fn layer_activations(&self, x: &Waveform, y: usize, layer: &str) -> Result<LayerActivations> {
        let index = Self::layer_index(layer)?;
        let (trace, _) = self.trace(x)?;
        let mut dlogits = vec![0.0; self.arch.classes];
        dlogits[y] = 1.0;
        let grads = net::backward(&self.params, self.shape(), &trace, &dlogits, false);
        let shape = self.shape();
        let (dims, map, grad) = match index {
            1 => ((shape.c1, trace.t, trace.f), trace.a1.clone(), grads.a1),
            _ => ((shape.c2, trace.t2(), trace.f2()), trace.a2.clone(), grads.a2),
        };
        Ok(LayerActivations {
            feature_map: Array3::from_shape_vec(dims, map).expect("trace dims"),
            gradient: Array3::from_shape_vec(dims, grad).expect("trace dims"),
            input_frames: trace.t,
            input_bins: trace.f,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelHandle;
    use rand::Rng;
    use std::sync::Arc;

    fn noise(seed: u64, len: usize) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.random_range(-0.3..0.3)).collect(), 16000).unwrap()
    }

    #[test]
    fn zero_head_has_zero_gradient() {
        let mut model = ToyModel::new(ToyArchitecture::default(), 1).unwrap();
        model.params.dense_w.iter_mut().for_each(|w| *w = 0.0);
        let handle = ModelHandle::white_box(Arc::new(model));
        let x = noise(2, 16000);
        let q = handle.input_gradient(&x, 1).unwrap();
        assert_eq!(q.gradient.len(), x.len());
        assert!(q.gradient.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn layer_shapes_follow_architecture() {
        let model = ToyModel::new(ToyArchitecture::default(), 1).unwrap();
        let x = noise(3, 32000);
        let a2 = model.layer_activations(&x, 0, "conv2").unwrap();
        assert_eq!(a2.feature_map.dim(), (16, 30, 20));
        assert_eq!(a2.gradient.dim(), a2.feature_map.dim());
        let a1 = model.layer_activations(&x, 0, "conv1").unwrap();
        assert_eq!(a1.feature_map.dim(), (8, 61, 40));
        assert_eq!((a1.input_frames, a1.input_bins), (61, 40));
        assert!(matches!(
            model.layer_activations(&x, 0, "fc"),
            Err(Error::UnknownLayer(_))
        ));
        let again = model.layer_activations(&x, 0, "conv2").unwrap();
        assert_eq!(again, a2);
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = ToyModel::new(ToyArchitecture::default(), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let back = ToyModel::load(&path).unwrap();
        assert_eq!(back.params, model.params);
        assert_eq!(back.arch, model.arch);
        assert!(matches!(ToyModel::load(dir.path().join("missing.json")), Err(Error::MissingFile(_))));
    }
}
