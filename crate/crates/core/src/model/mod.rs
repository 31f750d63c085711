//! Target classifiers. [`ModelHandle`] is the seam every attack talks to: it
//! counts queries and gates gradient access behind the white-box capability.

pub mod dataset;
mod front;
mod net;
pub mod toy;
pub mod train;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::audio::{StftParams, Waveform};
use crate::error::{Error, Result};

pub use dataset::{read_dataset, synth_dataset, write_dataset, ClipClass, LabeledClip, SynthDatasetConfig};
pub use toy::{ToyArchitecture, ToyModel};
pub use train::{train_toy, TrainConfig, TrainReport};

/// Class probabilities. Entries are non-negative and sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        Self(exp.into_iter().map(|e| e / sum).collect())
    }

    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        let sum: f64 = probabilities.iter().sum();
        if probabilities.is_empty()
            || probabilities.iter().any(|p| !(*p >= 0.0))
            || (sum - 1.0).abs() > 1e-6
        {
            return Err(Error::InvalidParameter(format!(
                "not a probability vector: {probabilities:?}"
            )));
        }
        Ok(Self(probabilities))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    /// Most probable class; ties go to the lower index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.0.iter().enumerate() {
            if *p > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// `p_y - max_{c != y} p_c`; negative exactly when `y` is not the argmax.
    pub fn margin(&self, y: usize) -> f64 {
        let other = self
            .0
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != y)
            .map(|(_, p)| *p)
            .fold(f64::NEG_INFINITY, f64::max);
        self.0[y] - other
    }

    pub fn cross_entropy(&self, y: usize) -> f64 {
        -self.0[y].max(f64::MIN_POSITIVE).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    BlackBox,
    WhiteBox,
}

/// Feature map of a named layer and the gradient of one class logit with respect to it.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivations {
    /// `channels x time x frequency`
    pub feature_map: Array3<f64>,
    pub gradient: Array3<f64>,
    /// Time-frequency resolution of the model input the map was computed from.
    pub input_frames: usize,
    pub input_bins: usize,
}

/// Output of one gradient query.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientQuery {
    pub probs: ProbVector,
    pub loss: f64,
    /// d(cross-entropy)/d(sample), same length as the input.
    pub gradient: Vec<f64>,
}

/// Anything that maps audio to class scores.
pub trait Classifier: Send + Sync {
    fn class_count(&self) -> usize;
    fn sample_rate(&self) -> u32;
    /// Shortest input the classifier accepts.
    fn min_samples(&self) -> usize;
    fn logits(&self, x: &Waveform) -> Result<Vec<f64>>;
}

/// A classifier that also exposes gradients and internal activations.
pub trait Differentiable: Classifier {
    fn layer_names(&self) -> Vec<String>;
    /// Analysis frames that the feature maps' time axis is aligned to.
    fn frame_params(&self) -> StftParams;
    /// Logits and the cross-entropy gradient with respect to raw samples.
    fn ce_gradient(&self, x: &Waveform, y: usize) -> Result<(Vec<f64>, Vec<f64>)>;
    fn layer_activations(&self, x: &Waveform, y: usize, layer: &str) -> Result<LayerActivations>;
}

#[derive(Clone)]
enum Backend {
    BlackBox(Arc<dyn Classifier>),
    WhiteBox(Arc<dyn Differentiable>),
}

/// Query-counting access to a target model.
pub struct ModelHandle {
    backend: Backend,
    queries: AtomicUsize,
}

impl std::fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelHandle")
            .field("capability", &self.capability())
            .field("queries", &self.queries())
            .finish()
    }
}

impl ModelHandle {
    pub fn black_box(model: Arc<dyn Classifier>) -> Self {
        Self {
            backend: Backend::BlackBox(model),
            queries: AtomicUsize::new(0),
        }
    }

    pub fn white_box(model: Arc<dyn Differentiable>) -> Self {
        Self {
            backend: Backend::WhiteBox(model),
            queries: AtomicUsize::new(0),
        }
    }

    /// Same model, gradients withheld, fresh counter.
    pub fn restricted(&self) -> Self {
        let classifier: Arc<dyn Classifier> = match &self.backend {
            Backend::BlackBox(m) => m.clone(),
            Backend::WhiteBox(m) => {
                let m = m.clone();
                Arc::new(Restricted(m))
            }
        };
        Self::black_box(classifier)
    }

    pub fn capability(&self) -> Capability {
        match self.backend {
            Backend::BlackBox(_) => Capability::BlackBox,
            Backend::WhiteBox(_) => Capability::WhiteBox,
        }
    }

    fn classifier(&self) -> &dyn Classifier {
        match &self.backend {
            Backend::BlackBox(m) => m.as_ref(),
            Backend::WhiteBox(m) => m.as_ref(),
        }
    }

    fn differentiable(&self) -> Result<&dyn Differentiable> {
        match &self.backend {
            Backend::WhiteBox(m) => Ok(m.as_ref()),
            Backend::BlackBox(_) => Err(Error::CapabilityRequired),
        }
    }

    pub fn class_count(&self) -> usize {
        self.classifier().class_count()
    }

    pub fn sample_rate(&self) -> u32 {
        self.classifier().sample_rate()
    }

    pub fn queries(&self) -> usize {
        self.queries.load(Ordering::SeqCst)
    }

    pub fn layer_names(&self) -> Result<Vec<String>> {
        Ok(self.differentiable()?.layer_names())
    }

    pub fn frame_params(&self) -> Result<StftParams> {
        Ok(self.differentiable()?.frame_params())
    }

    fn check_input(&self, x: &Waveform) -> Result<()> {
        let m = self.classifier();
        if x.sample_rate != m.sample_rate() {
            return Err(Error::SampleRateMismatch {
                expected: m.sample_rate(),
                actual: x.sample_rate,
            });
        }
        if x.len() < m.min_samples() {
            return Err(Error::TrackTooShort {
                len: x.len(),
                window: m.min_samples(),
            });
        }
        Ok(())
    }

    fn check_label(&self, y: usize) -> Result<()> {
        let classes = self.class_count();
        if y >= classes {
            return Err(Error::InvalidLabel { label: y, classes });
        }
        Ok(())
    }

    fn count(&self) {
        self.queries.fetch_add(1, Ordering::SeqCst);
    }

    pub fn predict(&self, x: &Waveform) -> Result<ProbVector> {
        self.check_input(x)?;
        self.count();
        Ok(ProbVector::from_logits(&self.classifier().logits(x)?))
    }

    pub fn ce_loss(&self, x: &Waveform, y: usize) -> Result<f64> {
        self.check_label(y)?;
        Ok(self.predict(x)?.cross_entropy(y))
    }

    pub fn input_gradient(&self, x: &Waveform, y: usize) -> Result<GradientQuery> {
        let model = self.differentiable()?;
        self.check_label(y)?;
        self.check_input(x)?;
        self.count();
        let (logits, gradient) = model.ce_gradient(x, y)?;
        let probs = ProbVector::from_logits(&logits);
        Ok(GradientQuery {
            loss: probs.cross_entropy(y),
            probs,
            gradient,
        })
    }

    pub fn layer_activations(&self, x: &Waveform, y: usize, layer: &str) -> Result<LayerActivations> {
        let model = self.differentiable()?;
        self.check_label(y)?;
        self.check_input(x)?;
        self.count();
        model.layer_activations(x, y, layer)
    }
}

struct Restricted(Arc<dyn Differentiable>);

impl Classifier for Restricted {
    fn class_count(&self) -> usize {
        self.0.class_count()
    }
    fn sample_rate(&self) -> u32 {
        self.0.sample_rate()
    }
    fn min_samples(&self) -> usize {
        self.0.min_samples()
    }
    fn logits(&self, x: &Waveform) -> Result<Vec<f64>> {
        self.0.logits(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prob_vector_identities() {
        let p = ProbVector::from_logits(&[0.0, 0.0, 0.0]);
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p.cross_entropy(1) - 3f64.ln()).abs() < 1e-12);
        assert_eq!(p.margin(0), 0.0);

        let certain = ProbVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(certain.cross_entropy(0), 0.0);
        assert_eq!(certain.margin(0), 1.0);

        let wrong = ProbVector::new(vec![0.3, 0.5, 0.2]).unwrap();
        assert!(wrong.margin(0) < 0.0);
        assert_ne!(wrong.argmax(), 0);

        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![-0.1, 1.1]).is_err());
    }

    #[test]
    fn softmax_survives_extreme_logits() {
        let p = ProbVector::from_logits(&[1000.0, -1000.0, 0.0]);
        assert_eq!(p.argmax(), 0);
        assert!(p.as_slice().iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}
