use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::LabeledClip;
use crate::audio::{build_mask, zero_mask, Segment, Waveform, DEFAULT_TAPER_SHAPE};
use super::net::{self, NetParams};
use super::toy::{ToyArchitecture, ToyModel};
use super::ProbVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Probability of zero-masking a random stretch of background per clip and epoch.
    pub mask_augment: f64,
    /// Probability of replacing the annotated interval with background and
    /// training towards the uniform distribution instead of the label.
    pub void_augment: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 2e-3,
            batch_size: 32,
            seed: 0,
            mask_augment: 0.5,
            void_augment: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean cross-entropy over each epoch, measured before each batch's update.
    pub loss_history: Vec<f64>,
    pub train_accuracy: f64,
}

struct Adam {
    m: NetParams,
    v: NetParams,
    step: i32,
}

impl Adam {
    fn update(&mut self, params: &mut NetParams, grad: &NetParams, lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.step += 1;
        let c1 = 1.0 - B1.powi(self.step);
        let c2 = 1.0 - B2.powi(self.step);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(grad.tensors());
        for (((p, m), v), g) in tensors {
            for i in 0..p.len() {
                m[i] = B1 * m[i] + (1.0 - B1) * g[i];
                v[i] = B2 * v[i] + (1.0 - B2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
            }
        }
    }
}

/// Mini-batch Adam on cross-entropy. Deterministic given `cfg.seed`.
pub fn train_toy(data: &[LabeledClip], arch: ToyArchitecture, cfg: &TrainConfig) -> Result<(ToyModel, TrainReport)> {
    if data.is_empty() {
        return Err(Error::InvalidParameter("training data is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidParameter("batch size must be positive".into()));
    }
    let mut model = ToyModel::new(arch, cfg.seed)?;
    for clip in data {
        if clip.label >= model.architecture().classes {
            return Err(Error::InvalidLabel {
                label: clip.label,
                classes: model.architecture().classes,
            });
        }
    }

    let features: Vec<(usize, Vec<f64>)> = data
        .iter()
        .map(|clip| model.log_mel(&clip.waveform))
        .collect::<Result<_>>()?;
    let count: usize = features.iter().map(|(_, f)| f.len()).sum();
    let mean = features.iter().flat_map(|(_, f)| f).sum::<f64>() / count as f64;
    let var = features
        .iter()
        .flat_map(|(_, f)| f)
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / count as f64;
    model.set_standardization(mean, var.sqrt().max(1e-12));
    let inputs: Vec<(usize, Vec<f64>)> = features
        .into_iter()
        .map(|(t, f)| (t, model.standardize(&f)))
        .collect();

    let shape = model.shape();
    let mut adam = Adam {
        m: model.params.zeros_like(),
        v: model.params.zeros_like(),
        step: 0,
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut augment_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    augment_rng.set_stream(2);
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = model.params.zeros_like();
            for &i in batch {
                let void = augment_rng.random_bool(cfg.void_augment.clamp(0.0, 1.0));
                let augmented = if void {
                    let (t, f) = model.log_mel(&without_event(&data[i])?)?;
                    Some((t, model.standardize(&f)))
                } else if augment_rng.random_bool(cfg.mask_augment.clamp(0.0, 1.0)) {
                    background_gap(&data[i], &mut augment_rng)
                        .map(|gap| -> Result<_> {
                            let mask = build_mask(&[gap], data[i].waveform.len(), DEFAULT_TAPER_SHAPE)?;
                            let (t, f) = model.log_mel(&zero_mask(&data[i].waveform, &mask)?)?;
                            Ok((t, model.standardize(&f)))
                        })
                        .transpose()?
                } else {
                    None
                };
                let (t, input) = augmented.as_ref().unwrap_or(&inputs[i]);
                let trace = net::forward(&model.params, shape, input.clone(), *t);
                let probs = ProbVector::from_logits(&trace.logits);
                let classes = probs.len();
                let target = |c: usize| match void {
                    true => 1.0 / classes as f64,
                    false => f64::from(u8::from(c == data[i].label)),
                };
                epoch_loss -= (0..classes)
                    .map(|c| target(c) * probs.get(c).max(f64::MIN_POSITIVE).ln())
                    .sum::<f64>();
                let dlogits: Vec<f64> = probs
                    .as_slice()
                    .iter()
                    .enumerate()
                    .map(|(c, p)| (p - target(c)) / batch.len() as f64)
                    .collect();
                let g = net::backward(&model.params, shape, &trace, &dlogits, true);
                grad.add_assign(g.params.as_ref().expect("requested parameter gradients"));
            }
            adam.update(&mut model.params, &grad, cfg.learning_rate);
        }
        let mean_loss = epoch_loss / data.len() as f64;
        log::debug!("epoch {epoch}: mean loss {mean_loss:.4}");
        loss_history.push(mean_loss);
    }

    let correct = inputs
        .iter()
        .zip(data)
        .filter(|((t, input), clip)| {
            let trace = net::forward(&model.params, shape, input.clone(), *t);
            ProbVector::from_logits(&trace.logits).argmax() == clip.label
        })
        .count();
    Ok((
        model,
        TrainReport {
            loss_history,
            train_accuracy: correct as f64 / data.len() as f64,
        },
    ))
}

/// The clip with its annotated interval cross-faded into background taken,
/// cyclically, from the samples outside the interval.
fn without_event(clip: &LabeledClip) -> Result<Waveform> {
    let x = &clip.waveform;
    let outside: Vec<f64> = x.samples[..clip.interval.start]
        .iter()
        .chain(&x.samples[clip.interval.end..])
        .copied()
        .collect();
    if outside.is_empty() {
        return Ok(Waveform::zeros(x.len(), x.sample_rate));
    }
    let mask = build_mask(&[clip.interval], x.len(), DEFAULT_TAPER_SHAPE)?;
    let mut samples = x.samples.clone();
    for (k, n) in (clip.interval.start..clip.interval.end).enumerate() {
        let m = mask.envelope[n];
        samples[n] = (1.0 - m) * samples[n] + m * outside[k % outside.len()];
    }
    Waveform::new(samples, x.sample_rate)
}

/// A stretch of 0.1 to 0.5 s lying entirely outside the clip's annotated interval.
fn background_gap(clip: &LabeledClip, rng: &mut ChaCha8Rng) -> Option<Segment> {
    let rate = clip.waveform.sample_rate as f64;
    let len = clip.waveform.len();
    let want = (rng.random_range(0.1..0.5) * rate) as usize;
    let sides = [
        Segment::new(0, clip.interval.start),
        Segment::new(clip.interval.end, len),
    ];
    let room: Vec<Segment> = sides.into_iter().filter(|s| s.len() > 0).collect();
    let total: usize = room.iter().map(Segment::len).sum();
    if total == 0 {
        return None;
    }
    let mut pick = rng.random_range(0..total);
    let side = room
        .iter()
        .find(|s| {
            if pick < s.len() {
                true
            } else {
                pick -= s.len();
                false
            }
        })
        .copied()?;
    let size = want.min(side.len());
    let start = side.start + rng.random_range(0..=side.len() - size);
    Some(Segment::new(start, start + size))
}
