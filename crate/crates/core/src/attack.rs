//! The two attack drivers: sign-gradient inpainting for white-box models and
//! CMA-ES search over the inpainter latent for black-box models.

use serde::{Deserialize, Serialize};

use crate::audio::{build_mask, lsd, Segment, SegmentMask, StftParams, Waveform, DEFAULT_TAPER_SHAPE};
use crate::cmaes::{cma_init, CmaParams};
use crate::error::{Error, Result};
use crate::importance::ImportanceReport;
use crate::inpaint::{InpainterHandle, Latent};
use crate::model::{ModelHandle, ProbVector};

/// The grid searched for `lambda_rec` and `lambda_att`.
pub const LAMBDA_GRID: [f64; 3] = [0.5, 1.0, 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fitness {
    /// `p_y - max_{c != y} p_c`
    Margin,
    /// `-ce(p, y)`
    NegCe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessCriterion {
    LabelFlip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    WhiteBox,
    BlackBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub lambda_rec: f64,
    pub lambda_att: f64,
    pub step_alpha: f64,
    pub max_iters: usize,
    /// Total model queries, importance analysis included.
    pub query_budget: usize,
    pub success_criterion: SuccessCriterion,
    pub fitness: Fitness,
    pub blend_beta: f64,
    pub seed: u64,
    /// Descend on `+lambda_att * ce` as literally written, which raises
    /// confidence in the true label. Off by default.
    pub literal_descent: bool,
    /// Initial CMA-ES step size in latent units.
    pub cma_sigma0: f64,
    pub taper_shape: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            lambda_rec: 1.0,
            lambda_att: 1.0,
            step_alpha: 0.001,
            max_iters: 10,
            query_budget: 1000,
            success_criterion: SuccessCriterion::LabelFlip,
            fitness: Fitness::Margin,
            blend_beta: 0.5,
            seed: 0,
            literal_descent: false,
            cma_sigma0: 1.0,
            taper_shape: DEFAULT_TAPER_SHAPE,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.lambda_rec >= 0.0 && self.lambda_att >= 0.0) || (self.lambda_rec == 0.0 && self.lambda_att == 0.0) {
            return bad(format!(
                "loss weights must be non-negative and not both zero, got {} and {}",
                self.lambda_rec, self.lambda_att
            ));
        }
        if !(self.step_alpha > 0.0) {
            return bad(format!("step size must be positive, got {}", self.step_alpha));
        }
        if !(0.0..=1.0).contains(&self.blend_beta) {
            return bad(format!("blend beta must lie in [0, 1], got {}", self.blend_beta));
        }
        if !(self.cma_sigma0 > 0.0) {
            return bad(format!("CMA-ES sigma0 must be positive, got {}", self.cma_sigma0));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub total: f64,
    pub rec: f64,
    pub att: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub mode: AttackMode,
    pub adversarial: Waveform,
    pub success: bool,
    pub original_label: usize,
    pub final_label: usize,
    /// Gradient iterations (white-box) or attack queries (black-box).
    pub iterations_or_queries: usize,
    /// Every model invocation made by the attack itself.
    pub attack_queries: usize,
    /// Queries spent beforehand on importance analysis.
    pub importance_queries: usize,
    pub loss_trace: Vec<LossPoint>,
    pub lsd_value: f64,
    pub mask: SegmentMask,
    pub config: AttackConfig,
    /// Strategy parameters when CMA-ES was used.
    pub cma: Option<CmaParams>,
}

/// Serializable summary of an [`AttackResult`]; the audio is stored separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackRecord {
    pub mode: AttackMode,
    pub success: bool,
    pub original_label: usize,
    pub final_label: usize,
    pub iterations_or_queries: usize,
    pub attack_queries: usize,
    pub importance_queries: usize,
    pub total_queries: usize,
    pub loss_trace: Vec<LossPoint>,
    pub lsd_db: f64,
    pub mask_segments: Vec<Segment>,
    pub taper_shape: f64,
    pub sample_rate: u32,
    pub samples: usize,
    pub config: AttackConfig,
    pub cma: Option<CmaParams>,
}

impl AttackResult {
    pub fn record(&self) -> AttackRecord {
        AttackRecord {
            mode: self.mode,
            success: self.success,
            original_label: self.original_label,
            final_label: self.final_label,
            iterations_or_queries: self.iterations_or_queries,
            attack_queries: self.attack_queries,
            importance_queries: self.importance_queries,
            total_queries: self.attack_queries + self.importance_queries,
            loss_trace: self.loss_trace.clone(),
            lsd_db: self.lsd_value,
            mask_segments: self.mask.segments.clone(),
            taper_shape: self.mask.taper_shape,
            sample_rate: self.adversarial.sample_rate,
            samples: self.adversarial.len(),
            config: self.config.clone(),
            cma: self.cma.clone(),
        }
    }

    /// Rebuilds a result from its record and the adversarial audio.
    pub fn from_record(record: AttackRecord, adversarial: Waveform) -> Result<Self> {
        if adversarial.len() != record.samples {
            return Err(Error::LengthMismatch {
                expected: record.samples,
                actual: adversarial.len(),
            });
        }
        let mask = build_mask(&record.mask_segments, record.samples, record.taper_shape)?;
        Ok(Self {
            mode: record.mode,
            adversarial,
            success: record.success,
            original_label: record.original_label,
            final_label: record.final_label,
            iterations_or_queries: record.iterations_or_queries,
            attack_queries: record.attack_queries,
            importance_queries: record.importance_queries,
            loss_trace: record.loss_trace,
            lsd_value: record.lsd_db,
            mask,
            config: record.config,
            cma: record.cma,
        })
    }
}

fn envelope_weight(mask: &SegmentMask) -> Result<f64> {
    let total: f64 = mask.envelope.iter().sum();
    if total <= 0.0 {
        return Err(Error::EmptyMask);
    }
    Ok(total)
}

/// Envelope-weighted mean squared error over the masked region.
pub fn rec_loss(x_inp: &Waveform, x: &Waveform, mask: &SegmentMask) -> Result<f64> {
    x.ensure_same_shape(x_inp)?;
    if mask.len() != x.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            actual: mask.len(),
        });
    }
    let total = envelope_weight(mask)?;
    Ok(x_inp
        .samples
        .iter()
        .zip(&x.samples)
        .zip(&mask.envelope)
        .map(|((a, b), m)| m * (a - b) * (a - b))
        .sum::<f64>()
        / total)
}

fn rec_gradient(x_inp: &Waveform, x: &Waveform, mask: &SegmentMask, total: f64) -> Vec<f64> {
    x_inp
        .samples
        .iter()
        .zip(&x.samples)
        .zip(&mask.envelope)
        .map(|((a, b), m)| 2.0 * m * (a - b) / total)
        .collect()
}

pub fn fitness_value(probs: &ProbVector, y: usize, kind: Fitness) -> f64 {
    match kind {
        Fitness::Margin => probs.margin(y),
        Fitness::NegCe => -probs.cross_entropy(y),
    }
}

/// Attack objective on one input; one model query.
pub fn attack_loss(m: &ModelHandle, x_inp: &Waveform, y: usize, kind: Fitness) -> Result<f64> {
    let probs = m.predict(x_inp)?;
    if y >= probs.len() {
        return Err(Error::InvalidLabel {
            label: y,
            classes: probs.len(),
        });
    }
    Ok(fitness_value(&probs, y, kind))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_mask(x: &Waveform, mask: &SegmentMask) -> Result<()> {
    if mask.len() != x.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            actual: mask.len(),
        });
    }
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(())
}

/// Sign-gradient adversarial inpainting inside `mask`.
///
/// Starts from a plain inpainting (`z = 0`), then per iteration takes one
/// gradient query, steps every masked sample by `step_alpha` against the sign
/// of the envelope-weighted gradient of `lambda_rec * rec - lambda_att * ce`,
/// and re-inpaints. Stops as soon as the queried prediction is wrong.
pub fn whitebox_attack(
    m: &ModelHandle,
    g: &InpainterHandle,
    x: &Waveform,
    mask: &SegmentMask,
    y: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    check_mask(x, mask)?;
    m.frame_params()?;
    let g = g.with_blend(cfg.blend_beta)?;
    let z = Latent::zeros(g.latent_dim());
    let total_weight = envelope_weight(mask)?;
    let start = m.queries();
    let att_sign = if cfg.literal_descent { 1.0 } else { -1.0 };

    let mut x_inp = g.inpaint(x, mask, &z)?;
    let mut trace = Vec::with_capacity(cfg.max_iters);
    let mut last_probs = None;
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        let q = m.input_gradient(&x_inp, y)?;
        let rec = rec_loss(&x_inp, x, mask)?;
        let att = att_sign * q.loss;
        trace.push(LossPoint {
            total: cfg.lambda_rec * rec + cfg.lambda_att * att,
            rec,
            att,
        });
        if q.probs.argmax() != y {
            last_probs = Some(q.probs);
            break;
        }
        iterations += 1;
        let rec_grad = rec_gradient(&x_inp, x, mask, total_weight);
        for (n, s) in x_inp.samples.iter_mut().enumerate() {
            let grad = cfg.lambda_rec * rec_grad[n] + cfg.lambda_att * att_sign * q.gradient[n];
            *s -= cfg.step_alpha * sign(grad * mask.envelope[n]);
        }
        x_inp = g.reinpaint(&x_inp, x, mask, &z)?;
    }
    let probs = match last_probs {
        Some(p) => p,
        None => m.predict(&x_inp)?,
    };
    let final_label = probs.argmax();
    Ok(AttackResult {
        mode: AttackMode::WhiteBox,
        lsd_value: lsd(x, &x_inp, &StftParams::default())?,
        adversarial: x_inp,
        success: final_label != y,
        original_label: y,
        final_label,
        iterations_or_queries: iterations,
        attack_queries: m.queries() - start,
        importance_queries: 0,
        loss_trace: trace,
        mask: mask.clone(),
        config: cfg.clone(),
        cma: None,
    })
}

struct Evaluated {
    audio: Waveform,
    probs: ProbVector,
    fitness: f64,
}

/// Importance-guided CMA-ES attack over the inpainter latent.
///
/// Touching ranked segments are merged into one gap (see
/// [`ImportanceReport::gaps`]) and gaps are taken in rank order. Each gets an
/// equal share of the budget left after importance analysis (unused queries
/// carry forward); the share covers the initial inpainting and the CMA-ES
/// candidates, whose fitness is measured on the re-inpainted audio. The best
/// audio found for a gap is kept before the next gap is attacked. Stops at
/// the first misclassification.
pub fn blackbox_attack(
    m: &ModelHandle,
    g: &InpainterHandle,
    x: &Waveform,
    report: &ImportanceReport,
    y: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    if report.ranked.is_empty() {
        return Err(Error::EmptyMask);
    }
    let g = g.with_blend(cfg.blend_beta)?;
    let dim = g.latent_dim();
    let start = m.queries();
    let mut remaining = cfg.query_budget.saturating_sub(report.queries_used);
    let segments = report.gaps();
    let mut current = x.clone();
    let mut union: Option<SegmentMask> = None;
    let mut best_probs: Option<ProbVector> = None;
    let mut trace = Vec::new();
    let cma_params = CmaParams::new(dim);

    if remaining == 0 {
        let mask = build_mask(&segments[..1], x.len(), cfg.taper_shape)?;
        let audio = g.inpaint(x, &mask, &g.sample_latent(cfg.seed))?;
        return Ok(AttackResult {
            mode: AttackMode::BlackBox,
            lsd_value: lsd(x, &audio, &StftParams::default())?,
            adversarial: audio,
            success: false,
            original_label: y,
            final_label: y,
            iterations_or_queries: 0,
            attack_queries: 0,
            importance_queries: report.queries_used,
            loss_trace: trace,
            mask,
            config: cfg.clone(),
            cma: Some(cma_params),
        });
    }

    for (i, seg) in segments.iter().enumerate() {
        let share = remaining / (segments.len() - i);
        if share == 0 {
            continue;
        }
        let mask = build_mask(&[*seg], x.len(), cfg.taper_shape)?;
        union = Some(match union {
            Some(u) => u.union(&mask)?,
            None => mask.clone(),
        });
        let union_mask = union.as_ref().expect("just set");
        let seed = cfg.seed.wrapping_add(i as u64);
        let z0 = g.sample_latent(seed);
        let base = current.clone();
        let initial = g.inpaint(&base, &mask, &z0)?;
        let evaluate = |audio: Waveform| -> Result<Evaluated> {
            let probs = m.predict(&audio)?;
            let fitness = fitness_value(&probs, y, cfg.fitness);
            Ok(Evaluated { audio, probs, fitness })
        };
        let mut best = evaluate(initial.clone())?;
        let mut spent = 1;
        let mut fooled = best.probs.argmax() != y;
        let mut state = cma_init(dim, z0.as_slice(), cfg.cma_sigma0, seed)?;
        while !fooled && spent < share {
            let mut candidates = state.ask();
            let mut complete = true;
            for c in candidates.iter_mut() {
                if spent == share {
                    complete = false;
                    break;
                }
                let audio = g.reinpaint(&initial, &base, &mask, &Latent::new(c.z.clone())?)?;
                let e = evaluate(audio)?;
                spent += 1;
                c.fitness = Some(e.fitness);
                let flipped = e.probs.argmax() != y;
                if e.fitness < best.fitness || (flipped && !fooled) {
                    best = e;
                }
                if flipped {
                    fooled = true;
                    complete = false;
                    break;
                }
            }
            trace.push(LossPoint {
                total: best.fitness,
                rec: rec_loss(&best.audio, x, union_mask)?,
                att: best.fitness,
            });
            if !complete {
                break;
            }
            state.tell(&candidates)?;
        }
        remaining -= spent;
        current = best.audio;
        best_probs = Some(best.probs);
        if fooled {
            break;
        }
    }

    let mask = union.ok_or(Error::InsufficientBudget {
        budget: cfg.query_budget,
        required: report.queries_used + 1,
    })?;
    let probs = best_probs.expect("at least one segment evaluated");
    let final_label = probs.argmax();
    let used = m.queries() - start;
    Ok(AttackResult {
        mode: AttackMode::BlackBox,
        lsd_value: lsd(x, &current, &StftParams::default())?,
        adversarial: current,
        success: final_label != y,
        original_label: y,
        final_label,
        iterations_or_queries: used,
        attack_queries: used,
        importance_queries: report.queries_used,
        loss_trace: trace,
        mask,
        config: cfg.clone(),
        cma: Some(cma_params),
    })
}

/// One clip to attack in a sweep.
#[derive(Debug, Clone)]
pub struct SweepItem {
    pub x: Waveform,
    pub mask: SegmentMask,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub lambda_rec: f64,
    pub lambda_att: f64,
    pub results: Vec<AttackResult>,
}

/// White-box attacks over every `(lambda_rec, lambda_att)` pair of [`LAMBDA_GRID`].
pub fn lambda_sweep(
    m: &ModelHandle,
    g: &InpainterHandle,
    items: &[SweepItem],
    cfg: &AttackConfig,
) -> Result<Vec<SweepEntry>> {
    let mut out = Vec::with_capacity(LAMBDA_GRID.len() * LAMBDA_GRID.len());
    for lambda_rec in LAMBDA_GRID {
        for lambda_att in LAMBDA_GRID {
            let run = AttackConfig {
                lambda_rec,
                lambda_att,
                ..cfg.clone()
            };
            let results = items
                .iter()
                .map(|it| whitebox_attack(m, g, &it.x, &it.mask, it.label, &run))
                .collect::<Result<Vec<_>>>()?;
            out.push(SweepEntry {
                lambda_rec,
                lambda_att,
                results,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::importance::ScoredSegment;
    use crate::model::{Classifier, Differentiable, LayerActivations};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn tone(len: usize) -> Waveform {
        Waveform::new(
            (0..len)
                .map(|n| 0.3 * (2.0 * PI * 440.0 * n as f64 / 16000.0).sin())
                .collect(),
            16000,
        )
        .unwrap()
    }

    /// Class 0 logit is `k * (energy in region - threshold)`, class 1 is 0.
    struct EnergyModel {
        region: Segment,
        threshold: f64,
        k: f64,
    }

    impl EnergyModel {
        fn energy(&self, x: &Waveform) -> f64 {
            x.samples[self.region.start..self.region.end]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                / self.region.len() as f64
        }
    }

    impl Classifier for EnergyModel {
        fn class_count(&self) -> usize {
            2
        }
        fn sample_rate(&self) -> u32 {
            16000
        }
        fn min_samples(&self) -> usize {
            1
        }
        fn logits(&self, x: &Waveform) -> Result<Vec<f64>> {
            Ok(vec![self.k * (self.energy(x) - self.threshold), 0.0])
        }
    }

    impl Differentiable for EnergyModel {
        fn layer_names(&self) -> Vec<String> {
            Vec::new()
        }
        fn frame_params(&self) -> StftParams {
            StftParams::default()
        }
        fn ce_gradient(&self, x: &Waveform, y: usize) -> Result<(Vec<f64>, Vec<f64>)> {
            let logits = self.logits(x)?;
            let probs = ProbVector::from_logits(&logits);
            let dl0 = probs.get(0) - if y == 0 { 1.0 } else { 0.0 };
            let mut grad = vec![0.0; x.len()];
            for n in self.region.start..self.region.end {
                grad[n] = dl0 * self.k * 2.0 * x.samples[n] / self.region.len() as f64;
            }
            Ok((logits, grad))
        }
        fn layer_activations(&self, _: &Waveform, _: usize, layer: &str) -> Result<LayerActivations> {
            Err(Error::UnknownLayer(layer.into()))
        }
    }

    #[test]
    fn rec_loss_closed_forms() {
        let x = tone(4000);
        let mask = build_mask(&[Segment::new(1000, 2000)], 4000, 0.0).unwrap();
        assert_eq!(rec_loss(&x, &x, &mask).unwrap(), 0.0);
        let shifted = Waveform::new(x.samples.iter().map(|v| v + 0.25).collect(), 16000).unwrap();
        assert!((rec_loss(&shifted, &x, &mask).unwrap() - 0.0625).abs() < 1e-15);
        let empty = build_mask(&[], 4000, 0.1).unwrap();
        assert!(matches!(rec_loss(&x, &x, &empty), Err(Error::EmptyMask)));
    }

    #[test]
    fn attack_loss_closed_forms() {
        let uniform = ProbVector::new(vec![1.0 / 3.0; 3]).unwrap();
        assert!(fitness_value(&uniform, 0, Fitness::Margin).abs() < 1e-15);
        let sure = ProbVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(fitness_value(&sure, 0, Fitness::Margin), 1.0);
        assert_eq!(fitness_value(&sure, 0, Fitness::NegCe), 0.0);
        let wrong = ProbVector::new(vec![0.3, 0.5, 0.2]).unwrap();
        assert!(fitness_value(&wrong, 0, Fitness::Margin) < 0.0);
        assert_ne!(wrong.argmax(), 0);
    }

    fn energy_handle(threshold: f64) -> ModelHandle {
        ModelHandle::white_box(Arc::new(EnergyModel {
            region: Segment::new(12000, 16800),
            threshold,
            k: 200.0,
        }))
    }

    #[test]
    fn zero_iterations_is_plain_inpainting() {
        let m = energy_handle(0.01);
        let g = InpainterHandle::reference();
        let x = tone(32000);
        let mask = build_mask(&[Segment::new(12000, 16800)], x.len(), 0.1).unwrap();
        let cfg = AttackConfig {
            max_iters: 0,
            ..Default::default()
        };
        let r = whitebox_attack(&m, &g, &x, &mask, 0, &cfg).unwrap();
        assert_eq!(r.adversarial, g.inpaint(&x, &mask, &Latent::zeros(16)).unwrap());
        assert_eq!(r.attack_queries, 1);
        assert!(r.loss_trace.is_empty());
    }

    #[test]
    fn pgd_reduction_steps_exactly_alpha_on_the_plateau() {
        // Negative threshold: the label can never flip, yet the softmax is not saturated.
        let m = energy_handle(-0.05);
        let g = InpainterHandle::reference();
        let x = tone(32000);
        let mask = build_mask(&[Segment::new(12000, 16800)], x.len(), 0.1).unwrap();
        let one = AttackConfig {
            lambda_rec: 0.0,
            blend_beta: 0.0,
            max_iters: 1,
            ..Default::default()
        };
        let start = g.inpaint(&x, &mask, &Latent::zeros(16)).unwrap();
        let r = whitebox_attack(&m, &g, &x, &mask, 0, &one).unwrap();
        for n in 0..x.len() {
            let delta = (r.adversarial.samples[n] - start.samples[n]).abs();
            if mask.envelope[n] == 1.0 && start.samples[n] != 0.0 {
                assert!((delta - 0.001).abs() < 1e-12, "n={n} delta={delta}");
            } else {
                assert!(delta <= 0.001 + 1e-12);
            }
            if mask.envelope[n] == 0.0 {
                assert_eq!(r.adversarial.samples[n].to_bits(), x.samples[n].to_bits());
            }
        }
        // Perturbations accumulate: ten steps move plateau samples by ten alphas.
        let ten = AttackConfig {
            max_iters: 10,
            ..one.clone()
        };
        let r10 = whitebox_attack(&m, &g, &x, &mask, 0, &ten).unwrap();
        let n = 14000;
        assert!(((r10.adversarial.samples[n] - start.samples[n]).abs() - 0.01).abs() < 1e-12);
        assert_eq!(r10.attack_queries, 11);
        assert_eq!(r10.loss_trace.len(), 10);
    }

    #[test]
    fn whitebox_flips_energy_model_and_counts_queries() {
        let g = InpainterHandle::reference();
        let x = tone(32000);
        let mask = build_mask(&[Segment::new(12000, 16800)], x.len(), 0.1).unwrap();
        let filled = g.inpaint(&x, &mask, &Latent::zeros(16)).unwrap();
        let m = EnergyModel {
            region: Segment::new(12000, 16800),
            threshold: 0.0,
            k: 200.0,
        };
        // Class 0 holds while the region energy stays above a threshold just below the fill's.
        let threshold = m.energy(&filled) * 0.995;
        let m = energy_handle(threshold);
        let r = whitebox_attack(&m, &g, &x, &mask, 0, &AttackConfig::default()).unwrap();
        assert!(r.success);
        assert_eq!(r.attack_queries, m.queries());
        assert_eq!(m.predict(&r.adversarial).unwrap().argmax(), r.final_label);
        let literal = AttackConfig {
            literal_descent: true,
            ..Default::default()
        };
        let m2 = energy_handle(threshold);
        assert!(!whitebox_attack(&m2, &g, &x, &mask, 0, &literal).unwrap().success);
    }

    #[test]
    fn whitebox_requires_gradients() {
        let m = energy_handle(0.0).restricted();
        let g = InpainterHandle::reference();
        let x = tone(32000);
        let mask = build_mask(&[Segment::new(12000, 16800)], x.len(), 0.1).unwrap();
        assert!(matches!(
            whitebox_attack(&m, &g, &x, &mask, 0, &AttackConfig::default()),
            Err(Error::CapabilityRequired)
        ));
    }

    fn report(segments: &[Segment], queries_used: usize) -> ImportanceReport {
        ImportanceReport {
            ranked: segments
                .iter()
                .map(|s| ScoredSegment {
                    segment: *s,
                    score: 1.0,
                    level: 0,
                    frozen: false,
                })
                .collect(),
            queries_used,
            baseline_loss: 0.0,
            sample_rate: 16000,
        }
    }

    #[test]
    fn blackbox_splits_budget_evenly_without_success() {
        let m = energy_handle(-10.0).restricted();
        let g = InpainterHandle::reference();
        let x = tone(32000);
        let rep = report(&[Segment::new(12000, 16800), Segment::new(4000, 8000)], 0);
        let r = blackbox_attack(&m, &g, &x, &rep, 0, &AttackConfig::default()).unwrap();
        assert!(!r.success);
        assert_eq!(r.attack_queries, 1000);
        assert_eq!(m.queries(), 1000);
        assert_eq!(r.mask.segments.len(), 2);
        for (n, e) in r.mask.envelope.iter().enumerate() {
            if *e == 0.0 {
                assert_eq!(r.adversarial.samples[n].to_bits(), x.samples[n].to_bits());
            }
        }
    }

    #[test]
    fn blackbox_budget_counts_importance_queries() {
        let m = energy_handle(-10.0).restricted();
        let g = InpainterHandle::reference();
        let x = tone(32000);
        let rep = report(&[Segment::new(12000, 16800), Segment::new(4000, 8000)], 13);
        let r = blackbox_attack(&m, &g, &x, &rep, 0, &AttackConfig::default()).unwrap();
        assert_eq!(r.attack_queries, 987);
        assert_eq!(r.record().total_queries, 1000);
        let cfg = AttackConfig {
            query_budget: 13,
            ..Default::default()
        };
        let r = blackbox_attack(&m, &g, &x, &rep, 0, &cfg).unwrap();
        assert!(!r.success);
        assert_eq!(r.attack_queries, 0);
        assert_eq!(r.mask.segments, vec![Segment::new(12000, 16800)]);
    }

    #[test]
    fn blackbox_threshold_model_flips_in_first_generation() {
        let g = InpainterHandle::reference();
        let x = tone(32000);
        let seg = Segment::new(12000, 16800);
        let mask = build_mask(&[seg], x.len(), 0.1).unwrap();
        let probe = EnergyModel {
            region: seg,
            threshold: 0.0,
            k: 200.0,
        };
        // Energy of the initial fill; any latent that lowers the gain flips the label.
        let z0 = g.sample_latent(0);
        let e0 = probe.energy(&g.inpaint(&x, &mask, &z0).unwrap());
        let m = energy_handle(e0 * 0.999).restricted();
        let r = blackbox_attack(&m, &g, &x, &report(&[seg], 0), 0, &AttackConfig::default()).unwrap();
        assert!(r.success);
        assert!(r.attack_queries <= 1 + CmaParams::new(16).population_size);
        assert_eq!(m.predict(&r.adversarial).unwrap().argmax(), r.final_label);
    }

    #[test]
    fn record_round_trip() {
        let m = energy_handle(-10.0);
        let g = InpainterHandle::reference();
        let x = tone(32000);
        let mask = build_mask(&[Segment::new(12000, 16800)], x.len(), 0.1).unwrap();
        let cfg = AttackConfig {
            max_iters: 2,
            ..Default::default()
        };
        let r = whitebox_attack(&m, &g, &x, &mask, 0, &cfg).unwrap();
        let text = serde_json::to_string(&r.record()).unwrap();
        let back: AttackRecord = serde_json::from_str(&text).unwrap();
        let rebuilt = AttackResult::from_record(back, r.adversarial.clone()).unwrap();
        assert_eq!(rebuilt, r);
    }

    #[test]
    fn sweep_covers_the_grid() {
        let m = energy_handle(-10.0);
        let g = InpainterHandle::reference();
        let x = tone(32000);
        let mask = build_mask(&[Segment::new(12000, 16800)], x.len(), 0.1).unwrap();
        let cfg = AttackConfig {
            max_iters: 1,
            ..Default::default()
        };
        let items = [SweepItem { x, mask, label: 0 }];
        let sweep = lambda_sweep(&m, &g, &items, &cfg).unwrap();
        assert_eq!(sweep.len(), 9);
        let pairs: Vec<(f64, f64)> = sweep.iter().map(|e| (e.lambda_rec, e.lambda_att)).collect();
        assert_eq!(pairs[0], (0.5, 0.5));
        assert_eq!(pairs[8], (2.0, 2.0));
    }

    #[test]
    fn config_validation() {
        let mut cfg = AttackConfig {
            lambda_rec: 0.0,
            lambda_att: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.lambda_att = 1.0;
        cfg.step_alpha = 0.0;
        assert!(cfg.validate().is_err());
        assert!(serde_json::from_str::<AttackConfig>(r#"{"lambda_rek": 1}"#).is_err());
    }
}
