//! Full-size training run of the reference classifier.

use inpaint_attack::audio::Waveform;
use inpaint_attack::model::{
    synth_dataset, train_toy, Classifier, ClipClass, SynthDatasetConfig, ToyArchitecture, ToyModel, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn default_training_run_generalizes() {
    let data = synth_dataset(&SynthDatasetConfig {
        clips_per_class: 500,
        ..Default::default()
    })
    .unwrap();
    let (model, report) = train_toy(&data, ToyArchitecture::default(), &TrainConfig::default()).unwrap();
    assert_eq!(report.loss_history.len(), 30);
    assert!(report.loss_history[0] > report.loss_history[9], "{:?}", report.loss_history);

    let heldout = synth_dataset(&SynthDatasetConfig {
        clips_per_class: 40,
        seed: 99,
        ..Default::default()
    })
    .unwrap();
    let (mut correct, mut low_loss) = (0, 0);
    for clip in &heldout {
        let p = model.probabilities(&clip.waveform).unwrap();
        correct += usize::from(p.argmax() == clip.label);
        low_loss += usize::from(-p.as_slice()[clip.label].ln() < 3f64.ln());
    }
    let n = heldout.len() as f64;
    assert!(correct as f64 / n >= 0.95, "held-out accuracy {correct}/{n}");
    assert!(low_loss as f64 / n >= 0.95, "loss below ln 3 on {low_loss}/{n}");

    let tone = heldout.iter().find(|c| c.class == ClipClass::HarmonicTone).unwrap();
    assert_eq!(model.probabilities(&tone.waveform).unwrap().argmax(), ClipClass::HarmonicTone.label());

    let (again, _) = train_toy(&data[..60], ToyArchitecture::default(), &TrainConfig { epochs: 2, ..Default::default() })
        .unwrap();
    let (twice, _) = train_toy(&data[..60], ToyArchitecture::default(), &TrainConfig { epochs: 2, ..Default::default() })
        .unwrap();
    assert_eq!(again.logits(&tone.waveform).unwrap(), twice.logits(&tone.waveform).unwrap());
}

#[test]
fn untrained_model_is_near_uniform() {
    let model = ToyModel::new(ToyArchitecture::default(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mean_max: f64 = (0..100)
        .map(|_| {
            let amplitude = rng.random_range(0.01..0.5);
            let x = Waveform::new((0..16000).map(|_| rng.random_range(-amplitude..amplitude)).collect(), 16000).unwrap();
            let p = model.probabilities(&x).unwrap();
            p.as_slice().iter().copied().fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 100.0;
    let uniform = 1.0 / 3.0;
    assert!(mean_max >= uniform - 0.15 && mean_max <= uniform + 0.25, "mean max probability {mean_max}");
}
