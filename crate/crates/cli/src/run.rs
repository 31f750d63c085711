use std::path::{Path, PathBuf};
use std::sync::Arc;

use inpaint_attack::attack::{
    blackbox_attack, lambda_sweep, whitebox_attack, AttackMode, AttackRecord, AttackResult, SweepItem,
};
use inpaint_attack::audio::{build_mask, load_wav, Segment, SegmentMask, StftParams, Waveform};
use inpaint_attack::eval::{asr, evaluate_corpus};
use inpaint_attack::importance::{analyze_blackbox, grad_cam, heatmap_to_mask, Heatmap, ImportanceReport};
use inpaint_attack::inpaint::InpainterHandle;
use inpaint_attack::model::dataset::{DatasetManifest, MANIFEST_FILE};
use inpaint_attack::model::{
    read_dataset, synth_dataset, train_toy, write_dataset, ModelHandle, ToyArchitecture, ToyModel,
};
use inpaint_attack::Error;
use serde::{Deserialize, Serialize};

use crate::config::{Mode, RunConfig, Task, WhiteMask};
use crate::error::CliError;
use crate::output::RunDir;

pub const MODEL_FILE: &str = "model.json";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const ATTACK_INDEX_FILE: &str = "attacks/index.json";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const EVAL_CSV_FILE: &str = "eval.csv";
pub const SWEEP_FILE: &str = "sweep.json";
pub const SWEEP_CSV_FILE: &str = "sweep.csv";

struct Clip {
    id: String,
    source: PathBuf,
    waveform: Waveform,
    label: Option<usize>,
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "clip".into(), |s| s.to_string_lossy().into_owned())
}

fn load_clips(cfg: &RunConfig) -> Result<Vec<Clip>, CliError> {
    if let Some(dir) = &cfg.dataset {
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.exists() {
            return Err(Error::MissingFile(manifest_path).into());
        }
        let manifest: DatasetManifest = serde_json::from_slice(&std::fs::read(&manifest_path)?)?;
        return manifest
            .clips
            .iter()
            .map(|entry| {
                let source = dir.join(&entry.path);
                Ok(Clip {
                    id: stem(&entry.path),
                    waveform: load_wav(&source)?.waveform,
                    source,
                    label: Some(entry.label),
                })
            })
            .collect();
    }
    if let Some(path) = &cfg.audio {
        let loaded = load_wav(path)?;
        for warning in &loaded.warnings {
            log::warn!("{}: {warning:?}", path.display());
        }
        return Ok(vec![Clip {
            id: stem(path),
            source: path.clone(),
            waveform: loaded.waveform,
            label: cfg.label,
        }]);
    }
    Err(CliError::Input("no dataset or audio file given".into()))
}

fn load_model(cfg: &RunConfig) -> Result<ModelHandle, CliError> {
    let path = cfg
        .model
        .as_ref()
        .ok_or_else(|| CliError::Input("no model checkpoint given".into()))?;
    let model = Arc::new(ToyModel::load(path)?);
    Ok(if cfg.black_box_only {
        ModelHandle::black_box(model)
    } else {
        ModelHandle::white_box(model)
    })
}

/// Clips paired with their labels, filtered and truncated per the config.
fn labelled_clips(cfg: &RunConfig, m: &ModelHandle) -> Result<Vec<(Clip, usize)>, CliError> {
    let mut out = Vec::new();
    for clip in load_clips(cfg)? {
        if cfg.limit.is_some_and(|n| out.len() >= n) {
            break;
        }
        let predicted = if clip.label.is_none() || cfg.only_correct {
            Some(m.predict(&clip.waveform)?.argmax())
        } else {
            None
        };
        let label = match clip.label.or(predicted) {
            Some(label) => label,
            None => unreachable!("a prediction is made whenever the label is missing"),
        };
        if cfg.only_correct && predicted != Some(label) {
            log::info!("{}: skipped, misclassified", clip.id);
            continue;
        }
        out.push((clip, label));
    }
    Ok(out)
}

pub fn run_synth(cfg: &RunConfig, out: &mut RunDir) -> Result<(), CliError> {
    let clips = synth_dataset(&cfg.synth)?;
    let manifest = write_dataset(out.path("dataset"), &cfg.synth, &clips)?;
    for entry in &manifest.clips {
        out.register(format!("dataset/{}", entry.path.display()));
    }
    out.register(format!("dataset/{MANIFEST_FILE}"));
    log::info!("wrote {} clips", clips.len());
    Ok(())
}

pub fn run_train(cfg: &RunConfig, out: &mut RunDir) -> Result<(), CliError> {
    let data = match &cfg.dataset {
        Some(dir) => read_dataset(dir)?,
        None => synth_dataset(&cfg.synth)?,
    };
    let arch = ToyArchitecture {
        sample_rate: data.first().map_or(cfg.synth.sample_rate, |c| c.waveform.sample_rate),
        ..Default::default()
    };
    let (model, report) = train_toy(&data, arch, &cfg.train)?;
    model.save(out.path(MODEL_FILE))?;
    out.register(MODEL_FILE.into());
    out.write_json(TRAIN_REPORT_FILE, &report)?;
    log::info!("training accuracy {:.4}", report.train_accuracy);
    Ok(())
}

/// Per-clip importance artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportanceOutput {
    pub id: String,
    pub label: usize,
    pub mode: Mode,
    pub report: Option<ImportanceReport>,
    pub heatmap: Option<Heatmap>,
    /// Selected zone: top-r segments in black mode, the Grad-CAM mask in white mode.
    pub mask_segments: Vec<Segment>,
    /// Zone with touching segments merged, most important first.
    pub gaps: Vec<Segment>,
    pub taper_shape: f64,
}

fn gradcam_mask(cfg: &RunConfig, m: &ModelHandle, x: &Waveform, y: usize) -> Result<(Heatmap, SegmentMask), CliError> {
    let heatmap = grad_cam(m, x, y, &cfg.gradcam.layer)?;
    let min_segment = (cfg.gradcam.min_segment_seconds * x.sample_rate as f64).round() as usize;
    let mask = heatmap_to_mask(&heatmap, cfg.gradcam.top_p, x.len(), cfg.gradcam.taper_shape, min_segment)?;
    Ok((heatmap, mask))
}

fn analyze(cfg: &RunConfig, mode: Mode, m: &ModelHandle, clip: &Clip, y: usize) -> Result<ImportanceOutput, CliError> {
    let x = &clip.waveform;
    Ok(match mode {
        Mode::Black => {
            let report = analyze_blackbox(m, x, y, &cfg.blackbox)?;
            ImportanceOutput {
                id: clip.id.clone(),
                label: y,
                mode,
                mask_segments: report.segments(),
                gaps: report.gaps(),
                report: Some(report),
                heatmap: None,
                taper_shape: cfg.blackbox.taper_shape,
            }
        }
        Mode::White => {
            let (heatmap, mask) = gradcam_mask(cfg, m, x, y)?;
            ImportanceOutput {
                id: clip.id.clone(),
                label: y,
                mode,
                gaps: mask.segments.clone(),
                mask_segments: mask.segments,
                report: None,
                heatmap: Some(heatmap),
                taper_shape: cfg.gradcam.taper_shape,
            }
        }
    })
}

fn importance_rel(id: &str) -> String {
    format!("importance/{id}.json")
}

pub fn run_importance(cfg: &RunConfig, out: &mut RunDir) -> Result<(), CliError> {
    let m = load_model(cfg)?;
    if cfg.mode == Mode::White {
        m.frame_params()?;
    }
    for (clip, y) in labelled_clips(cfg, &m)? {
        let result = analyze(cfg, cfg.mode, &m, &clip, y)?;
        out.write_json(&importance_rel(&clip.id), &result)?;
    }
    Ok(())
}

/// Importance for one clip, loaded from an earlier run or computed inline.
fn importance_for(cfg: &RunConfig, m: &ModelHandle, clip: &Clip, y: usize) -> Result<ImportanceOutput, CliError> {
    if let Some(dir) = &cfg.importance {
        let path = dir.join(importance_rel(&clip.id));
        if !path.exists() {
            return Err(Error::MissingFile(path).into());
        }
        let loaded: ImportanceOutput = serde_json::from_slice(&std::fs::read(&path)?)?;
        if loaded.label != y {
            return Err(CliError::Input(format!(
                "{} was analysed for label {}, not {y}",
                path.display(),
                loaded.label
            )));
        }
        return Ok(loaded);
    }
    let mode = match (cfg.mode, cfg.white_mask) {
        (Mode::White, WhiteMask::GradCam) => Mode::White,
        _ => Mode::Black,
    };
    analyze(cfg, mode, m, clip, y)
}

fn white_mask(imp: &ImportanceOutput, len: usize) -> Result<SegmentMask, CliError> {
    let segments: &[Segment] = match imp.mode {
        Mode::Black => imp.gaps.get(..1).unwrap_or(&[]),
        Mode::White => &imp.mask_segments,
    };
    if segments.is_empty() {
        return Err(Error::EmptyMask.into());
    }
    Ok(build_mask(segments, len, imp.taper_shape)?)
}

fn attack_clip(
    cfg: &RunConfig,
    m: &ModelHandle,
    g: &InpainterHandle,
    clip: &Clip,
    y: usize,
) -> Result<AttackResult, CliError> {
    let imp = importance_for(cfg, m, clip, y)?;
    let x = &clip.waveform;
    match cfg.mode {
        Mode::White => {
            let mask = white_mask(&imp, x.len())?;
            let mut result = whitebox_attack(m, g, x, &mask, y, &cfg.attack)?;
            if cfg.importance.is_none() {
                result.importance_queries = imp.report.as_ref().map_or(0, |r| r.queries_used);
            }
            Ok(result)
        }
        Mode::Black => {
            let report = imp
                .report
                .ok_or_else(|| CliError::Input(format!("{}: black attack needs a black-box importance report", clip.id)))?;
            Ok(blackbox_attack(m, g, x, &report, y, &cfg.attack)?)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackIndexEntry {
    pub id: String,
    pub source: PathBuf,
    pub record: String,
    pub audio: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackIndex {
    pub mode: AttackMode,
    pub entries: Vec<AttackIndexEntry>,
}

pub fn run_attack(cfg: &RunConfig, out: &mut RunDir) -> Result<(), CliError> {
    let m = load_model(cfg)?;
    let g = InpainterHandle::reference();
    let mut entries = Vec::new();
    let (mut attempted, mut fooled) = (0usize, 0usize);
    for (clip, y) in labelled_clips(cfg, &m)? {
        let result = attack_clip(cfg, &m, &g, &clip, y)?;
        let record = format!("attacks/{}.json", clip.id);
        let audio = format!("attacks/{}.wav", clip.id);
        out.write_json(&record, &result.record())?;
        out.write_wav(&audio, &result.adversarial)?;
        attempted += 1;
        fooled += usize::from(result.success);
        entries.push(AttackIndexEntry {
            id: clip.id,
            source: clip.source,
            record,
            audio,
        });
    }
    let mode = match cfg.mode {
        Mode::White => AttackMode::WhiteBox,
        Mode::Black => AttackMode::BlackBox,
    };
    out.write_json(ATTACK_INDEX_FILE, &AttackIndex { mode, entries })?;
    log::info!("{fooled} of {attempted} clips misclassified after the attack");
    Ok(())
}

pub fn run_eval(cfg: &RunConfig, out: &mut RunDir) -> Result<(), CliError> {
    let dir = cfg
        .results
        .as_ref()
        .ok_or_else(|| CliError::Input("no attack results directory given".into()))?;
    let index_path = dir.join(ATTACK_INDEX_FILE);
    if !index_path.exists() {
        return Err(Error::MissingFile(index_path).into());
    }
    let index: AttackIndex = serde_json::from_slice(&std::fs::read(&index_path)?)?;
    let m = load_model(cfg)?;
    let mut originals = Vec::with_capacity(index.entries.len());
    let mut results = Vec::with_capacity(index.entries.len());
    for entry in &index.entries {
        let record_path = dir.join(&entry.record);
        if !record_path.exists() {
            return Err(Error::MissingFile(record_path).into());
        }
        let record: AttackRecord = serde_json::from_slice(&std::fs::read(&record_path)?)?;
        let adversarial = load_wav(dir.join(&entry.audio))?.waveform;
        let original = load_wav(&entry.source)?.waveform;
        if original.len() != adversarial.len() {
            return Err(CliError::Input(format!(
                "{}: original has {} samples, adversarial {}",
                entry.id,
                original.len(),
                adversarial.len()
            )));
        }
        results.push(AttackResult::from_record(record, adversarial)?);
        originals.push(original);
    }
    let report = evaluate_corpus(&originals, &results, &m, &StftParams::default())?;
    out.write_json(EVAL_REPORT_FILE, &report)?;
    if cfg.csv {
        out.write_text(EVAL_CSV_FILE, &report.to_csv())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub lambda_rec: f64,
    pub lambda_att: f64,
    /// `None` when no clip was originally correct.
    pub asr: Option<f64>,
    pub lsd_mean: f64,
    pub records: Vec<AttackRecord>,
}

pub fn run_sweep(cfg: &RunConfig, out: &mut RunDir) -> Result<(), CliError> {
    let m = load_model(cfg)?;
    m.frame_params()?;
    let g = InpainterHandle::reference();
    let mut items = Vec::new();
    let mut correct = Vec::new();
    for (clip, y) in labelled_clips(cfg, &m)? {
        let imp = importance_for(cfg, &m, &clip, y)?;
        correct.push(m.predict(&clip.waveform)?.argmax() == y);
        items.push(SweepItem {
            mask: white_mask(&imp, clip.waveform.len())?,
            x: clip.waveform,
            label: y,
        });
    }
    let mut summaries = Vec::new();
    let mut csv = String::from("lambda_rec,lambda_att,ASR,LSD\n");
    for entry in lambda_sweep(&m, &g, &items, &cfg.attack)? {
        let asr_value = match asr(&entry.results, &correct) {
            Ok(v) => Some(v),
            Err(Error::NoCorrectClips) => None,
            Err(e) => return Err(e.into()),
        };
        let lsd_mean = entry.results.iter().map(|r| r.lsd_value).sum::<f64>() / entry.results.len().max(1) as f64;
        csv.push_str(&format!(
            "{},{},{},{lsd_mean:.6}\n",
            entry.lambda_rec,
            entry.lambda_att,
            asr_value.map(|v| format!("{v:.6}")).unwrap_or_default()
        ));
        summaries.push(SweepSummary {
            lambda_rec: entry.lambda_rec,
            lambda_att: entry.lambda_att,
            asr: asr_value,
            lsd_mean,
            records: entry.results.iter().map(AttackResult::record).collect(),
        });
    }
    out.write_json(SWEEP_FILE, &summaries)?;
    if cfg.csv {
        out.write_text(SWEEP_CSV_FILE, &csv)?;
    }
    Ok(())
}

pub fn run(task: Task, cfg: &RunConfig, out: &mut RunDir) -> Result<(), CliError> {
    match task {
        Task::Synth => run_synth(cfg, out),
        Task::Train => run_train(cfg, out),
        Task::Importance => run_importance(cfg, out),
        Task::Attack => run_attack(cfg, out),
        Task::Eval => run_eval(cfg, out),
        Task::Sweep => run_sweep(cfg, out),
    }
}
