use std::path::{Path, PathBuf};

use inpaint_attack::attack::AttackConfig;
use inpaint_attack::importance::BlackBoxConfig;
use inpaint_attack::model::{SynthDatasetConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Synth,
    Train,
    Importance,
    Attack,
    Eval,
    Sweep,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Synth => "synth",
            Task::Train => "train",
            Task::Importance => "importance",
            Task::Attack => "attack",
            Task::Eval => "eval",
            Task::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    White,
    Black,
}

/// Where the white-box attack takes its mask from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum WhiteMask {
    /// Highest-ranked merged gap of the black-box importance report.
    #[default]
    TopGap,
    /// Grad-CAM top-p zone.
    GradCam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCamConfig {
    pub layer: String,
    /// Percentage of heatmap cells kept.
    pub top_p: f64,
    pub min_segment_seconds: f64,
    pub taper_shape: f64,
}

impl Default for GradCamConfig {
    fn default() -> Self {
        Self {
            layer: "conv2".into(),
            top_p: 20.0,
            min_segment_seconds: 0.05,
            taper_shape: inpaint_attack::audio::DEFAULT_TAPER_SHAPE,
        }
    }
}

/// Everything a run needs. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Checked against the subcommand when present.
    pub task: Option<Task>,
    pub mode: Mode,
    /// Run directory; created if missing.
    pub output: PathBuf,
    /// Dataset directory holding a manifest.
    pub dataset: Option<PathBuf>,
    /// A single WAV clip, used instead of a dataset.
    pub audio: Option<PathBuf>,
    /// Label of `audio`; the model's prediction when absent.
    pub label: Option<usize>,
    pub model: Option<PathBuf>,
    /// Importance run directory to reuse instead of analysing inline.
    pub importance: Option<PathBuf>,
    /// Attack run directory scored by `eval`.
    pub results: Option<PathBuf>,
    /// Process at most this many clips.
    pub limit: Option<usize>,
    /// Attack only clips the model classifies correctly.
    pub only_correct: bool,
    /// Expose the model through predictions only.
    pub black_box_only: bool,
    /// Overrides the synth, train and attack seeds when set.
    pub seed: Option<u64>,
    pub white_mask: WhiteMask,
    pub csv: bool,
    pub synth: SynthDatasetConfig,
    pub train: TrainConfig,
    pub blackbox: BlackBoxConfig,
    pub gradcam: GradCamConfig,
    pub attack: AttackConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: None,
            mode: Mode::default(),
            output: PathBuf::from("run"),
            dataset: None,
            audio: None,
            label: None,
            model: None,
            importance: None,
            results: None,
            limit: None,
            only_correct: false,
            black_box_only: false,
            seed: None,
            white_mask: WhiteMask::default(),
            csv: true,
            synth: SynthDatasetConfig::default(),
            train: TrainConfig::default(),
            blackbox: BlackBoxConfig::default(),
            gradcam: GradCamConfig::default(),
            attack: AttackConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Pushes the shared seed into every seeded sub-configuration.
    pub fn resolve_seed(&mut self) {
        if let Some(seed) = self.seed {
            self.synth.seed = seed;
            self.train.seed = seed;
            self.attack.seed = seed;
        }
    }

    pub fn check_task(&self, task: Task) -> Result<(), CliError> {
        match self.task {
            Some(t) if t != task => Err(CliError::Config(format!(
                "config is for task {}, not {}",
                t.name(),
                task.name()
            ))),
            _ => Ok(()),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.attack.validate()?;
        if self.dataset.is_some() && self.audio.is_some() {
            return Err(CliError::Config("give either a dataset or an audio file, not both".into()));
        }
        if !(self.gradcam.top_p > 0.0 && self.gradcam.top_p <= 100.0) {
            return Err(CliError::Config(format!("gradcam.top_p must lie in (0, 100], got {}", self.gradcam.top_p)));
        }
        if self.limit == Some(0) {
            return Err(CliError::Config("limit must be at least 1".into()));
        }
        Ok(())
    }
}
