use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use inpaint_attack::audio::{save_wav, WavEncoding, Waveform};
use serde::Serialize;

use crate::config::{RunConfig, Task};
use crate::error::{CliError, ErrorRecord};

pub const DETERMINISTIC_ENV: &str = "INPAINT_ATTACK_DETERMINISTIC";
pub const RUN_SCHEMA_VERSION: u32 = 1;
pub const CONFIG_FILE: &str = "config.json";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";
pub const METADATA_FILE: &str = "metadata.json";
pub const ERROR_FILE: &str = "error.json";

/// True when the environment asks for verification runs: wall-clock
/// metadata is suppressed so every artifact is byte-reproducible.
pub fn deterministic_mode() -> bool {
    std::env::var(DETERMINISTIC_ENV).is_ok_and(|v| !v.is_empty() && v != "0")
}

fn unix_seconds() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

#[derive(Serialize)]
struct RunManifest<'a> {
    schema_version: u32,
    tool_version: &'a str,
    task: Task,
    files: Vec<String>,
}

#[derive(Serialize)]
struct Metadata {
    started_unix: f64,
    finished_unix: f64,
}

/// One output directory per run. Every artifact written through it is
/// listed in the run manifest.
pub struct RunDir {
    root: PathBuf,
    files: Vec<String>,
    started: f64,
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
            started: unix_seconds(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn prepare(&mut self, rel: &str) -> Result<PathBuf, CliError> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.files.push(rel.to_string());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        let path = self.prepare(rel)?;
        std::fs::write(path, to_pretty_json(value)?)?;
        Ok(())
    }

    pub fn write_text(&mut self, rel: &str, text: &str) -> Result<(), CliError> {
        let path = self.prepare(rel)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn write_wav(&mut self, rel: &str, w: &Waveform) -> Result<(), CliError> {
        let path = self.prepare(rel)?;
        save_wav(w, path, WavEncoding::Float32)?;
        Ok(())
    }

    /// Records a file written by other code.
    pub fn register(&mut self, rel: String) {
        self.files.push(rel);
    }

    pub fn finish(mut self, task: Task, config: &RunConfig) -> Result<(), CliError> {
        self.write_json(CONFIG_FILE, config)?;
        self.files.sort();
        self.files.dedup();
        let manifest = RunManifest {
            schema_version: RUN_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION"),
            task,
            files: self.files.clone(),
        };
        std::fs::write(self.path(RUN_MANIFEST_FILE), to_pretty_json(&manifest)?)?;
        if !deterministic_mode() {
            let meta = Metadata {
                started_unix: self.started,
                finished_unix: unix_seconds(),
            };
            std::fs::write(self.path(METADATA_FILE), to_pretty_json(&meta)?)?;
        }
        Ok(())
    }
}

/// Best effort: the error is also reported on stderr by the caller.
pub fn write_error(root: &Path, record: &ErrorRecord) {
    let write = || -> Result<(), CliError> {
        std::fs::create_dir_all(root)?;
        std::fs::write(root.join(ERROR_FILE), to_pretty_json(record)?)?;
        Ok(())
    };
    if let Err(e) = write() {
        log::warn!("could not write {}: {e}", root.join(ERROR_FILE).display());
    }
}
