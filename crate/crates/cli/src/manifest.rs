//! Run manifests: what was run, on which bytes, producing which bytes.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use nmf_core::TrainConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {} for its digest", path.display()))?;
        Ok(Self { path: path.to_path_buf(), sha256: hex::encode(Sha256::digest(&bytes)) })
    }
}

#[derive(Debug, Serialize)]
pub struct Timing {
    pub phase: String,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool: String,
    pub args: Vec<String>,
    pub config: Option<TrainConfig>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub timings: Vec<Timing>,
}

/// Collects a manifest while a command runs.
pub struct Recorder {
    command: String,
    started: Instant,
    phase_start: Instant,
    config: Option<TrainConfig>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    timings: Vec<Timing>,
}

impl Recorder {
    pub fn new(command: &str) -> Self {
        let now = Instant::now();
        Self {
            command: command.to_string(),
            started: now,
            phase_start: now,
            config: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    pub fn config(&mut self, cfg: &TrainConfig) {
        self.config = Some(cfg.clone());
    }

    /// Closes the current phase under `name`.
    pub fn phase(&mut self, name: &str) {
        let now = Instant::now();
        self.timings.push(Timing { phase: name.into(), seconds: (now - self.phase_start).as_secs_f64() });
        self.phase_start = now;
    }

    /// Digests every recorded file and writes `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        self.timings.push(Timing { phase: "total".into(), seconds: self.started.elapsed().as_secs_f64() });
        let manifest = RunManifest {
            command: self.command,
            tool: concat!("nmf ", env!("CARGO_PKG_VERSION")).into(),
            args: std::env::args().skip(1).collect(),
            config: self.config,
            inputs: self.inputs.iter().map(|p| FileDigest::of(p)).collect::<Result<_>>()?,
            outputs: self.outputs.iter().map(|p| FileDigest::of(p)).collect::<Result<_>>()?,
            timings: self.timings,
        };
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
