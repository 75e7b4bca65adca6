//! Run manifests: every command records what it ran, on which inputs, with
//! which seed, and how long each stage took. `rerun` replays a manifest.
//!
//! Data outputs are bitwise reproducible given the same inputs and seed; the
//! manifest itself is a log (timings vary run to run) and is excluded from
//! that contract.

use crate::error::CliError;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub ms: f64,
}

/// Stopwatch that accumulates named per-stage timings.
pub struct Stages {
    last: Instant,
    pub list: Vec<StageTiming>,
}

impl Stages {
    pub fn start() -> Self {
        Self {
            last: Instant::now(),
            list: Vec::new(),
        }
    }

    pub fn mark(&mut self, stage: &str) {
        let now = Instant::now();
        self.list.push(StageTiming {
            stage: stage.to_string(),
            ms: now.duration_since(self.last).as_secs_f64() * 1e3,
        });
        self.last = now;
    }
}

/// The replayable command of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum ManifestCommand {
    Project {
        scene: String,
        config: Option<String>,
    },
    Targets {
        scene: String,
        head: String,
        config: Option<String>,
    },
    Nms {
        dets: String,
        threshold: Option<f64>,
        config: Option<String>,
    },
    Eval {
        dets: String,
        gts: String,
        protocol: String,
        threshold: Option<f64>,
        calib: Option<String>,
    },
    Gradcheck {
        seed: u64,
    },
    Synth {
        seed: u64,
        views: usize,
        objects: usize,
        config: String,
    },
    RenderBev {
        scene: String,
        dets: Option<String>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    #[serde(flatten)]
    pub command: ManifestCommand,
    pub out_dir: String,
    pub timings_ms: Vec<StageTiming>,
}

impl RunManifest {
    pub fn write(&self, out_dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serialization");
        std::fs::write(out_dir.join("manifest.json"), text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
