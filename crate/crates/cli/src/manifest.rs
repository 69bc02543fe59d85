use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

/// What was run, with the arguments needed to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Invocation {
    Build,
    Localize {
        dump: Option<PathBuf>,
        baseline_dump: Option<PathBuf>,
    },
    Ablate,
    Inject,
    Steer,
    Robustness,
    Report {
        runs: Vec<PathBuf>,
    },
}

impl Invocation {
    pub fn name(&self) -> &'static str {
        match self {
            Invocation::Build => "build",
            Invocation::Localize { .. } => "localize",
            Invocation::Ablate => "ablate",
            Invocation::Inject => "inject",
            Invocation::Steer => "steer",
            Invocation::Robustness => "robustness",
            Invocation::Report { .. } => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Relative to the run directory for outputs; as given for inputs.
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub value: f64,
    pub threshold: String,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub invocation: Invocation,
    pub check: bool,
    pub config: ExperimentConfig,
    /// Flags that overrode the config file, as given.
    pub overrides: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    /// Organism loaded from this checkpoint instead of being built.
    pub checkpoint: Option<PathBuf>,
    pub organism_fingerprint: Option<String>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<CheckRecord>,
    pub tool_version: String,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
    pub status: RunStatus,
    pub error: Option<String>,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<(String, u64)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

pub fn load_manifest(path: &Path) -> anyhow::Result<RunManifest> {
    let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&path).with_context(|| format!("reading manifest {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
}

/// A run directory that records every file written into it. The manifest
/// is written when the run starts and rewritten when it finishes.
pub struct Run {
    dir: PathBuf,
    manifest: RunManifest,
    clock: Instant,
}

impl Run {
    pub fn start(
        dir: &Path,
        invocation: Invocation,
        check: bool,
        config: &ExperimentConfig,
        overrides: Vec<String>,
    ) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut run = Run {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                invocation,
                check,
                config: config.clone(),
                overrides,
                seeds: BTreeMap::from([("run".to_string(), config.seed)]),
                checkpoint: None,
                organism_fingerprint: None,
                inputs: Vec::new(),
                outputs: Vec::new(),
                metrics: BTreeMap::new(),
                checks: Vec::new(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                started_unix,
                wall_clock_secs: 0.0,
                status: RunStatus::Running,
                error: None,
            },
            clock: Instant::now(),
        };
        run.write_manifest()?;
        Ok(run)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write_manifest(&mut self) -> anyhow::Result<()> {
        let path = self.dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        let (sha256, bytes) = sha256_file(path)?;
        self.manifest.inputs.push(FileRecord {
            path: path.to_path_buf(),
            sha256,
            bytes,
        });
        Ok(())
    }

    pub fn set_checkpoint(&mut self, checkpoint: Option<PathBuf>) {
        self.manifest.checkpoint = checkpoint;
    }

    pub fn set_fingerprint(&mut self, fingerprint: &str) {
        self.manifest.organism_fingerprint = Some(fingerprint.to_string());
    }

    pub fn seed(&mut self, name: &str, seed: u64) {
        self.manifest.seeds.insert(name.to_string(), seed);
    }

    pub fn metric(&mut self, name: &str, value: f64) {
        self.manifest.metrics.insert(name.to_string(), value);
    }

    pub fn check(&mut self, name: &str, value: f64, threshold: impl Into<String>, passed: bool) {
        self.manifest.checks.push(CheckRecord {
            name: name.to_string(),
            value,
            threshold: threshold.into(),
            passed,
        });
    }

    /// Absolute path for a new output, creating parent directories.
    pub fn path(&self, rel: &str) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        Ok(path)
    }

    /// Registers a file already written under the run directory.
    pub fn record(&mut self, rel: &str) -> anyhow::Result<()> {
        let (sha256, bytes) = sha256_file(&self.dir.join(rel))?;
        self.manifest.outputs.retain(|f| f.path != Path::new(rel));
        self.manifest.outputs.push(FileRecord {
            path: PathBuf::from(rel),
            sha256,
            bytes,
        });
        Ok(())
    }

    pub fn write(&mut self, rel: &str, contents: &[u8]) -> anyhow::Result<()> {
        let path = self.path(rel)?;
        let mut f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        f.write_all(contents)?;
        self.record(rel)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        self.write(rel, text.as_bytes())
    }

    pub fn write_csv<T: Serialize>(&mut self, rel: &str, rows: &[T]) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv: {e}"))?;
        self.write(rel, &bytes)
    }

    pub fn finish(mut self, error: Option<String>) -> anyhow::Result<RunManifest> {
        self.manifest.wall_clock_secs = self.clock.elapsed().as_secs_f64();
        self.manifest.status = if error.is_some() { RunStatus::Failed } else { RunStatus::Ok };
        self.manifest.error = error;
        self.manifest.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        self.write_manifest()?;
        Ok(self.manifest)
    }
}
