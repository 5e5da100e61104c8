//! Pipeline orchestration behind the `reputa` binary.
//!
//! Every stage writes into `<out>/<stage>/` and finishes by writing a
//! `manifest.json` with the stage's config hash, the seed and sha256 digests
//! of every input and output (paths relative to `<out>`). A stage whose
//! manifest still matches is skipped unless forced.

pub mod config;
pub mod stages;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::PipelineConfig;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config at `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error("missing prerequisite artifact `{artifact}`; run the stage that produces it first")]
    Missing { artifact: String },
    #[error(transparent)]
    Core(#[from] reputa::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 1 for configuration problems, 2 for missing prerequisites, 3 for
    /// failures while a stage runs.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 1,
            CliError::Missing { .. } => 2,
            _ => 3,
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hash of a serializable config fragment. serde_json maps are ordered, so
/// the JSON text is canonical.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("config serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Run-time settings shared by all stages.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: PipelineConfig,
    pub out: PathBuf,
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    UpToDate,
}

/// Path relative to the output directory, with `/` separators.
fn rel(out: &Path, p: &Path) -> String {
    let r = p.strip_prefix(out).unwrap_or(p);
    r.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

impl Context {
    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.out.join(stage)
    }

    /// Resolves a prerequisite, failing with exit code 2 when absent.
    pub fn require(&self, relpath: &str) -> Result<PathBuf, CliError> {
        let p = self.out.join(relpath);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::Missing {
                artifact: relpath.to_string(),
            })
        }
    }

    /// Runs `body` unless the stage manifest shows identical config, inputs
    /// and outputs. `inputs` are artifact paths relative to the output
    /// directory, or absolute paths for external inputs. `body` receives the
    /// (emptied) stage directory and returns the files it wrote.
    pub fn run_stage<C: Serialize>(
        &self,
        stage: &str,
        fragment: &C,
        inputs: &[PathBuf],
        body: impl FnOnce(&Path) -> Result<Vec<PathBuf>, CliError>,
    ) -> Result<Outcome, CliError> {
        let seed = self.config.seed();
        let hash = config_hash(&(stage, seed, env!("CARGO_PKG_VERSION"), fragment));
        let mut input_hashes = BTreeMap::new();
        for p in inputs {
            let key = if p.starts_with(&self.out) {
                rel(&self.out, p)
            } else {
                // external inputs are keyed by file name so the manifest does
                // not depend on where the data lives
                format!("external/{}", p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()))
            };
            input_hashes.insert(key, sha256_file(p)?);
        }

        let dir = self.stage_dir(stage);
        let manifest_path = dir.join(MANIFEST);
        if !self.force {
            if let Some(old) = read_manifest(&manifest_path) {
                let outputs_intact = old
                    .outputs
                    .iter()
                    .all(|(k, v)| sha256_file(&self.out.join(k)).map(|h| &h == v).unwrap_or(false));
                if old.config_hash == hash && old.seed == seed && old.inputs == input_hashes && outputs_intact {
                    log::info!("{stage}: up to date");
                    return Ok(Outcome::UpToDate);
                }
            }
        }

        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        log::info!("{stage}: running");
        let written = body(&dir)?;
        let mut outputs = BTreeMap::new();
        for p in &written {
            outputs.insert(rel(&self.out, p), sha256_file(p)?);
        }
        let manifest = Manifest {
            stage: stage.to_string(),
            config_hash: hash,
            seed,
            inputs: input_hashes,
            outputs,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        std::fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
        Ok(Outcome::Ran)
    }
}

pub fn read_manifest(path: &Path) -> Option<Manifest> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}
