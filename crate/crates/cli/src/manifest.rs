//! Run manifests and the shared run registry.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const REGISTRY_FILE: &str = "registry.json";
const LOCK_FILE: &str = "registry.lock";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Succeeded,
    Failed { diagnostics: String },
}

/// Outcome of regenerating a run from its manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reproduction {
    pub of_run: String,
    pub identical: bool,
    /// Compared artifacts whose bytes differ.
    pub differing: Vec<String>,
    /// Named when `identical` is false.
    pub nondeterminism_source: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    /// `train`, `evaluate`, `sweep` or `report`.
    pub command: String,
    /// Command arguments after resolution (targets, checkpoint paths).
    pub args: Value,
    /// Merged configuration the command ran with.
    pub config: Value,
    /// SHA-256 of every input: dataset splits and checkpoints.
    pub input_hashes: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub started_at: String,
    pub finished_at: Option<String>,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
    pub status: RunStatus,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub reproduction: Option<Reproduction>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Deterministic id from the command, its arguments and the configuration.
pub fn derive_run_id(command: &str, label: &str, args: &Value, config: &Value) -> String {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update(b"\0");
    h.update(args.to_string().as_bytes());
    h.update(b"\0");
    h.update(config.to_string().as_bytes());
    let digest = hex::encode(h.finalize());
    format!("{command}-{label}-{}", &digest[..12])
}

pub fn check_run_id(id: &str) -> Result<()> {
    let ok = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')) && !id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!("run id `{id}` may only contain letters, digits, `-`, `_` and `.`")))
    }
}

/// A run in progress: its directory and manifest, persisted on every change.
pub struct Run {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    out: PathBuf,
}

impl Run {
    /// Creates `out/runs/<id>`. An existing directory is an error unless
    /// `force` (which clears it) or `reuse` (which keeps its contents).
    pub fn start(out: &Path, run_id: String, command: &str, args: Value, config: Value, force: bool, reuse: bool) -> Result<Self> {
        check_run_id(&run_id)?;
        let dir = out.join("runs").join(&run_id);
        if dir.exists() && !reuse {
            if !force {
                return Err(CliError::Config(format!(
                    "run {run_id} already exists at {}; pass --force to overwrite it",
                    dir.display()
                )));
            }
            fs::remove_dir_all(&dir).map_err(|e| CliError::Config(format!("cannot clear {}: {e}", dir.display())))?;
        }
        fs::create_dir_all(&dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
        let manifest = RunManifest {
            run_id,
            command: command.into(),
            args,
            config,
            input_hashes: BTreeMap::new(),
            seeds: BTreeMap::new(),
            started_at: now(),
            finished_at: None,
            artifacts: Vec::new(),
            status: RunStatus::Running,
            warnings: Vec::new(),
            reproduction: None,
        };
        let run = Run {
            dir,
            manifest,
            out: out.to_path_buf(),
        };
        run.persist()?;
        Ok(run)
    }

    pub fn id(&self) -> &str {
        &self.manifest.run_id
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Records `name` (relative to the run directory) as an artifact.
    pub fn artifact(&mut self, name: impl Into<String>) {
        let name = name.into();
        if !self.manifest.artifacts.contains(&name) {
            self.manifest.artifacts.push(name);
        }
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        log::warn!("{message}");
        self.manifest.warnings.push(message);
    }

    pub fn persist(&self) -> Result<()> {
        write_json(&self.dir.join(MANIFEST_FILE), &self.manifest)?;
        register(&self.out, &self.manifest)
    }

    pub fn succeed(mut self) -> Result<RunManifest> {
        self.manifest.status = RunStatus::Succeeded;
        self.manifest.finished_at = Some(now());
        self.persist()?;
        Ok(self.manifest)
    }

    /// Records the failure and hands back the error for the exit code.
    pub fn fail(mut self, error: CliError) -> CliError {
        self.manifest.status = RunStatus::Failed {
            diagnostics: error.to_string(),
        };
        self.manifest.finished_at = Some(now());
        if let Err(e) = self.persist() {
            log::error!("could not record the failure of run {}: {e}", self.manifest.run_id);
        }
        error
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text + "\n").map_err(|e| CliError::Config(format!("cannot write {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

pub fn read_run_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{} is not a run manifest: {e}", path.display())))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub command: String,
    pub status: String,
    pub started_at: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    pub runs: BTreeMap<String, RegistryEntry>,
}

fn with_registry<T>(out: &Path, f: impl FnOnce(&mut Registry) -> T) -> Result<T> {
    let io = |p: &Path, e: std::io::Error| CliError::Config(format!("run registry {}: {e}", p.display()));
    fs::create_dir_all(out).map_err(|e| io(out, e))?;
    let lock_path = out.join(LOCK_FILE);
    let lock: File = OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&lock_path)
        .map_err(|e| io(&lock_path, e))?;
    lock.lock().map_err(|e| io(&lock_path, e))?;
    let path = out.join(REGISTRY_FILE);
    let mut registry: Registry = match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("run registry {} is corrupt: {e}", path.display())))?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Registry::default(),
        Err(e) => return Err(io(&path, e)),
    };
    let value = f(&mut registry);
    write_json(&path, &registry)?;
    lock.unlock().map_err(|e| io(&lock_path, e))?;
    Ok(value)
}

fn register(out: &Path, manifest: &RunManifest) -> Result<()> {
    let status = match &manifest.status {
        RunStatus::Running => "running",
        RunStatus::Succeeded => "succeeded",
        RunStatus::Failed { .. } => "failed",
    };
    with_registry(out, |r| {
        r.runs.insert(
            manifest.run_id.clone(),
            RegistryEntry {
                command: manifest.command.clone(),
                status: status.into(),
                started_at: manifest.started_at.clone(),
            },
        );
    })
}

pub fn registry(out: &Path) -> Result<Registry> {
    with_registry(out, |r| r.clone())
}

pub fn run_dir(out: &Path, run_id: &str) -> PathBuf {
    out.join("runs").join(run_id)
}

/// Manifest of a registered run.
pub fn find_run(out: &Path, run_id: &str) -> Option<RunManifest> {
    check_run_id(run_id).ok()?;
    read_run_manifest(&run_dir(out, run_id).join(MANIFEST_FILE)).ok()
}

/// Resolves a checkpoint reference: an existing file, or the id of a
/// successful training run.
pub fn resolve_checkpoint(out: &Path, reference: &str) -> Result<PathBuf> {
    let as_path = PathBuf::from(reference);
    if as_path.is_file() {
        return Ok(as_path);
    }
    match find_run(out, reference) {
        Some(m) if m.command == "train" && m.status == RunStatus::Succeeded => {
            Ok(run_dir(out, reference).join(crate::train::CHECKPOINT_FILE))
        }
        Some(m) if m.command == "train" => Err(CliError::Config(format!("training run {reference} did not succeed"))),
        Some(m) => Err(CliError::Config(format!("run {reference} is a {} run, not a training run", m.command))),
        None => Err(CliError::Config(format!(
            "`{reference}` is neither a checkpoint file nor a run id under {}",
            out.join("runs").display()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_ids_are_stable_and_sensitive() {
        let a = derive_run_id("train", "protonet", &serde_json::json!({"e": 1}), &serde_json::json!({"seed": 0}));
        let b = derive_run_id("train", "protonet", &serde_json::json!({"e": 1}), &serde_json::json!({"seed": 0}));
        let c = derive_run_id("train", "protonet", &serde_json::json!({"e": 1}), &serde_json::json!({"seed": 1}));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.starts_with("train-protonet-"));
    }

    #[test]
    fn collisions_need_force() {
        let tmp = tempfile::tempdir().unwrap();
        let start = |force| Run::start(tmp.path(), "r1".into(), "train", Value::Null, Value::Null, force, false);
        start(false).unwrap().succeed().unwrap();
        assert!(start(false).is_err());
        start(true).unwrap();
        assert_eq!(registry(tmp.path()).unwrap().runs["r1"].status, "running");
    }

    #[test]
    fn rejects_path_like_ids() {
        assert!(check_run_id("../x").is_err());
        assert!(check_run_id("a/b").is_err());
        assert!(check_run_id("ok-1_2.3").is_ok());
    }
}
