//! Hyper-parameter sweeps over (value, seed) cells with an incrementally
//! persisted, resumable manifest.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ModelPoint;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    VaeStn,
    VaeNs,
    DaganUn,
    DaganRn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::VaeStn, ModelKind::VaeNs, ModelKind::DaganUn, ModelKind::DaganRn];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::VaeStn => "vae_stn",
            ModelKind::VaeNs => "vae_ns",
            ModelKind::DaganUn => "dagan_un",
            ModelKind::DaganRn => "dagan_rn",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model kind {s}")))
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    ContextSize,
    AttentionSteps,
    Beta,
    LatentSize,
}

impl SweepParameter {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParameter::ContextSize => "context_size",
            SweepParameter::AttentionSteps => "attention_steps",
            SweepParameter::Beta => "beta",
            SweepParameter::LatentSize => "latent_size",
        }
    }

    /// Allowed closed range of the parameter for a model kind, or `None` if
    /// the model has no such hyper-parameter.
    pub fn range(self, kind: ModelKind) -> Option<(f64, f64)> {
        use ModelKind::*;
        use SweepParameter::*;
        match (self, kind) {
            (ContextSize, VaeNs) => Some((2.0, 20.0)),
            (AttentionSteps, VaeStn) => Some((20.0, 90.0)),
            (Beta, VaeStn) => Some((0.25, 4.0)),
            (Beta, VaeNs) => Some((0.25, 5.0)),
            (LatentSize, VaeNs) => Some((5.0, 100.0)),
            (LatentSize, VaeStn) => Some((5.0, 400.0)),
            (LatentSize, DaganUn) => Some((10.0, 1000.0)),
            (LatentSize, DaganRn) => Some((10.0, 500.0)),
            _ => None,
        }
    }

    /// Uniform grid matching the reported number of points per seed.
    pub fn default_grid(self, kind: ModelKind) -> Option<Vec<f64>> {
        let (lo, hi) = self.range(kind)?;
        Some(match self {
            SweepParameter::ContextSize => (2..=20).map(f64::from).collect(),
            SweepParameter::AttentionSteps => (2..=9).map(|k| f64::from(k * 10)).collect(),
            SweepParameter::Beta => {
                let n = (hi / 0.25).round() as u32;
                (1..=n).map(|k| f64::from(k) * 0.25).collect()
            }
            SweepParameter::LatentSize => {
                let n = 8;
                (0..n).map(|k| (lo + (hi - lo) * f64::from(k) / f64::from(n - 1)).round()).collect()
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub model_kind: ModelKind,
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Remaining hyper-parameters, passed through to the cell runner.
    #[serde(default)]
    pub fixed_config: serde_json::Value,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let Some((lo, hi)) = self.parameter.range(self.model_kind) else {
            return Err(Error::InvalidArgument(format!(
                "{} cannot be swept for {}",
                self.parameter.as_str(),
                self.model_kind
            )));
        };
        if self.values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("sweep values must be strictly increasing".into()));
        }
        if let Some(v) = self.values.iter().find(|v| !(lo..=hi).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "{} = {v} outside [{lo}, {hi}]",
                self.parameter.as_str()
            )));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::InvalidArgument("duplicate sweep seeds".into()));
        }
        Ok(())
    }

    /// Cells in value-major order.
    pub fn cells(&self) -> Vec<CellKey> {
        self.values
            .iter()
            .flat_map(|&value| self.seeds.iter().map(move |&seed| CellKey { value, seed }))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub value: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Pending,
    Done {
        point: ModelPoint,
        checkpoint: Option<PathBuf>,
    },
    Failed {
        reason: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub key: CellKey,
    #[serde(flatten)]
    pub status: CellStatus,
}

/// What a runner reports for one finished cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellOutcome {
    pub point: ModelPoint,
    pub checkpoint: Option<PathBuf>,
}

/// Trains and evaluates one sweep cell.
pub trait CellRunner: Sync {
    fn run(&self, spec: &SweepSpec, cell: CellKey) -> std::result::Result<CellOutcome, String>;
}

impl<F> CellRunner for F
where
    F: Fn(&SweepSpec, CellKey) -> std::result::Result<CellOutcome, String> + Sync,
{
    fn run(&self, spec: &SweepSpec, cell: CellKey) -> std::result::Result<CellOutcome, String> {
        self(spec, cell)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn seeds(&self) -> &[u64] {
        &self.spec.seeds
    }

    /// Finished `(value, point)` pairs of one seed, in value order.
    pub fn series(&self, seed: u64) -> Vec<(f64, &ModelPoint)> {
        self.cells
            .iter()
            .filter(|c| c.key.seed == seed)
            .filter_map(|c| match &c.status {
                CellStatus::Done { point, .. } => Some((c.key.value, point)),
                _ => None,
            })
            .collect()
    }

    pub fn failures(&self) -> Vec<(CellKey, &str)> {
        self.cells
            .iter()
            .filter_map(|c| match &c.status {
                CellStatus::Failed { reason } => Some((c.key, reason.as_str())),
                _ => None,
            })
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        self.cells.iter().all(|c| matches!(c.status, CellStatus::Done { .. }))
    }
}

pub fn load_sweep_manifest(path: &Path) -> Result<SweepResult> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn save(path: &Path, result: &SweepResult) -> Result<()> {
    let json = serde_json::to_string_pretty(result).map_err(|e| Error::json(path, e))?;
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Runs every cell not already finished, persisting the manifest at
/// `manifest` (if given) after each cell. An existing manifest for the same
/// spec is resumed: finished cells are kept and pending or failed cells are
/// retried. Failing cells are recorded and do not stop the sweep.
pub fn run_sweep(
    spec: &SweepSpec,
    runner: &dyn CellRunner,
    manifest: Option<&Path>,
    workers: usize,
) -> Result<SweepResult> {
    spec.validate()?;
    let mut result = SweepResult {
        spec: spec.clone(),
        cells: spec
            .cells()
            .into_iter()
            .map(|key| SweepCell {
                key,
                status: CellStatus::Pending,
            })
            .collect(),
    };
    if let Some(path) = manifest.filter(|p| p.exists()) {
        let previous = load_sweep_manifest(path)?;
        if previous.spec != *spec {
            return Err(Error::InvalidArgument(format!(
                "{} belongs to a different sweep spec",
                path.display()
            )));
        }
        result = previous;
    }
    let todo: Vec<usize> = result
        .cells
        .iter()
        .enumerate()
        .filter(|(_, c)| !matches!(c.status, CellStatus::Done { .. }))
        .map(|(i, _)| i)
        .collect();
    if let Some(path) = manifest {
        save(path, &result)?;
    }
    if todo.is_empty() {
        return Ok(result);
    }

    let shared = Mutex::new((result, None::<Error>));
    let queue = Mutex::new(todo.into_iter());
    let worker = || loop {
        let Some(i) = queue.lock().expect("queue lock").next() else {
            break;
        };
        let key = shared.lock().expect("result lock").0.cells[i].key;
        log::info!("sweep cell {}={} seed {}", spec.parameter.as_str(), key.value, key.seed);
        let status = match runner.run(spec, key) {
            Ok(o) => CellStatus::Done {
                point: o.point,
                checkpoint: o.checkpoint,
            },
            Err(reason) => {
                log::warn!("sweep cell {} seed {} failed: {reason}", key.value, key.seed);
                CellStatus::Failed { reason }
            }
        };
        let mut guard = shared.lock().expect("result lock");
        guard.0.cells[i].status = status;
        if let Some(path) = manifest {
            if let Err(e) = save(path, &guard.0) {
                guard.1.get_or_insert(e);
            }
        }
    };
    std::thread::scope(|s| {
        for _ in 0..workers.max(1) {
            s.spawn(worker);
        }
    });
    let (result, error) = shared.into_inner().expect("result lock");
    match error {
        Some(e) => Err(e),
        None => Ok(result),
    }
}
