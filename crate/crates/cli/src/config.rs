//! Experiment configuration: a TOML tree with strict keys, merged over the
//! documented defaults and then over command-line flags.

use std::path::{Path, PathBuf};

use oneshot_core::analysis::ModelKind;
use oneshot_core::data::synthetic::SyntheticSpec;
use oneshot_core::metrics::DiversityMeasure;
use oneshot_models::backbone::BackboneSpec;
use oneshot_models::dagan::DaGanConfig;
use oneshot_models::embed::Tap;
use oneshot_models::generator::GeneratorConfig;
use oneshot_models::maml::MamlConfig;
use oneshot_models::protonet::ProtoNetConfig;
use oneshot_models::simclr::SimClrConfig;
use oneshot_models::vae_ns::VaeNsConfig;
use oneshot_models::vae_stn::VaeStnConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed; every component seed is derived from it.
    pub seed: u64,
    /// `cpu`, `cuda`, `cuda:N` or `auto`.
    pub device: String,
    pub data: DataConfig,
    pub extractor: ExtractorConfig,
    pub classifier: ClassifierConfig,
    pub model: ModelConfig,
    pub metrics: MetricsConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            device: "cpu".into(),
            data: DataConfig::default(),
            extractor: ExtractorConfig::default(),
            classifier: ClassifierConfig::default(),
            model: ModelConfig::default(),
            metrics: MetricsConfig::default(),
            sweep: SweepConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Omniglot root; `OMNIGLOT_ROOT` and `--root` take precedence.
    pub root: Option<PathBuf>,
    /// Prepared cache; defaults to `<output.dir>/data`.
    pub cache_dir: Option<PathBuf>,
    pub holdout_per_alphabet: usize,
    /// Defaults to a seed derived from the master seed.
    pub split_seed: Option<u64>,
    /// Procedural stand-in used when no root is given.
    pub synthetic: Option<SyntheticConfig>,
    /// Trains generators on this many training concepts only.
    pub train_subset: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            root: None,
            cache_dir: None,
            holdout_per_alphabet: 3,
            split_seed: None,
            synthetic: None,
            train_subset: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    /// Characters per alphabet.
    pub alphabets: Vec<usize>,
    pub samples_per_concept: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            alphabets: vec![12; 8],
            samples_per_concept: 20,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            alphabets: self.alphabets.clone(),
            samples_per_concept: self.samples_per_concept,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    #[default]
    Protonet,
    Simclr,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorConfig {
    pub backbone: BackboneSpec,
    /// Layer whose activations feed the diversity measure.
    pub tap: Tap,
    pub protonet: ProtoNetConfig,
    pub simclr: SimClrConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub maml: MamlConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vae_stn: VaeStnConfig,
    pub vae_ns: VaeNsConfig,
    pub dagan_un: DaGanConfig,
    pub dagan_rn: DaGanConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vae_stn: VaeStnConfig::default(),
            vae_ns: VaeNsConfig::default(),
            dagan_un: DaGanConfig::unet(),
            dagan_rn: DaGanConfig::resnet(),
        }
    }
}

impl ModelConfig {
    pub fn generator(&self, kind: ModelKind) -> GeneratorConfig {
        match kind {
            ModelKind::VaeStn => GeneratorConfig::VaeStn(self.vae_stn.clone()),
            ModelKind::VaeNs => GeneratorConfig::VaeNs(self.vae_ns.clone()),
            ModelKind::DaganUn => GeneratorConfig::DaganUn(self.dagan_un.clone()),
            ModelKind::DaganRn => GeneratorConfig::DaganRn(self.dagan_rn.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Generated samples per test concept.
    pub samples_per_concept: usize,
    pub diversity: DiversityMeasure,
    /// Support size of the recognizability classifier.
    pub ways: usize,
    /// Random distractor sets per concept.
    pub draws: usize,
    /// Evaluates only the first N test concepts (by id).
    pub max_concepts: Option<usize>,
    /// Writes sample-grid PNGs for this many concepts per model.
    pub grid_concepts: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            samples_per_concept: 20,
            diversity: DiversityMeasure::default(),
            ways: 20,
            draws: 10,
            max_concepts: None,
            grid_concepts: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Concurrent cells.
    pub workers: usize,
    /// Extractor checkpoint (path or run id) used to score cells.
    pub extractor: Option<String>,
    /// Classifier checkpoint (path or run id) used to score cells.
    pub classifier: Option<String>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            workers: 1,
            extractor: None,
            classifier: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("runs") }
    }
}

/// Recursively overlays `patch` onto `base`; tables merge, everything else
/// replaces.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn parse_tree(path: &Path, text: &str) -> Result<Value> {
    let is_json = path.extension().is_some_and(|e| e == "json");
    if is_json {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    } else {
        let t: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::to_value(t).map_err(CliError::config)
    }
}

/// Reads a TOML (or `.json`) file as an untyped tree.
pub fn read_tree(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_tree(path, &text)
}

impl ExperimentConfig {
    /// Defaults overlaid with the file at `path`, if any.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => Self::from_tree(read_tree(p)?).map_err(|e| CliError::Config(format!("{}: {e}", p.display()))),
        }
    }

    pub fn from_tree(tree: Value) -> Result<Self> {
        let mut base = serde_json::to_value(Self::default()).expect("defaults serialize");
        merge(&mut base, tree);
        let cfg: Self = serde_json::from_value(base).map_err(CliError::config)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.extractor.backbone.validate().map_err(CliError::config)?;
        self.extractor.protonet.validate().map_err(CliError::config)?;
        self.extractor.simclr.validate().map_err(CliError::config)?;
        self.classifier.maml.validate().map_err(CliError::config)?;
        for kind in ModelKind::ALL {
            self.model.generator(kind).validate().map_err(CliError::config)?;
        }
        let m = &self.metrics;
        if m.samples_per_concept < 2 || m.ways < 2 || m.draws == 0 {
            return Err(CliError::Config(
                "metrics needs samples_per_concept ≥ 2, ways ≥ 2 and draws ≥ 1".into(),
            ));
        }
        if self.sweep.workers == 0 {
            return Err(CliError::Config("sweep.workers must be at least 1".into()));
        }
        oneshot_models::tensor::parse_device(&self.device).map_err(CliError::config)?;
        Ok(())
    }

    pub fn snapshot(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn split_seed(&self) -> u64 {
        self.data
            .split_seed
            .unwrap_or_else(|| oneshot_core::seed::derive(self.seed, "weak-split"))
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.data.cache_dir.clone().unwrap_or_else(|| self.output.dir.join("data"))
    }

    pub fn device(&self) -> tch::Device {
        oneshot_models::tensor::parse_device(&self.device).expect("validated")
    }
}
