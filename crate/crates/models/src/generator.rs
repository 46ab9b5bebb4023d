use std::path::Path;

use oneshot_core::analysis::ModelKind;
use oneshot_core::data::ConceptDataset;
use oneshot_core::{seed, Bitmap};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::{nn, Device, Tensor};

use crate::checkpoint::{self, CheckpointMeta};
use crate::dagan::{DaGan, DaGanConfig};
use crate::error::{Error, Result};
use crate::tensor::{bitmaps_to_tensor, tensor_to_bitmaps, trainable_count};
use crate::train::TrainingLog;
use crate::vae_ns::{VaeNs, VaeNsConfig};
use crate::vae_stn::{VaeStn, VaeStnConfig};

/// Samples are produced in zero-padded chunks of this size with per-sample
/// noise streams, so sample `i` does not depend on `n`.
pub const GENERATE_CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorConfig {
    VaeStn(VaeStnConfig),
    VaeNs(VaeNsConfig),
    DaganUn(DaGanConfig),
    DaganRn(DaGanConfig),
}

impl GeneratorConfig {
    pub fn base(kind: ModelKind) -> Self {
        match kind {
            ModelKind::VaeStn => GeneratorConfig::VaeStn(VaeStnConfig::default()),
            ModelKind::VaeNs => GeneratorConfig::VaeNs(VaeNsConfig::default()),
            ModelKind::DaganUn => GeneratorConfig::DaganUn(DaGanConfig::unet()),
            ModelKind::DaganRn => GeneratorConfig::DaganRn(DaGanConfig::resnet()),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            GeneratorConfig::VaeStn(_) => ModelKind::VaeStn,
            GeneratorConfig::VaeNs(_) => ModelKind::VaeNs,
            GeneratorConfig::DaganUn(_) => ModelKind::DaganUn,
            GeneratorConfig::DaganRn(_) => ModelKind::DaganRn,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GeneratorConfig::VaeStn(c) => c.validate(),
            GeneratorConfig::VaeNs(c) => c.validate(),
            GeneratorConfig::DaganUn(c) if !c.skip_connections => {
                Err(Error::Config("dagan_un requires skip_connections = true".into()))
            }
            GeneratorConfig::DaganRn(c) if c.skip_connections => {
                Err(Error::Config("dagan_rn requires skip_connections = false".into()))
            }
            GeneratorConfig::DaganUn(c) | GeneratorConfig::DaganRn(c) => c.validate(),
        }
    }

    pub fn epochs(&self) -> usize {
        match self {
            GeneratorConfig::VaeStn(c) => c.epochs,
            GeneratorConfig::VaeNs(c) => c.epochs,
            GeneratorConfig::DaganUn(c) | GeneratorConfig::DaganRn(c) => c.epochs,
        }
    }

    pub fn set_epochs(&mut self, epochs: usize) {
        match self {
            GeneratorConfig::VaeStn(c) => c.epochs = epochs,
            GeneratorConfig::VaeNs(c) => c.epochs = epochs,
            GeneratorConfig::DaganUn(c) | GeneratorConfig::DaganRn(c) => c.epochs = epochs,
        }
    }
}

#[derive(Debug)]
enum Net {
    Stn(VaeStn),
    Ns(VaeNs),
    Gan(DaGan),
}

/// One of the four prototype-conditioned generators behind a common
/// sampling interface.
#[derive(Debug)]
pub struct GeneratorModel {
    config: GeneratorConfig,
    net: Net,
    epochs_completed: usize,
    seed: u64,
}

impl GeneratorModel {
    pub fn new(config: GeneratorConfig, device: Device, seed: u64) -> Result<Self> {
        config.validate()?;
        let net = match &config {
            GeneratorConfig::VaeStn(c) => Net::Stn(VaeStn::new(c.clone(), device, seed)?),
            GeneratorConfig::VaeNs(c) => Net::Ns(VaeNs::new(c.clone(), device, seed)?),
            GeneratorConfig::DaganUn(c) | GeneratorConfig::DaganRn(c) => Net::Gan(DaGan::new(c.clone(), device, seed)?),
        };
        Ok(GeneratorModel {
            config,
            net,
            epochs_completed: 0,
            seed,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind()
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn epochs_completed(&self) -> usize {
        self.epochs_completed
    }

    pub fn is_trained(&self) -> bool {
        self.epochs_completed > 0
    }

    /// Trainable generator parameters; the adversarial critic is excluded.
    pub fn param_count(&self) -> usize {
        trainable_count(self.generator_store())
    }

    fn generator_store(&self) -> &nn::VarStore {
        match &self.net {
            Net::Stn(m) => m.var_store(),
            Net::Ns(m) => m.var_store(),
            Net::Gan(m) => m.generator_store(),
        }
    }

    pub fn device(&self) -> Device {
        self.generator_store().device()
    }

    /// Trains for the configured number of epochs.
    pub fn train(&mut self, train: &ConceptDataset, seed: u64) -> Result<TrainingLog> {
        let mut log = TrainingLog::default();
        let epochs = self.config.epochs();
        if epochs == 0 {
            log.warn("0 epochs requested; the generator keeps its initialization");
            return Ok(log);
        }
        let done = match &mut self.net {
            Net::Stn(m) => m.train(train, seed, &mut log)?,
            Net::Ns(m) => m.train(train, seed, &mut log)?,
            Net::Gan(m) => m.train(train, seed, &mut log)?,
        };
        self.epochs_completed += done;
        Ok(log)
    }

    /// `n` samples conditioned on `prototype`, deterministic in `seed`.
    pub fn generate(&self, prototype: &Bitmap, n: usize, seed: u64, allow_untrained: bool) -> Result<Vec<Bitmap>> {
        if !self.is_trained() && !allow_untrained {
            return Err(Error::Untrained);
        }
        let _guard = tch::no_grad_guard();
        let device = self.device();
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let take = GENERATE_CHUNK.min(n - start);
            let rngs: Vec<ChaCha8Rng> = (0..GENERATE_CHUNK)
                .map(|i| seed::rng(seed::derive_indexed(seed, "generate", (start + i) as u64)))
                .collect();
            let protos = bitmaps_to_tensor(std::iter::repeat_n(prototype, GENERATE_CHUNK), device);
            let imgs = match &self.net {
                Net::Stn(m) => m.sample(&protos, rngs)?,
                Net::Ns(m) => m.sample(&protos, rngs)?,
                Net::Gan(m) => m.sample(&protos, rngs)?,
            };
            let mut bitmaps = tensor_to_bitmaps(&imgs)?;
            bitmaps.truncate(take);
            out.extend(bitmaps);
            start += take;
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<CheckpointMeta> {
        let config = serde_json::to_value(&self.config).expect("config serializes");
        let stores: Vec<(&str, &nn::VarStore)> = match &self.net {
            Net::Stn(m) => vec![("generator", m.var_store())],
            Net::Ns(m) => vec![("generator", m.var_store())],
            Net::Gan(m) => vec![("generator", m.generator_store()), ("critic", m.critic_store())],
        };
        checkpoint::save(
            path,
            self.kind().as_str(),
            &stores,
            self.param_count(),
            config,
            self.seed,
            self.epochs_completed,
            extra,
        )
    }

    pub fn load(path: &Path, device: Device) -> Result<Self> {
        let meta = checkpoint::read_meta(path)?;
        let config: GeneratorConfig = serde_json::from_value(meta.config.clone())
            .map_err(|e| Error::checkpoint(path, format!("unreadable generator config: {e}")))?;
        if config.kind().as_str() != meta.kind {
            return Err(Error::checkpoint(path, "sidecar kind does not match its config"));
        }
        let mut model = GeneratorModel::new(config, device, meta.seed)?;
        match &mut model.net {
            Net::Stn(m) => checkpoint::load_into(path, &meta, &mut [("generator", m.var_store_mut())])?,
            Net::Ns(m) => checkpoint::load_into(path, &meta, &mut [("generator", m.var_store_mut())])?,
            Net::Gan(m) => {
                let (g, c) = m.stores_mut();
                checkpoint::load_into(path, &meta, &mut [("generator", g), ("critic", c)])?
            }
        }
        model.epochs_completed = meta.epochs_completed;
        Ok(model)
    }
}

/// Per-concept sample lists for pairing a target image with a different
/// drawing of the same concept.
pub(crate) struct PairSampler {
    concepts: Vec<Vec<Bitmap>>,
}

impl PairSampler {
    pub fn new(dataset: &ConceptDataset) -> Result<Self> {
        let concepts: Vec<Vec<Bitmap>> = dataset
            .concepts()
            .map(|c| c.samples().collect::<Vec<_>>())
            .filter(|s| !s.is_empty())
            .collect();
        if concepts.is_empty() {
            return Err(Error::Config("generator training split is empty".into()));
        }
        Ok(PairSampler { concepts })
    }

    /// Shuffled `(target, conditioning)` batches covering every image once.
    pub fn epoch(&self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<(&Bitmap, &Bitmap)>> {
        let mut items: Vec<(usize, usize)> = self
            .concepts
            .iter()
            .enumerate()
            .flat_map(|(c, s)| (0..s.len()).map(move |i| (c, i)))
            .collect();
        items.shuffle(rng);
        items
            .chunks(batch)
            .map(|chunk| {
                chunk
                    .iter()
                    .map(|&(c, i)| {
                        let s = &self.concepts[c];
                        let j = if s.len() > 1 {
                            let k = rng.random_range(0..s.len() - 1);
                            if k >= i {
                                k + 1
                            } else {
                                k
                            }
                        } else {
                            i
                        };
                        (&s[i], &s[j])
                    })
                    .collect()
            })
            .collect()
    }

    pub fn concepts(&self) -> &[Vec<Bitmap>] {
        &self.concepts
    }
}

pub(crate) fn pair_tensors(batch: &[(&Bitmap, &Bitmap)], device: Device) -> (Tensor, Tensor) {
    (
        bitmaps_to_tensor(batch.iter().map(|p| p.0), device),
        bitmaps_to_tensor(batch.iter().map(|p| p.1), device),
    )
}

/// Stacks one noise row per generator stream.
pub(crate) fn noise_rows(rngs: &mut [ChaCha8Rng], width: i64, device: Device) -> Tensor {
    let rows: Vec<Tensor> = rngs
        .iter_mut()
        .map(|r| crate::tensor::randn(r, &[1, width], device))
        .collect();
    Tensor::cat(&rows, 0)
}

/// Held-out split of a training set by concept for plateau monitoring.
pub(crate) fn holdout_split(dataset: &ConceptDataset, fraction: f64, seed: u64) -> Result<(ConceptDataset, Option<ConceptDataset>)> {
    let mut ids = dataset.concept_ids();
    let k = ((ids.len() as f64) * fraction).floor() as usize;
    if k == 0 || k >= ids.len() {
        return Ok((dataset.clone(), None));
    }
    ids.shuffle(&mut seed::rng(seed::derive(seed, "generator-holdout")));
    let (eval, fit) = ids.split_at(k);
    let mut eval = eval.to_vec();
    let mut fit = fit.to_vec();
    eval.sort();
    fit.sort();
    Ok((dataset.subset(&fit, dataset.split)?, Some(dataset.subset(&eval, dataset.split)?)))
}
