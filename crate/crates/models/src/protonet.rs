use oneshot_core::data::{sample_episode, ConceptDataset, Episode};
use oneshot_core::seed;
use serde::{Deserialize, Serialize};
use tch::{nn, nn::OptimizerConfig, Kind, Tensor};

use crate::backbone::Backbone;
use crate::classify::{episode_accuracy, ProtoNetClassifier};
use crate::error::{Error, Result};
use crate::layers::BnMode;
use crate::tensor::{bitmaps_to_tensor, scalar};
use crate::train::{check_loss, step_decay, TrainingLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtoNetConfig {
    pub epochs: usize,
    /// Images per epoch divided by this gives the episode count per epoch.
    pub batch: usize,
    pub lr: f64,
    pub lr_halve_every: usize,
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    /// Overrides the derived episode count.
    pub episodes_per_epoch: Option<usize>,
    pub eval_ways: usize,
    pub eval_episodes: usize,
}

impl Default for ProtoNetConfig {
    fn default() -> Self {
        ProtoNetConfig {
            epochs: 80,
            batch: 128,
            lr: 1e-3,
            lr_halve_every: 20,
            ways: 60,
            shots: 1,
            queries: 1,
            episodes_per_epoch: None,
            eval_ways: 20,
            eval_episodes: 100,
        }
    }
}

impl ProtoNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.ways < 2 || self.shots == 0 || self.queries == 0 {
            return Err(Error::Config("protonet needs batch ≥ 1, ways ≥ 2, shots ≥ 1, queries ≥ 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("protonet learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn episodes_for(&self, train: &ConceptDataset) -> usize {
        self.episodes_per_epoch
            .unwrap_or_else(|| train.num_images().div_ceil(self.batch))
            .max(1)
    }
}

/// Prototype loss of one episode: cross-entropy over negated squared
/// distances to the class-mean support embeddings. Returns (loss, accuracy).
pub fn episode_loss(backbone: &Backbone, episode: &Episode, mode: BnMode) -> (Tensor, f64) {
    let device = backbone.device();
    let mut support: Vec<_> = episode.support.iter().collect();
    support.sort_by_key(|s| s.label);
    let images = support.iter().map(|s| &s.image).chain(episode.query.iter().map(|q| &q.image));
    let x = bitmaps_to_tensor(images, device);
    let out = backbone.forward(&x, mode).out;
    let ns = support.len() as i64;
    let ways = episode.ways as i64;
    let protos = out.narrow(0, 0, ns).view([ways, episode.shots as i64, -1]).mean_dim(1, false, Kind::Float);
    let q = out.narrow(0, ns, episode.query.len() as i64);
    let logits = -(q.unsqueeze(1) - protos.unsqueeze(0)).square().sum_dim_intlist(-1, false, Kind::Float);
    let labels: Vec<i64> = episode.query.iter().map(|q| q.label as i64).collect();
    let target = Tensor::from_slice(&labels).to_device(device);
    let loss = logits.cross_entropy_for_logits(&target);
    let acc = scalar(&logits.argmax(-1, false).eq_tensor(&target).to_kind(Kind::Float).mean(Kind::Float));
    (loss, acc)
}

/// Episodic training of the metric extractor with Adam.
pub fn train_protonet(
    backbone: &mut Backbone,
    train: &ConceptDataset,
    test: Option<&ConceptDataset>,
    config: &ProtoNetConfig,
    seed: u64,
) -> Result<TrainingLog> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Config("protonet training split is empty".into()));
    }
    let mut log = TrainingLog::default();
    if config.epochs == 0 {
        log.warn("0 epochs requested; the backbone keeps its initialization");
        return Ok(log);
    }
    let mut opt = nn::Adam::default().build(backbone.var_store(), config.lr)?;
    let episodes = config.episodes_for(train);
    for epoch in 0..config.epochs {
        let lr = step_decay(config.lr, epoch, config.lr_halve_every);
        opt.set_lr(lr);
        let (mut loss_sum, mut acc_sum) = (0.0, 0.0);
        for step in 0..episodes {
            let s = seed::derive_indexed(seed, "protonet-episode", (epoch * episodes + step) as u64);
            let ep = sample_episode(train, config.ways, config.shots, config.queries, s)?;
            let (loss, acc) = episode_loss(backbone, &ep, BnMode::Train);
            let v = scalar(&loss);
            check_loss(v, epoch, step)?;
            opt.backward_step(&loss);
            loss_sum += v;
            acc_sum += acc;
        }
        let mut metrics = vec![("train_accuracy", acc_sum / episodes as f64)];
        if let Some(test) = test.filter(|t| t.len() >= config.eval_ways && config.eval_episodes > 0) {
            let clf = ProtoNetClassifier::new(backbone);
            let s = seed::derive_indexed(seed, "protonet-eval", epoch as u64);
            metrics.push(("test_accuracy", episode_accuracy(&clf, test, config.eval_ways, 1, config.eval_episodes, s)?));
        }
        log.push(epoch, loss_sum / episodes as f64, lr, metrics);
    }
    Ok(log)
}
