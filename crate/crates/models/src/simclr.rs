use oneshot_core::data::ConceptDataset;
use oneshot_core::{seed, Bitmap};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use tch::{nn, nn::OptimizerConfig, Kind, Tensor};

use crate::augment::{augment, AugmentationPolicy};
use crate::backbone::Backbone;
use crate::error::{Error, Result};
use crate::layers::BnMode;
use crate::tensor::{bitmaps_to_tensor, scalar};
use crate::train::{check_loss, TrainingLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimClrConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub temperature: f64,
    /// Caps the optimizer steps per epoch; `None` covers every image once.
    pub steps_per_epoch: Option<usize>,
    pub policy: AugmentationPolicy,
}

impl Default for SimClrConfig {
    fn default() -> Self {
        SimClrConfig {
            epochs: 100,
            batch: 128,
            lr: 1e-3,
            temperature: 0.5,
            steps_per_epoch: None,
            policy: AugmentationPolicy::moderate(),
        }
    }
}

impl SimClrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(Error::Config("contrastive batches need at least 2 images".into()));
        }
        if !(self.lr > 0.0 && self.temperature > 0.0) {
            return Err(Error::Config("learning rate and temperature must be positive".into()));
        }
        self.policy.validate()
    }
}

/// Normalized-temperature cross-entropy over two aligned batches of
/// projections. Row i of `a` and row i of `b` form the positive pair; the
/// other 2N−2 rows are negatives.
pub fn nt_xent(a: &Tensor, b: &Tensor, temperature: f64) -> Tensor {
    let n = a.size()[0];
    let z = Tensor::cat(&[a, b], 0);
    let z = &z / z.norm_scalaropt_dim(2, [1], true).clamp_min(1e-12);
    let sim = z.matmul(&z.transpose(0, 1)) / temperature;
    let eye = Tensor::eye(2 * n, (Kind::Float, a.device()));
    let sim = sim.masked_fill(&eye.to_kind(Kind::Bool), f64::NEG_INFINITY);
    let idx: Vec<i64> = (0..2 * n).map(|i| (i + n) % (2 * n)).collect();
    let target = Tensor::from_slice(&idx).to_device(a.device());
    sim.cross_entropy_for_logits(&target)
}

/// Contrastive training with RMSprop over pairs of augmented views; the
/// 256→128 layer serves as the projection head.
pub fn train_simclr(backbone: &mut Backbone, train: &ConceptDataset, config: &SimClrConfig, seed: u64) -> Result<TrainingLog> {
    config.validate()?;
    let images: Vec<Bitmap> = train.concepts().flat_map(|c| c.samples().collect::<Vec<_>>()).collect();
    if images.len() < 2 {
        return Err(Error::Config("contrastive training needs at least 2 images".into()));
    }
    let mut log = TrainingLog::default();
    if config.epochs == 0 {
        log.warn("0 epochs requested; the backbone keeps its initialization");
        return Ok(log);
    }
    let mut opt = nn::RmsProp::default().build(backbone.var_store(), config.lr)?;
    let device = backbone.device();
    let mut order: Vec<usize> = (0..images.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = seed::rng(seed::derive_indexed(seed, "simclr-epoch", epoch as u64));
        order.shuffle(&mut rng);
        let mut batches: Vec<&[usize]> = order.chunks(config.batch).filter(|c| c.len() >= 2).collect();
        if let Some(cap) = config.steps_per_epoch {
            batches.truncate(cap.max(1));
        }
        let mut loss_sum = 0.0;
        for (step, idx) in batches.iter().enumerate() {
            let v1: Vec<Bitmap> = idx.iter().map(|&i| augment(&config.policy, &images[i], &mut rng)).collect();
            let v2: Vec<Bitmap> = idx.iter().map(|&i| augment(&config.policy, &images[i], &mut rng)).collect();
            let x = bitmaps_to_tensor(v1.iter().chain(&v2), device);
            let out = backbone.forward(&x, BnMode::Train).out;
            let n = idx.len() as i64;
            let loss = nt_xent(&out.narrow(0, 0, n), &out.narrow(0, n, n), config.temperature);
            let v = scalar(&loss);
            check_loss(v, epoch, step)?;
            opt.backward_step(&loss);
            loss_sum += v;
        }
        log.push(epoch, loss_sum / batches.len().max(1) as f64, config.lr, []);
    }
    Ok(log)
}
