use oneshot_core::data::{sample_episode, ConceptDataset, Episode};
use oneshot_core::{seed, Bitmap};
use serde::{Deserialize, Serialize};
use tch::{nn, nn::OptimizerConfig, Kind, Tensor};

use crate::backbone::{trunk_forward, BackboneSpec};
use crate::classify::{check_sizes, ClassifierOutput, OneShotClassifier};
use crate::error::{Error, Result};
use crate::layers::BnMode;
use crate::tensor::{bitmaps_to_tensor, scalar, to_f32_vec, trainable_count, uniform_var};
use crate::train::{check_loss, TrainingLog};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MamlOrder {
    #[default]
    Second,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MamlConfig {
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub inner_steps_train: usize,
    pub inner_steps_test: usize,
    pub tasks_per_outer: usize,
    pub order: MamlOrder,
    pub ways: usize,
    /// Query images per class in each meta-training task.
    pub queries: usize,
    pub outer_steps: usize,
}

impl Default for MamlConfig {
    fn default() -> Self {
        MamlConfig {
            inner_lr: 1e-2,
            outer_lr: 1e-3,
            inner_steps_train: 5,
            inner_steps_test: 10,
            tasks_per_outer: 4,
            order: MamlOrder::Second,
            ways: 20,
            queries: 5,
            outer_steps: 5000,
        }
    }
}

impl MamlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_steps_test < self.inner_steps_train {
            return Err(Error::Config(format!(
                "inner_steps_test ({}) must be at least inner_steps_train ({})",
                self.inner_steps_test, self.inner_steps_train
            )));
        }
        if self.ways < 2 || self.tasks_per_outer == 0 || self.queries == 0 {
            return Err(Error::Config("maml needs ways ≥ 2, tasks_per_outer ≥ 1, queries ≥ 1".into()));
        }
        if !(self.inner_lr > 0.0 && self.outer_lr > 0.0) {
            return Err(Error::Config("maml learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Meta-learned classifier: the backbone trunk followed by a linear head
/// with one output per support slot. Batch normalization always uses the
/// statistics of the batch at hand.
#[derive(Debug)]
pub struct MetaClassifier {
    spec: BackboneSpec,
    config: MamlConfig,
    vs: nn::VarStore,
    params: Vec<Tensor>,
    outer_steps_done: usize,
}

impl MetaClassifier {
    pub fn new(spec: BackboneSpec, config: MamlConfig, device: tch::Device, seed: u64) -> Result<Self> {
        spec.validate()?;
        config.validate()?;
        let mut rng = seed::rng(seed::derive(seed, "maml-init"));
        let vs = nn::VarStore::new(device);
        let root = vs.root();
        let mut params = Vec::new();
        let mut cin = spec.in_channels;
        for b in 0..spec.blocks {
            let p = &root / format!("block{b}");
            let bound = 1.0 / ((cin * 9) as f64).sqrt();
            params.push(uniform_var(&(&p / "conv"), "weight", &[spec.channels, cin, 3, 3], bound, &mut rng));
            params.push(uniform_var(&(&p / "conv"), "bias", &[spec.channels], bound, &mut rng));
            params.push((&p / "bn").ones("weight", &[spec.channels]));
            params.push((&p / "bn").zeros("bias", &[spec.channels]));
            cin = spec.channels;
        }
        for (name, input, output) in [("fc1", spec.flat_dim(), spec.tap_dim), ("head", spec.tap_dim, config.ways as i64)] {
            let p = &root / name;
            let bound = 1.0 / (input as f64).sqrt();
            params.push(uniform_var(&p, "weight", &[output, input], bound, &mut rng));
            params.push(uniform_var(&p, "bias", &[output], bound, &mut rng));
        }
        Ok(MetaClassifier {
            spec,
            config,
            vs,
            params,
            outer_steps_done: 0,
        })
    }

    pub fn config(&self) -> &MamlConfig {
        &self.config
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn var_store(&self) -> &nn::VarStore {
        &self.vs
    }

    pub fn var_store_mut(&mut self) -> &mut nn::VarStore {
        &mut self.vs
    }

    pub fn param_count(&self) -> usize {
        trainable_count(&self.vs)
    }

    pub fn outer_steps_done(&self) -> usize {
        self.outer_steps_done
    }

    pub fn set_outer_steps_done(&mut self, steps: usize) {
        self.outer_steps_done = steps;
    }

    fn forward(&self, params: &[Tensor], x: &Tensor) -> Tensor {
        let n = self.spec.trunk_len();
        let tap = trunk_forward(&self.spec, &params[..n], None, x, BnMode::Batch);
        tap.relu().linear(&params[n], Some(&params[n + 1]))
    }

    /// Gradient steps on the support loss. With `create_graph` the returned
    /// weights stay differentiable with respect to the meta-parameters.
    fn adapt(&self, x: &Tensor, y: &Tensor, steps: usize, create_graph: bool) -> Vec<Tensor> {
        let mut fast: Vec<Tensor> = self.params.iter().map(Tensor::shallow_clone).collect();
        for _ in 0..steps {
            let loss = self.forward(&fast, x).cross_entropy_for_logits(y);
            let grads = Tensor::run_backward(&[&loss], &fast, create_graph, create_graph);
            fast = fast
                .iter()
                .zip(grads)
                .map(|(p, g)| {
                    let next = p - g * self.config.inner_lr;
                    if create_graph {
                        next
                    } else {
                        next.detach().set_requires_grad(true)
                    }
                })
                .collect();
        }
        fast
    }

    fn task_tensors(&self, episode: &Episode) -> (Tensor, Tensor, Tensor, Tensor) {
        let device = self.vs.device();
        let sx = bitmaps_to_tensor(episode.support.iter().map(|s| &s.image), device);
        let sy: Vec<i64> = episode.support.iter().map(|s| s.label as i64).collect();
        let qx = bitmaps_to_tensor(episode.query.iter().map(|q| &q.image), device);
        let qy: Vec<i64> = episode.query.iter().map(|q| q.label as i64).collect();
        (sx, Tensor::from_slice(&sy).to_device(device), qx, Tensor::from_slice(&qy).to_device(device))
    }
}

impl OneShotClassifier for MetaClassifier {
    fn name(&self) -> &str {
        "maml"
    }

    fn classify_support(&self, support: &[&Bitmap], queries: &[&Bitmap], labels: &[usize]) -> Result<Vec<ClassifierOutput>> {
        check_sizes(support, queries, labels)?;
        if support.len() != self.config.ways {
            return Err(Error::Episode(format!(
                "meta classifier head has {} outputs, support has {} slots",
                self.config.ways,
                support.len()
            )));
        }
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        let device = self.vs.device();
        let sx = bitmaps_to_tensor(support.iter().copied(), device);
        let sy = Tensor::arange(support.len() as i64, (Kind::Int64, device));
        let fast = self.adapt(&sx, &sy, self.config.inner_steps_test, false);
        let logits = tch::no_grad(|| self.forward(&fast, &bitmaps_to_tensor(queries.iter().copied(), device)));
        let flat = to_f32_vec(&logits)?;
        Ok(flat
            .chunks_exact(support.len())
            .zip(labels)
            .map(|(l, &label)| ClassifierOutput::from_logits(l.to_vec(), label))
            .collect())
    }
}

/// Second-order meta-training: each outer step adapts on the support of
/// `tasks_per_outer` tasks and backpropagates the summed query losses
/// through the inner updates.
pub fn train_maml(model: &mut MetaClassifier, train: &ConceptDataset, seed: u64) -> Result<TrainingLog> {
    let cfg = model.config.clone();
    let mut log = TrainingLog::default();
    if cfg.outer_steps == 0 {
        log.warn("0 outer steps requested; the meta classifier keeps its initialization");
        return Ok(log);
    }
    let mut opt = nn::Adam::default().build(&model.vs, cfg.outer_lr)?;
    const REPORT_EVERY: usize = 50;
    let (mut loss_sum, mut acc_sum, mut count) = (0.0, 0.0, 0usize);
    for step in 0..cfg.outer_steps {
        opt.zero_grad();
        let mut total = Tensor::zeros([], (Kind::Float, model.vs.device()));
        let mut acc = 0.0;
        for t in 0..cfg.tasks_per_outer {
            let s = seed::derive_indexed(seed, "maml-task", (step * cfg.tasks_per_outer + t) as u64);
            let ep = sample_episode(train, cfg.ways, 1, cfg.queries, s)?;
            let (sx, sy, qx, qy) = model.task_tensors(&ep);
            let fast = model.adapt(&sx, &sy, cfg.inner_steps_train, true);
            let logits = model.forward(&fast, &qx);
            total += logits.cross_entropy_for_logits(&qy);
            acc += scalar(&logits.argmax(-1, false).eq_tensor(&qy).to_kind(Kind::Float).mean(Kind::Float));
        }
        let total = total / cfg.tasks_per_outer as f64;
        let v = scalar(&total);
        check_loss(v, step / REPORT_EVERY, step)?;
        total.backward();
        opt.step();
        model.outer_steps_done += 1;
        loss_sum += v;
        acc_sum += acc / cfg.tasks_per_outer as f64;
        count += 1;
        if count == REPORT_EVERY || step + 1 == cfg.outer_steps {
            log.push(step, loss_sum / count as f64, cfg.outer_lr, [("train_accuracy", acc_sum / count as f64)]);
            (loss_sum, acc_sum, count) = (0.0, 0.0, 0);
        }
    }
    Ok(log)
}
