use oneshot_core::SIDE;
use serde::{Deserialize, Serialize};
use tch::{nn, Device, Tensor};

use crate::error::{Error, Result};
use crate::layers::{batch_norm, BnMode};
use crate::tensor::{ensure_finite, trainable_count, uniform_var};

/// Four-block convolutional embedding network shared by both extractors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub in_channels: i64,
    pub channels: i64,
    pub blocks: usize,
    pub tap_dim: i64,
    pub out_dim: i64,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec {
            in_channels: 1,
            channels: 64,
            blocks: 4,
            tap_dim: 256,
            out_dim: 128,
        }
    }
}

impl BackboneSpec {
    /// Spatial side after the pooling stack (floor halving per block).
    pub fn final_side(&self) -> i64 {
        (0..self.blocks).fold(SIDE as i64, |s, _| s / 2)
    }

    pub fn flat_dim(&self) -> i64 {
        let s = self.final_side();
        self.channels * s * s
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.final_side() == 0 {
            return Err(Error::Config(format!(
                "{} pooling blocks collapse a {SIDE}px input",
                self.blocks
            )));
        }
        if self.in_channels <= 0 || self.channels <= 0 || self.tap_dim <= 0 || self.out_dim <= 0 {
            return Err(Error::Config("backbone widths must be positive".into()));
        }
        Ok(())
    }

    /// Parameters in the trunk (conv blocks plus the first linear layer).
    pub fn trunk_len(&self) -> usize {
        4 * self.blocks + 2
    }
}

#[derive(Debug)]
pub struct BackboneOutput {
    /// First fully connected layer output, before its ReLU.
    pub tap: Tensor,
    pub out: Tensor,
}

/// The parameters live in a `VarStore` in a fixed order: per block conv
/// weight, conv bias, bn weight, bn bias; then fc1 weight, bias; then fc2
/// weight, bias. Running statistics are kept separately (mean, var per block).
#[derive(Debug)]
pub struct Backbone {
    spec: BackboneSpec,
    vs: nn::VarStore,
    params: Vec<Tensor>,
    stats: Vec<Tensor>,
}

impl Backbone {
    pub fn new(spec: BackboneSpec, device: Device, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = oneshot_core::seed::rng(oneshot_core::seed::derive(seed, "backbone-init"));
        let vs = nn::VarStore::new(device);
        let root = vs.root();
        let mut params = Vec::new();
        let mut stats = Vec::new();
        let mut cin = spec.in_channels;
        for b in 0..spec.blocks {
            let p = &root / format!("block{b}");
            let conv = &p / "conv";
            let bound = 1.0 / ((cin * 9) as f64).sqrt();
            params.push(uniform_var(&conv, "weight", &[spec.channels, cin, 3, 3], bound, &mut rng));
            params.push(uniform_var(&conv, "bias", &[spec.channels], bound, &mut rng));
            let bn = &p / "bn";
            params.push(bn.ones("weight", &[spec.channels]));
            params.push(bn.zeros("bias", &[spec.channels]));
            stats.push(bn.zeros_no_train("running_mean", &[spec.channels]));
            stats.push(bn.ones_no_train("running_var", &[spec.channels]));
            cin = spec.channels;
        }
        for (name, input, output) in [("fc1", spec.flat_dim(), spec.tap_dim), ("fc2", spec.tap_dim, spec.out_dim)] {
            let p = &root / name;
            let bound = 1.0 / (input as f64).sqrt();
            params.push(uniform_var(&p, "weight", &[output, input], bound, &mut rng));
            params.push(uniform_var(&p, "bias", &[output], bound, &mut rng));
        }
        Ok(Backbone { spec, vs, params, stats })
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

    pub fn device(&self) -> Device {
        self.vs.device()
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn trunk_params(&self) -> &[Tensor] {
        &self.params[..self.spec.trunk_len()]
    }

    pub fn stats(&self) -> &[Tensor] {
        &self.stats
    }

    pub fn param_count(&self) -> usize {
        trainable_count(&self.vs)
    }

    pub fn forward(&self, x: &Tensor, mode: BnMode) -> BackboneOutput {
        let tap = trunk_forward(&self.spec, self.trunk_params(), Some(&self.stats), x, mode);
        let out = head_forward(&self.params[self.spec.trunk_len()..], &tap);
        BackboneOutput { tap, out }
    }

    /// Evaluation-mode forward pass that reports the first layer producing
    /// a non-finite value.
    pub fn forward_checked(&self, x: &Tensor) -> Result<BackboneOutput> {
        let tap = trunk_impl(&self.spec, self.trunk_params(), Some(&self.stats), x, BnMode::Eval, true)?;
        let out = head_forward(&self.params[self.spec.trunk_len()..], &tap);
        ensure_finite(&out, "fc2")?;
        Ok(BackboneOutput { tap, out })
    }

    /// Copies parameters and running statistics from `other`.
    pub fn copy_from(&mut self, other: &Backbone) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::Config("cannot copy between different backbone specs".into()));
        }
        self.vs.copy(&other.vs)?;
        Ok(())
    }
}

/// Conv blocks, flatten, ReLU and the first linear layer. Without running
/// statistics, batch normalization falls back to batch statistics.
pub fn trunk_forward(spec: &BackboneSpec, params: &[Tensor], stats: Option<&[Tensor]>, x: &Tensor, mode: BnMode) -> Tensor {
    trunk_impl(spec, params, stats, x, mode, false).expect("unchecked forward")
}

/// ReLU followed by the projection layer `(weight, bias)`.
pub fn head_forward(params: &[Tensor], tap: &Tensor) -> Tensor {
    tap.relu().linear(&params[0], Some(&params[1]))
}

fn trunk_impl(
    spec: &BackboneSpec,
    params: &[Tensor],
    stats: Option<&[Tensor]>,
    x: &Tensor,
    mode: BnMode,
    check: bool,
) -> Result<Tensor> {
    let mut h = x.shallow_clone();
    for b in 0..spec.blocks {
        let p = &params[4 * b..4 * b + 4];
        h = h.conv2d(&p[0], Some(&p[1]), [1, 1], [1, 1], [1, 1], 1);
        h = match stats {
            Some(s) => batch_norm(&h, &p[2], &p[3], &s[2 * b], &s[2 * b + 1], mode),
            None => h.batch_norm(Some(&p[2]), Some(&p[3]), None::<&Tensor>, None, true, 0.1, 1e-5, false),
        };
        h = h.relu().max_pool2d([2, 2], [2, 2], [0, 0], [1, 1], false);
        if check {
            ensure_finite(&h, &format!("conv_block{}", b + 1))?;
        }
    }
    let fc = &params[4 * spec.blocks..4 * spec.blocks + 2];
    let tap = h.flatten(1, -1).relu().linear(&fc[0], Some(&fc[1]));
    if check {
        ensure_finite(&tap, "fc1")?;
    }
    Ok(tap)
}
