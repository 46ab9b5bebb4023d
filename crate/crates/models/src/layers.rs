//! Minimal layers holding their own parameters, initialized from a seeded
//! generator with PyTorch's default fan-in bounds.

use rand_chacha::ChaCha8Rng;
use tch::{nn, Tensor};

use crate::tensor::uniform_var;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// How batch normalization picks its statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics; running averages are updated.
    Train,
    /// Stored running averages.
    Eval,
    /// Batch statistics without touching the running averages.
    Batch,
}

impl BnMode {
    pub fn from_train(train: bool) -> Self {
        if train {
            BnMode::Train
        } else {
            BnMode::Eval
        }
    }
}

#[derive(Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(path: &nn::Path, input: i64, output: i64, rng: &mut ChaCha8Rng) -> Self {
        Self::with_bias(path, input, output, true, rng)
    }

    pub fn with_bias(path: &nn::Path, input: i64, output: i64, bias: bool, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = uniform_var(path, "weight", &[output, input], bound, rng);
        let bias = bias.then(|| uniform_var(path, "bias", &[output], bound, rng));
        Linear { weight, bias }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        x.linear(&self.weight, self.bias.as_ref())
    }
}

#[derive(Debug)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: i64,
    pub padding: i64,
}

impl Conv2d {
    pub fn new(
        path: &nn::Path,
        input: i64,
        output: i64,
        kernel: i64,
        stride: i64,
        padding: i64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = 1.0 / ((input * kernel * kernel) as f64).sqrt();
        let weight = uniform_var(path, "weight", &[output, input, kernel, kernel], bound, rng);
        let bias = Some(uniform_var(path, "bias", &[output], bound, rng));
        Conv2d {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        x.conv2d(
            &self.weight,
            self.bias.as_ref(),
            [self.stride, self.stride],
            [self.padding, self.padding],
            [1, 1],
            1,
        )
    }
}

#[derive(Debug)]
pub struct ConvTranspose2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: i64,
    pub padding: i64,
    pub output_padding: i64,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        path: &nn::Path,
        input: i64,
        output: i64,
        kernel: i64,
        stride: i64,
        padding: i64,
        output_padding: i64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = 1.0 / ((output * kernel * kernel) as f64).sqrt();
        let weight = uniform_var(path, "weight", &[input, output, kernel, kernel], bound, rng);
        let bias = uniform_var(path, "bias", &[output], bound, rng);
        ConvTranspose2d {
            weight,
            bias,
            stride,
            padding,
            output_padding,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        x.conv_transpose2d(
            &self.weight,
            Some(&self.bias),
            [self.stride, self.stride],
            [self.padding, self.padding],
            [self.output_padding, self.output_padding],
            1,
            [1, 1],
        )
    }
}

#[derive(Debug)]
pub struct BatchNorm {
    pub weight: Tensor,
    pub bias: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNorm {
    pub fn new(path: &nn::Path, features: i64) -> Self {
        BatchNorm {
            weight: path.ones("weight", &[features]),
            bias: path.zeros("bias", &[features]),
            running_mean: path.zeros_no_train("running_mean", &[features]),
            running_var: path.ones_no_train("running_var", &[features]),
        }
    }

    pub fn forward(&self, x: &Tensor, mode: BnMode) -> Tensor {
        batch_norm(x, &self.weight, &self.bias, &self.running_mean, &self.running_var, mode)
    }
}

/// Functional batch normalization over dimension 1.
pub fn batch_norm(x: &Tensor, weight: &Tensor, bias: &Tensor, mean: &Tensor, var: &Tensor, mode: BnMode) -> Tensor {
    match mode {
        BnMode::Train => x.batch_norm(Some(weight), Some(bias), Some(mean), Some(var), true, BN_MOMENTUM, BN_EPS, false),
        BnMode::Eval => x.batch_norm(Some(weight), Some(bias), Some(mean), Some(var), false, BN_MOMENTUM, BN_EPS, false),
        BnMode::Batch => x.batch_norm(Some(weight), Some(bias), None::<&Tensor>, None, true, BN_MOMENTUM, BN_EPS, false),
    }
}

/// Linear layers with ReLU between them (none after the last).
#[derive(Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(path: &nn::Path, widths: &[i64], rng: &mut ChaCha8Rng) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&(path / i), w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let last = self.layers.len() - 1;
        self.layers.iter().enumerate().fold(x.shallow_clone(), |h, (i, l)| {
            let h = l.forward(&h);
            if i < last {
                h.relu()
            } else {
                h
            }
        })
    }
}

/// Element count of a `widths` MLP with biases.
pub fn mlp_param_count(widths: &[i64]) -> i64 {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}
