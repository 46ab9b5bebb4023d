//! Image-conditioned adversarial generator: a densely connected encoder
//! summarizes the conditioning drawing, noise is injected at several
//! decoder resolutions, and a Wasserstein critic with gradient penalty
//! judges (conditioning, candidate) pairs.

use oneshot_core::data::ConceptDataset;
use oneshot_core::seed;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::{nn, nn::OptimizerConfig, Device, Kind, Tensor};

use crate::error::{Error, Result};
use crate::generator::{noise_rows, pair_tensors, PairSampler};
use crate::layers::{BatchNorm, BnMode, Conv2d, ConvTranspose2d, Linear};
use crate::tensor::{randn, scalar};
use crate::train::{check_loss, TrainingLog};

/// Generated-batch pixel std below which an epoch counts as collapsed.
pub const COLLAPSE_STD: f64 = 1e-3;
/// Consecutive collapsed epochs before a warning is logged.
pub const COLLAPSE_PATIENCE: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DaGanConfig {
    pub latent_size: i64,
    /// Encoder-to-decoder skips (U-Net variant) versus none.
    pub skip_connections: bool,
    pub decoder_channels: i64,
    pub critic_updates_per_gen: usize,
    pub gp_lambda: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Caps generator steps per epoch.
    pub steps_per_epoch: Option<usize>,
}

impl Default for DaGanConfig {
    fn default() -> Self {
        Self::unet()
    }
}

impl DaGanConfig {
    pub fn unet() -> Self {
        DaGanConfig {
            latent_size: 128,
            skip_connections: true,
            decoder_channels: 116,
            critic_updates_per_gen: 5,
            gp_lambda: 10.0,
            epochs: 30,
            batch: 32,
            lr: 1e-4,
            steps_per_epoch: None,
        }
    }

    pub fn resnet() -> Self {
        DaGanConfig {
            skip_connections: false,
            decoder_channels: 128,
            ..Self::unet()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_size <= 0 || self.decoder_channels <= 0 {
            return Err(Error::Config("dagan widths must be positive".into()));
        }
        if self.critic_updates_per_gen == 0 || self.batch < 2 {
            return Err(Error::Config("dagan needs ≥ 1 critic update and batch ≥ 2".into()));
        }
        if !(self.lr > 0.0) || !(self.gp_lambda >= 0.0) {
            return Err(Error::Config("dagan needs lr > 0 and gp_lambda ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug)]
struct ConvBlock {
    conv: Conv2d,
    bn: BatchNorm,
}

impl ConvBlock {
    fn new(p: &nn::Path, input: i64, output: i64, stride: i64, rng: &mut ChaCha8Rng) -> Self {
        ConvBlock {
            conv: Conv2d::new(&(p / "conv"), input, output, 3, stride, 1, rng),
            bn: BatchNorm::new(&(p / "bn"), output),
        }
    }

    fn forward(&self, x: &Tensor, m: BnMode) -> Tensor {
        self.bn.forward(&leaky(&self.conv.forward(x)), m)
    }
}

#[derive(Debug)]
enum Up {
    Deconv(ConvTranspose2d, BatchNorm),
    Same(ConvBlock),
}

impl Up {
    fn forward(&self, x: &Tensor, m: BnMode) -> Tensor {
        match self {
            Up::Deconv(d, bn) => bn.forward(&leaky(&d.forward(x)), m),
            Up::Same(b) => b.forward(x, m),
        }
    }
}

fn leaky(x: &Tensor) -> Tensor {
    x.maximum(&(x * 0.2))
}

/// Three densely connected convolutions; the previous-previous activation is
/// brought to the current resolution and joins the first one.
#[derive(Debug)]
struct EncBlock {
    pre: ConvBlock,
    l0: ConvBlock,
    l1: ConvBlock,
    l2: ConvBlock,
}

impl EncBlock {
    fn new(p: &nn::Path, in_pre: i64, in_cur: i64, out: i64, rng: &mut ChaCha8Rng) -> Self {
        EncBlock {
            pre: ConvBlock::new(&(p / "pre"), in_pre, in_pre, 2, rng),
            l0: ConvBlock::new(&(p / "l0"), in_cur + in_pre, out, 1, rng),
            l1: ConvBlock::new(&(p / "l1"), in_cur + out, out, 1, rng),
            l2: ConvBlock::new(&(p / "l2"), in_cur + 2 * out, out, 2, rng),
        }
    }

    fn forward(&self, pre: &Tensor, cur: &Tensor, m: BnMode) -> Tensor {
        let pre = self.pre.forward(pre, m);
        let a = self.l0.forward(&Tensor::cat(&[cur, &pre], 1), m);
        let b = self.l1.forward(&Tensor::cat(&[cur, &a], 1), m);
        self.l2.forward(&Tensor::cat(&[cur, &a, &b], 1), m)
    }
}

#[derive(Debug)]
struct DecBlock {
    l0: ConvBlock,
    l1: ConvBlock,
    up: Up,
}

impl DecBlock {
    fn new(p: &nn::Path, input: i64, out: i64, up: Option<i64>, rng: &mut ChaCha8Rng) -> Self {
        let l0 = ConvBlock::new(&(p / "l0"), input, out, 1, rng);
        let l1 = ConvBlock::new(&(p / "l1"), input + out, out, 1, rng);
        let up = match up {
            Some(output_padding) => Up::Deconv(
                ConvTranspose2d::new(&(p / "up"), input + 2 * out, out, 3, 2, 1, output_padding, rng),
                BatchNorm::new(&(p / "up_bn"), out),
            ),
            None => Up::Same(ConvBlock::new(&(p / "up"), input + 2 * out, out, 1, rng)),
        };
        DecBlock { l0, l1, up }
    }

    fn forward(&self, x: &Tensor, m: BnMode) -> Tensor {
        let a = self.l0.forward(x, m);
        let b = self.l1.forward(&Tensor::cat(&[x, &a], 1), m);
        self.up.forward(&Tensor::cat(&[x, &a, &b], 1), m)
    }
}

/// Noise projections: (channels, side) per injection point.
const NOISE_MAPS: [(i64, i64); 3] = [(8, 4), (4, 7), (2, 13)];
const HEAD_CHANNELS: i64 = 64;

#[derive(Debug)]
struct Generator {
    skip: bool,
    conv0: ConvBlock,
    enc: [EncBlock; 3],
    noise: Vec<Linear>,
    dec: Vec<DecBlock>,
    head: [ConvBlock; 2],
    out: Conv2d,
}

impl Generator {
    fn new(p: &nn::Path, cfg: &DaGanConfig, rng: &mut ChaCha8Rng) -> Self {
        let o = cfg.decoder_channels;
        let s = |c: i64| if cfg.skip_connections { c } else { 0 };
        let conv0 = ConvBlock::new(&(p / "conv0"), 1, 64, 2, rng);
        let enc = [
            EncBlock::new(&(p / "enc1"), 1, 64, 64, rng),
            EncBlock::new(&(p / "enc2"), 64, 64, 128, rng),
            EncBlock::new(&(p / "enc3"), 64, 128, 128, rng),
        ];
        let noise = NOISE_MAPS
            .iter()
            .enumerate()
            .map(|(i, &(c, side))| Linear::new(&(p / "noise" / i), cfg.latent_size, c * side * side, rng))
            .collect();
        let inputs = [
            128 + NOISE_MAPS[0].0,
            o + NOISE_MAPS[1].0 + s(128),
            o + NOISE_MAPS[2].0 + s(64),
            o + s(64),
            o + s(1),
        ];
        let ups = [Some(0), Some(0), Some(0), Some(1), None];
        let dec = inputs
            .iter()
            .zip(ups)
            .enumerate()
            .map(|(i, (&input, up))| DecBlock::new(&(p / "dec" / i), input, o, up, rng))
            .collect();
        let head = [
            ConvBlock::new(&(p / "head0"), o, HEAD_CHANNELS, 1, rng),
            ConvBlock::new(&(p / "head1"), HEAD_CHANNELS, HEAD_CHANNELS, 1, rng),
        ];
        let out = Conv2d::new(&(p / "out"), HEAD_CHANNELS, 1, 3, 1, 1, rng);
        Generator {
            skip: cfg.skip_connections,
            conv0,
            enc,
            noise,
            dec,
            head,
            out,
        }
    }

    /// Images in [0, 1] for conditioning inputs `x` and noise `z`.
    fn forward(&self, x: &Tensor, z: &Tensor, m: BnMode) -> Tensor {
        let n = x.size()[0];
        let e0 = self.conv0.forward(x, m);
        let e1 = self.enc[0].forward(x, &e0, m);
        let e2 = self.enc[1].forward(&e0, &e1, m);
        let e3 = self.enc[2].forward(&e1, &e2, m);
        let noise: Vec<Tensor> = self
            .noise
            .iter()
            .zip(NOISE_MAPS)
            .map(|(l, (c, side))| l.forward(z).view([n, c, side, side]))
            .collect();
        let skip = |t: &Tensor, rest: &[&Tensor]| {
            let mut parts = vec![t];
            parts.extend_from_slice(rest);
            Tensor::cat(&parts, 1)
        };
        let maybe = |t: &Tensor| if self.skip { vec![t.shallow_clone()] } else { Vec::new() };
        let mut h = self.dec[0].forward(&Tensor::cat(&[&e3, &noise[0]], 1), m);
        let extra1: Vec<Tensor> = std::iter::once(noise[1].shallow_clone()).chain(maybe(&e2)).collect();
        h = self.dec[1].forward(&skip(&h, &extra1.iter().collect::<Vec<_>>()), m);
        let extra2: Vec<Tensor> = std::iter::once(noise[2].shallow_clone()).chain(maybe(&e1)).collect();
        h = self.dec[2].forward(&skip(&h, &extra2.iter().collect::<Vec<_>>()), m);
        let extra3 = maybe(&e0);
        h = self.dec[3].forward(&skip(&h, &extra3.iter().collect::<Vec<_>>()), m);
        let extra4 = maybe(x);
        h = self.dec[4].forward(&skip(&h, &extra4.iter().collect::<Vec<_>>()), m);
        let h = self.head[1].forward(&self.head[0].forward(&h, m), m);
        self.out.forward(&h).sigmoid()
    }
}

#[derive(Debug)]
struct Critic {
    convs: Vec<Conv2d>,
    fc: Linear,
}

impl Critic {
    fn new(p: &nn::Path, rng: &mut ChaCha8Rng) -> Self {
        let widths = [2, 64, 128, 256, 256];
        let convs = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Conv2d::new(&(p / "conv" / i), w[0], w[1], 3, 2, 1, rng))
            .collect();
        Critic {
            convs,
            fc: Linear::new(&(p / "fc"), 256 * 4 * 4, 1, rng),
        }
    }

    fn forward(&self, condition: &Tensor, candidate: &Tensor) -> Tensor {
        let n = condition.size()[0];
        let h = self
            .convs
            .iter()
            .fold(Tensor::cat(&[condition, candidate], 1), |h, c| leaky(&c.forward(&h)));
        self.fc.forward(&h.view([n, -1])).view([n])
    }
}

#[derive(Debug)]
pub struct DaGan {
    config: DaGanConfig,
    gen_vs: nn::VarStore,
    critic_vs: nn::VarStore,
    generator: Generator,
    critic: Critic,
}

impl DaGan {
    pub fn new(config: DaGanConfig, device: Device, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed::derive(seed, "dagan-init"));
        let gen_vs = nn::VarStore::new(device);
        let critic_vs = nn::VarStore::new(device);
        let generator = Generator::new(&gen_vs.root(), &config, &mut rng);
        let critic = Critic::new(&critic_vs.root(), &mut rng);
        Ok(DaGan {
            config,
            gen_vs,
            critic_vs,
            generator,
            critic,
        })
    }

    pub fn config(&self) -> &DaGanConfig {
        &self.config
    }

    pub fn generator_store(&self) -> &nn::VarStore {
        &self.gen_vs
    }

    pub fn critic_store(&self) -> &nn::VarStore {
        &self.critic_vs
    }

    pub fn stores_mut(&mut self) -> (&mut nn::VarStore, &mut nn::VarStore) {
        (&mut self.gen_vs, &mut self.critic_vs)
    }

    pub fn sample(&self, prototypes: &Tensor, mut rngs: Vec<ChaCha8Rng>) -> Result<Tensor> {
        let z = noise_rows(&mut rngs, self.config.latent_size, prototypes.device());
        Ok(self.generator.forward(prototypes, &z, BnMode::Eval))
    }

    /// Critic loss `D(fake) − D(real) + λ·(‖∇D(x̂)‖ − 1)²` on interpolates.
    fn critic_loss(&self, cond: &Tensor, real: &Tensor, fake: &Tensor, rng: &mut ChaCha8Rng) -> Tensor {
        let n = real.size()[0];
        let alpha = Tensor::from_slice(
            &(0..n)
                .map(|_| rand::Rng::random::<f32>(rng))
                .collect::<Vec<f32>>(),
        )
        .view([n, 1, 1, 1])
        .to_device(real.device());
        let keep: Tensor = 1.0 - &alpha;
        let mix = (real * &alpha + fake * keep).detach().set_requires_grad(true);
        let score = self.critic.forward(cond, &mix);
        let grads = Tensor::run_backward(&[score.sum(Kind::Float)], &[&mix], true, true);
        let norm = (grads[0].view([n, -1]).square()
            .sum_dim_intlist(1, false, Kind::Float)
            + 1e-12)
            .sqrt();
        let penalty = (norm - 1.0).square().mean(Kind::Float);
        self.critic.forward(cond, fake).mean(Kind::Float) - self.critic.forward(cond, real).mean(Kind::Float)
            + penalty * self.config.gp_lambda
    }

    pub(crate) fn train(&mut self, data: &ConceptDataset, seed: u64, log: &mut TrainingLog) -> Result<usize> {
        let cfg = self.config.clone();
        let pairs = PairSampler::new(data)?;
        let device = self.gen_vs.device();
        let mut g_opt = nn::Adam::default().build(&self.gen_vs, cfg.lr)?;
        let mut c_opt = nn::Adam::default().build(&self.critic_vs, cfg.lr)?;
        let probe = pairs.concepts()[0][0].clone();
        let mut collapsed = 0usize;
        for epoch in 0..cfg.epochs {
            let mut rng = seed::rng(seed::derive_indexed(seed, "dagan-epoch", epoch as u64));
            let mut batches = pairs.epoch(cfg.batch, &mut rng);
            batches.retain(|b| b.len() > 1);
            if let Some(cap) = cfg.steps_per_epoch {
                batches.truncate(cap.max(1) * cfg.critic_updates_per_gen);
            }
            let (mut c_sum, mut g_sum, mut c_steps, mut g_steps) = (0.0, 0.0, 0usize, 0usize);
            for (step, batch) in batches.iter().enumerate() {
                let (real, cond) = pair_tensors(batch, device);
                let n = real.size()[0];
                let z = randn(&mut rng, &[n, cfg.latent_size], device);
                let fake = tch::no_grad(|| self.generator.forward(&cond, &z, BnMode::Batch));
                let c_loss = self.critic_loss(&cond, &real, &fake, &mut rng);
                let v = scalar(&c_loss);
                check_loss(v, epoch, step)?;
                c_opt.backward_step(&c_loss);
                c_sum += v;
                c_steps += 1;
                if (step + 1) % cfg.critic_updates_per_gen == 0 {
                    let z = randn(&mut rng, &[n, cfg.latent_size], device);
                    let fake = self.generator.forward(&cond, &z, BnMode::Train);
                    let g_loss = -self.critic.forward(&cond, &fake).mean(Kind::Float);
                    let v = scalar(&g_loss);
                    check_loss(v, epoch, step)?;
                    g_opt.backward_step(&g_loss);
                    // Critic gradients from the generator step are discarded.
                    c_opt.zero_grad();
                    g_sum += v;
                    g_steps += 1;
                }
            }
            let spread = self.probe_spread(&probe, seed)?;
            if spread < COLLAPSE_STD {
                collapsed += 1;
                if collapsed == COLLAPSE_PATIENCE {
                    log.warn(format!(
                        "possible mode collapse: generated std {spread:.2e} below {COLLAPSE_STD:.0e} for {COLLAPSE_PATIENCE} epochs"
                    ));
                }
            } else {
                collapsed = 0;
            }
            log.push(
                epoch,
                g_sum / g_steps.max(1) as f64,
                cfg.lr,
                [("critic_loss", c_sum / c_steps.max(1) as f64), ("sample_std", spread)],
            );
        }
        Ok(cfg.epochs)
    }

    /// Mean per-pixel std over a fixed batch of samples from one prototype.
    fn probe_spread(&self, probe: &oneshot_core::Bitmap, seed: u64) -> Result<f64> {
        let _guard = tch::no_grad_guard();
        let device = self.gen_vs.device();
        let n = 16;
        let protos = crate::tensor::bitmaps_to_tensor(std::iter::repeat_n(probe, n), device);
        let rngs = (0..n).map(|i| seed::rng(seed::derive_indexed(seed, "dagan-probe", i as u64))).collect();
        let imgs = self.sample(&protos, rngs)?;
        Ok(scalar(&imgs.std_dim(0, true, false).mean(Kind::Float)))
    }
}
