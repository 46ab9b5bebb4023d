//! Hierarchical VAE over sets of same-concept drawings: a statistic network
//! pools per-image features into a context latent `c`, and each image gets
//! its own latent `z` with a `c`-conditioned prior.

use oneshot_core::data::{make_context_batches, ConceptDataset};
use oneshot_core::seed;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::{nn, nn::OptimizerConfig, Device, Kind, Reduction, Tensor};

use crate::error::{Error, Result};
use crate::generator::noise_rows;
use crate::layers::{BatchNorm, BnMode, Conv2d, ConvTranspose2d, Linear};
use crate::tensor::{bitmaps_to_tensor, randn, scalar};
use crate::train::{check_loss, TrainingLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeNsConfig {
    pub context_size: usize,
    /// Per-image latent width.
    pub latent_size: i64,
    pub context_latent_size: i64,
    pub hidden: i64,
    /// Weight on the per-image KL term.
    pub beta: f64,
    pub epochs: usize,
    /// Context sets per optimizer step.
    pub batch: usize,
    pub lr: f64,
    pub grad_clip: f64,
    pub steps_per_epoch: Option<usize>,
}

impl Default for VaeNsConfig {
    fn default() -> Self {
        VaeNsConfig {
            context_size: 5,
            latent_size: 32,
            context_latent_size: 256,
            hidden: 256,
            beta: 1.0,
            epochs: 300,
            batch: 32,
            lr: 1e-3,
            grad_clip: 5.0,
            steps_per_epoch: None,
        }
    }
}

impl VaeNsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=20).contains(&self.context_size) {
            return Err(Error::Config(format!("context_size must lie in [1, 20], got {}", self.context_size)));
        }
        if self.latent_size <= 0 || self.context_latent_size <= 0 || self.hidden <= 0 {
            return Err(Error::Config("vae_ns widths must be positive".into()));
        }
        if !(self.beta >= 0.0) || !(self.lr > 0.0) || self.batch == 0 {
            return Err(Error::Config("vae_ns needs beta ≥ 0, lr > 0, batch ≥ 1".into()));
        }
        Ok(())
    }
}

const ENC_CHANNELS: [i64; 4] = [32, 64, 128, 256];
const FEATURE_SIDE: i64 = 4;

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

    fn forward(&self, x: &Tensor, mode: BnMode) -> Tensor {
        self.bn.forward(&self.conv.forward(x), mode).elu()
    }
}

/// Bias-free linear map with batch norm, optionally followed by ELU.
#[derive(Debug)]
struct FcBlock {
    fc: Linear,
    bn: BatchNorm,
}

impl FcBlock {
    fn new(p: &nn::Path, input: i64, output: i64, rng: &mut ChaCha8Rng) -> Self {
        FcBlock {
            fc: Linear::with_bias(&(p / "fc"), input, output, false, rng),
            bn: BatchNorm::new(&(p / "bn"), output),
        }
    }

    fn linear(&self, x: &Tensor, mode: BnMode) -> Tensor {
        self.bn.forward(&self.fc.forward(x), mode)
    }

    fn forward(&self, x: &Tensor, mode: BnMode) -> Tensor {
        self.linear(x, mode).elu()
    }
}

/// `ELU(x + f(x))` over three blocks.
#[derive(Debug)]
struct Residual {
    blocks: Vec<FcBlock>,
}

impl Residual {
    fn new(p: &nn::Path, width: i64, rng: &mut ChaCha8Rng) -> Self {
        Residual {
            blocks: (0..3).map(|i| FcBlock::new(&(p / i), width, width, rng)).collect(),
        }
    }

    fn forward(&self, x: &Tensor, mode: BnMode) -> Tensor {
        let last = self.blocks.len() - 1;
        let mut h = x.shallow_clone();
        for (i, b) in self.blocks.iter().enumerate() {
            h = if i < last { b.forward(&h, mode) } else { b.linear(&h, mode) };
        }
        (x + h).elu()
    }
}

/// Linear output split into mean and log-variance, normalized as a single
/// channel.
#[derive(Debug)]
struct GaussianHead {
    fc: Linear,
    bn: BatchNorm,
    width: i64,
}

impl GaussianHead {
    fn new(p: &nn::Path, input: i64, width: i64, rng: &mut ChaCha8Rng) -> Self {
        GaussianHead {
            fc: Linear::new(&(p / "fc"), input, 2 * width, rng),
            bn: BatchNorm::new(&(p / "bn"), 1),
            width,
        }
    }

    fn forward(&self, x: &Tensor, mode: BnMode) -> (Tensor, Tensor) {
        let n = x.size()[0];
        let y = self.bn.forward(&self.fc.forward(x).view([n, 1, 2 * self.width]), mode).view([n, 2 * self.width]);
        (y.narrow(1, 0, self.width), y.narrow(1, self.width, self.width))
    }
}

#[derive(Debug)]
struct ObsDecoder {
    from_z: FcBlock,
    from_c: FcBlock,
    expand: FcBlock,
    b0: ConvBlock,
    b1: ConvBlock,
    up0: ConvTranspose2d,
    b2: ConvBlock,
    b3: ConvBlock,
    up1: ConvTranspose2d,
    b4: ConvBlock,
    trim0: Conv2d,
    up2: ConvTranspose2d,
    b5: ConvBlock,
    trim1: Conv2d,
    up3: ConvTranspose2d,
    out: Conv2d,
}

impl ObsDecoder {
    fn new(p: &nn::Path, cfg: &VaeNsConfig, rng: &mut ChaCha8Rng) -> Self {
        let h = cfg.hidden;
        let top = ENC_CHANNELS[3];
        ObsDecoder {
            from_z: FcBlock::new(&(p / "from_z"), cfg.latent_size, h, rng),
            from_c: FcBlock::new(&(p / "from_c"), cfg.context_latent_size, h, rng),
            expand: FcBlock::new(&(p / "expand"), h, top * FEATURE_SIDE * FEATURE_SIDE, rng),
            b0: ConvBlock::new(&(p / "b0"), top, top, 1, rng),
            b1: ConvBlock::new(&(p / "b1"), top, top, 1, rng),
            up0: ConvTranspose2d::new(&(p / "up0"), top, top, 2, 2, 0, 0, rng),
            b2: ConvBlock::new(&(p / "b2"), top, 128, 1, rng),
            b3: ConvBlock::new(&(p / "b3"), 128, 128, 1, rng),
            up1: ConvTranspose2d::new(&(p / "up1"), 128, 128, 2, 2, 0, 0, rng),
            b4: ConvBlock::new(&(p / "b4"), 128, 64, 1, rng),
            trim0: Conv2d::new(&(p / "trim0"), 64, 64, 4, 1, 0, rng),
            up2: ConvTranspose2d::new(&(p / "up2"), 64, 64, 2, 2, 0, 0, rng),
            b5: ConvBlock::new(&(p / "b5"), 64, 32, 1, rng),
            trim1: Conv2d::new(&(p / "trim1"), 32, 32, 2, 1, 0, rng),
            up3: ConvTranspose2d::new(&(p / "up3"), 32, 32, 2, 2, 0, 0, rng),
            out: Conv2d::new(&(p / "out"), 32, 1, 1, 1, 0, rng),
        }
    }

    /// Bernoulli logits of shape `(n, 1, 50, 50)`.
    fn forward(&self, z: &Tensor, c: &Tensor, m: BnMode) -> Tensor {
        let n = z.size()[0];
        let h = (self.from_z.linear(z, m) + self.from_c.linear(c, m)).elu();
        let x = self.expand.forward(&h, m).view([n, ENC_CHANNELS[3], FEATURE_SIDE, FEATURE_SIDE]);
        let x = self.b1.forward(&self.b0.forward(&x, m), m);
        let x = self.up0.forward(&x).elu();
        let x = self.b3.forward(&self.b2.forward(&x, m), m);
        let x = self.up1.forward(&x).elu();
        let x = self.trim0.forward(&self.b4.forward(&x, m)).elu();
        let x = self.up2.forward(&x).elu();
        let x = self.trim1.forward(&self.b5.forward(&x, m)).elu();
        let x = self.up3.forward(&x).elu();
        self.out.forward(&x)
    }
}

#[derive(Debug)]
pub struct VaeNs {
    config: VaeNsConfig,
    vs: nn::VarStore,
    encoder: Vec<ConvBlock>,
    instance: FcBlock,
    pooled: Vec<FcBlock>,
    context_head: GaussianHead,
    inf_h: FcBlock,
    inf_c: FcBlock,
    inf_res: Residual,
    inf_head: GaussianHead,
    prior_in: Linear,
    prior_res: Residual,
    prior_head: GaussianHead,
    decoder: ObsDecoder,
}

fn gaussian_kl(mu_q: &Tensor, logvar_q: &Tensor, mu_p: &Tensor, logvar_p: &Tensor) -> Tensor {
    let t = logvar_p - logvar_q + (logvar_q.exp() + (mu_q - mu_p).square()) / logvar_p.exp() - 1.0;
    t.sum_dim_intlist(1, false, Kind::Float) * 0.5
}

fn reparameterize(mu: &Tensor, logvar: &Tensor, eps: &Tensor) -> Tensor {
    mu + (logvar * 0.5).exp() * eps
}

impl VaeNs {
    pub fn new(config: VaeNsConfig, device: Device, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed::derive(seed, "vae-ns-init"));
        let vs = nn::VarStore::new(device);
        let root = vs.root();
        let r = &mut rng;
        let mut encoder = Vec::new();
        let mut input = 1;
        for (g, &ch) in ENC_CHANNELS.iter().enumerate() {
            for k in 0..3 {
                let stride = if k == 2 { 2 } else { 1 };
                encoder.push(ConvBlock::new(&(&root / "enc" / (3 * g + k)), input, ch, stride, r));
                input = ch;
            }
        }
        let h = config.hidden;
        let feat = ENC_CHANNELS[3] * FEATURE_SIDE * FEATURE_SIDE;
        let cz = config.context_latent_size;
        let stat = &root / "stat";
        let instance = FcBlock::new(&(&stat / "instance"), feat, h, r);
        let pooled = (0..2).map(|i| FcBlock::new(&(&stat / "pooled" / i), h, h, r)).collect();
        let context_head = GaussianHead::new(&(&stat / "head"), h, cz, r);
        let inf = &root / "inference";
        let inf_h = FcBlock::new(&(&inf / "h"), h, h, r);
        let inf_c = FcBlock::new(&(&inf / "c"), cz, h, r);
        let inf_res = Residual::new(&(&inf / "res"), h, r);
        let inf_head = GaussianHead::new(&(&inf / "head"), h, config.latent_size, r);
        let prior = &root / "prior";
        let prior_in = Linear::new(&(&prior / "in"), cz, h, r);
        let prior_res = Residual::new(&(&prior / "res"), h, r);
        let prior_head = GaussianHead::new(&(&prior / "head"), h, config.latent_size, r);
        let decoder = ObsDecoder::new(&(&root / "dec"), &config, r);
        Ok(VaeNs {
            config,
            vs,
            encoder,
            instance,
            pooled,
            context_head,
            inf_h,
            inf_c,
            inf_res,
            inf_head,
            prior_in,
            prior_res,
            prior_head,
            decoder,
        })
    }

    pub fn config(&self) -> &VaeNsConfig {
        &self.config
    }

    pub fn var_store(&self) -> &nn::VarStore {
        &self.vs
    }

    pub fn var_store_mut(&mut self) -> &mut nn::VarStore {
        &mut self.vs
    }

    /// Per-image features `(n, hidden)`.
    fn features(&self, x: &Tensor, m: BnMode) -> Tensor {
        let n = x.size()[0];
        let h = self.encoder.iter().fold(x.shallow_clone(), |h, b| b.forward(&h, m));
        self.instance.forward(&h.view([n, -1]), m)
    }

    /// q(c | set) from features shaped `(sets, k, hidden)`.
    fn context(&self, feats: &Tensor, m: BnMode) -> (Tensor, Tensor) {
        let pooled = feats.mean_dim(1, false, Kind::Float);
        let h = self.pooled.iter().fold(pooled, |h, b| b.forward(&h, m));
        self.context_head.forward(&h, m)
    }

    fn prior(&self, c: &Tensor, m: BnMode) -> (Tensor, Tensor) {
        let h = self.prior_in.forward(c).elu();
        self.prior_head.forward(&self.prior_res.forward(&h, m), m)
    }

    /// Negative ELBO per context set for images shaped `(sets, k, 1, 50, 50)`,
    /// with the reconstruction and both KL terms.
    pub fn loss(&self, sets: &Tensor, rng: &mut ChaCha8Rng, m: BnMode) -> (Tensor, Tensor, Tensor, Tensor) {
        let size = sets.size();
        let (b, k) = (size[0], size[1]);
        let device = sets.device();
        let x = sets.view([b * k, 1, size[3], size[4]]);
        let feats = self.features(&x, m);
        let hidden = self.config.hidden;
        let (mu_c, logvar_c) = self.context(&feats.view([b, k, hidden]), m);
        let c = reparameterize(&mu_c, &logvar_c, &randn(rng, &[b, self.config.context_latent_size], device));
        let c_rep = c.unsqueeze(1).expand([b, k, self.config.context_latent_size], false).reshape([b * k, -1]);
        let h = (self.inf_h.linear(&feats, m) + self.inf_c.linear(&c_rep, m)).elu();
        let (mu_z, logvar_z) = self.inf_head.forward(&self.inf_res.forward(&h, m), m);
        let z = reparameterize(&mu_z, &logvar_z, &randn(rng, &[b * k, self.config.latent_size], device));
        let (mu_p, logvar_p) = self.prior(&c_rep, m);
        let logits = self.decoder.forward(&z, &c_rep, m);
        let recon = logits.binary_cross_entropy_with_logits::<Tensor>(&x, None, None, Reduction::Sum) / b as f64;
        let kl_z = gaussian_kl(&mu_z, &logvar_z, &mu_p, &logvar_p).sum(Kind::Float) / b as f64;
        let zeros = mu_c.zeros_like();
        let kl_c = gaussian_kl(&mu_c, &logvar_c, &zeros, &zeros).mean(Kind::Float);
        let total = &recon + &kl_z * self.config.beta + &kl_c;
        (total, recon, kl_z, kl_c)
    }

    /// Each prototype forms a one-image context set; `c` is drawn from its
    /// posterior and `z` from the conditional prior.
    pub fn sample(&self, prototypes: &Tensor, mut rngs: Vec<ChaCha8Rng>) -> Result<Tensor> {
        let m = BnMode::Eval;
        let n = prototypes.size()[0];
        let device = prototypes.device();
        let feats = self.features(prototypes, m).view([n, 1, self.config.hidden]);
        let (mu_c, logvar_c) = self.context(&feats, m);
        let c = reparameterize(&mu_c, &logvar_c, &noise_rows(&mut rngs, self.config.context_latent_size, device));
        let (mu_p, logvar_p) = self.prior(&c, m);
        let z = reparameterize(&mu_p, &logvar_p, &noise_rows(&mut rngs, self.config.latent_size, device));
        Ok(self.decoder.forward(&z, &c, m).sigmoid())
    }

    pub(crate) fn train(&mut self, data: &ConceptDataset, seed: u64, log: &mut TrainingLog) -> Result<usize> {
        let cfg = self.config.clone();
        let device = self.vs.device();
        let mut opt = nn::Adam::default().build(&self.vs, cfg.lr)?;
        let k = cfg.context_size as i64;
        for epoch in 0..cfg.epochs {
            let epoch_seed = seed::derive_indexed(seed, "vae-ns-epoch", epoch as u64);
            let sets: Vec<_> = make_context_batches(data, cfg.context_size, epoch_seed)?.collect();
            let mut rng = seed::rng(seed::derive(epoch_seed, "noise"));
            // Batch statistics need at least two sets per step.
            let mut steps: Vec<_> = sets.chunks(cfg.batch).filter(|c| c.len() > 1).collect();
            if steps.is_empty() {
                return Err(Error::Config("vae_ns training needs at least two context sets per step".into()));
            }
            if let Some(cap) = cfg.steps_per_epoch {
                steps.truncate(cap.max(1));
            }
            let (mut total, mut recon_sum, mut klz_sum, mut klc_sum) = (0.0, 0.0, 0.0, 0.0);
            for (step, chunk) in steps.iter().enumerate() {
                let x = bitmaps_to_tensor(chunk.iter().flat_map(|s| s.images.iter().map(|i| &i.pixels)), device)
                    .view([chunk.len() as i64, k, 1, 50, 50]);
                let (loss, recon, kl_z, kl_c) = self.loss(&x, &mut rng, BnMode::Train);
                let v = scalar(&loss);
                check_loss(v, epoch, step)?;
                opt.zero_grad();
                loss.backward();
                opt.clip_grad_norm(cfg.grad_clip);
                opt.step();
                total += v;
                recon_sum += scalar(&recon);
                klz_sum += scalar(&kl_z);
                klc_sum += scalar(&kl_c);
            }
            let n = steps.len() as f64;
            log.push(
                epoch,
                total / n,
                cfg.lr,
                [("reconstruction", recon_sum / n), ("kl_z", klz_sum / n), ("kl_c", klc_sum / n)],
            );
        }
        Ok(cfg.epochs)
    }
}
