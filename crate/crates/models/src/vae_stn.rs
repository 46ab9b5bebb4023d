//! Sequential attentive VAE: at each step three affine reads feed an
//! encoder, a latent sample plus the prototype patch drives a recurrent
//! cell, and a decoded patch is written back onto an additive canvas.

use oneshot_core::data::ConceptDataset;
use oneshot_core::{seed, SIDE};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::{nn, nn::OptimizerConfig, Device, Kind, Reduction, Tensor};

use crate::error::{Error, Result};
use crate::generator::{holdout_split, noise_rows, pair_tensors, PairSampler};
use crate::layers::{mlp_param_count, Mlp};
use crate::stn::{identity_affine, invert_affine, read, squash_affine, write};
use crate::tensor::{scalar, uniform_var};
use crate::train::{check_loss, ReduceOnPlateau, TrainingLog};

/// What the recurrent cell exposes to the encoder, decoder and
/// localization network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Hidden and cell state concatenated (width 2·lstm_size).
    #[default]
    HiddenCell,
    /// Hidden state only (width lstm_size).
    Hidden,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeStnConfig {
    pub latent_size: i64,
    pub lstm_size: i64,
    pub read_patch: i64,
    pub write_patch: i64,
    pub loc_input: i64,
    pub attention_steps: usize,
    pub beta: f64,
    pub readout: Readout,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub grad_clip: f64,
    pub plateau_patience: usize,
    pub eval_fraction: f64,
    /// Caps optimizer steps per epoch; `None` covers every image once.
    pub steps_per_epoch: Option<usize>,
}

impl Default for VaeStnConfig {
    fn default() -> Self {
        VaeStnConfig {
            latent_size: 80,
            lstm_size: 400,
            read_patch: 15,
            write_patch: 15,
            loc_input: 100,
            attention_steps: 60,
            beta: 1.0,
            readout: Readout::HiddenCell,
            epochs: 500,
            batch: 128,
            lr: 1e-3,
            grad_clip: 5.0,
            plateau_patience: 10,
            eval_fraction: 0.1,
            steps_per_epoch: None,
        }
    }
}

impl VaeStnConfig {
    pub fn readout_width(&self) -> i64 {
        match self.readout {
            Readout::HiddenCell => 2 * self.lstm_size,
            Readout::Hidden => self.lstm_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(20..=90).contains(&self.attention_steps) {
            return Err(Error::Config(format!(
                "attention_steps must lie in [20, 90], got {}",
                self.attention_steps
            )));
        }
        if self.latent_size <= 0 || self.lstm_size <= 0 || self.read_patch <= 0 || self.write_patch <= 0 {
            return Err(Error::Config("vae_stn widths must be positive".into()));
        }
        if self.loc_input <= 0 || self.loc_input >= self.readout_width() {
            return Err(Error::Config(format!(
                "loc_input {} must be positive and below the readout width {}",
                self.loc_input,
                self.readout_width()
            )));
        }
        if !(self.beta >= 0.0) || !(self.lr > 0.0) || self.batch == 0 {
            return Err(Error::Config("vae_stn needs beta ≥ 0, lr > 0, batch ≥ 1".into()));
        }
        Ok(())
    }

    fn enc_widths(&self) -> Vec<i64> {
        vec![3 * self.read_patch * self.read_patch + self.readout_width(), 1024, 1024, 512, 128, 2 * self.latent_size]
    }

    fn dec_widths(&self) -> Vec<i64> {
        vec![self.readout_width() - self.loc_input, 1024, 512, 256, self.write_patch * self.write_patch]
    }

    fn loc_widths(&self) -> Vec<i64> {
        vec![self.loc_input, 64, 32, 6]
    }

    fn cell_input(&self) -> i64 {
        self.latent_size + self.read_patch * self.read_patch
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> i64 {
        let h = self.lstm_size;
        let lstm = 4 * h * (self.cell_input() + h) + 8 * h;
        mlp_param_count(&self.enc_widths()) + mlp_param_count(&self.dec_widths()) + mlp_param_count(&self.loc_widths()) + lstm
    }
}

#[derive(Debug)]
struct Cell {
    w_ih: Tensor,
    w_hh: Tensor,
    b_ih: Tensor,
    b_hh: Tensor,
}

/// Per-step record of a rollout.
#[derive(Debug)]
pub struct StnTrace {
    pub patches: Vec<Tensor>,
    pub inverse_thetas: Vec<Tensor>,
    /// Canvas logits after the last step.
    pub canvas: Tensor,
}

#[derive(Debug)]
pub struct VaeStn {
    config: VaeStnConfig,
    vs: nn::VarStore,
    enc: Mlp,
    dec: Mlp,
    loc: Mlp,
    cell: Cell,
}

struct Rollout {
    canvas: Tensor,
    kl: Tensor,
}

impl VaeStn {
    pub fn new(config: VaeStnConfig, device: Device, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed::derive(seed, "vae-stn-init"));
        let vs = nn::VarStore::new(device);
        let root = vs.root();
        let enc = Mlp::new(&(&root / "enc"), &config.enc_widths(), &mut rng);
        let dec = Mlp::new(&(&root / "dec"), &config.dec_widths(), &mut rng);
        let loc = Mlp::new(&(&root / "loc"), &config.loc_widths(), &mut rng);
        let p = &root / "rec";
        let h = config.lstm_size;
        let bound = 1.0 / (h as f64).sqrt();
        let cell = Cell {
            w_ih: uniform_var(&p, "weight_ih", &[4 * h, config.cell_input()], bound, &mut rng),
            w_hh: uniform_var(&p, "weight_hh", &[4 * h, h], bound, &mut rng),
            b_ih: uniform_var(&p, "bias_ih", &[4 * h], bound, &mut rng),
            b_hh: uniform_var(&p, "bias_hh", &[4 * h], bound, &mut rng),
        };
        // Start the localization output at the identity transform.
        tch::no_grad(|| {
            let last = loc.layers.last().expect("loc layers");
            let _ = last.weight.shallow_clone().zero_();
            let _ = last.bias.as_ref().expect("bias").shallow_clone().zero_();
        });
        Ok(VaeStn {
            config,
            vs,
            enc,
            dec,
            loc,
            cell,
        })
    }

    pub fn config(&self) -> &VaeStnConfig {
        &self.config
    }

    pub fn var_store(&self) -> &nn::VarStore {
        &self.vs
    }

    pub fn var_store_mut(&mut self) -> &mut nn::VarStore {
        &mut self.vs
    }

    fn readout(&self, h: &Tensor, c: &Tensor) -> Tensor {
        match self.config.readout {
            Readout::HiddenCell => Tensor::cat(&[h, c], 1),
            Readout::Hidden => h.shallow_clone(),
        }
    }

    /// Runs `steps` attention steps. With a target, latents come from the
    /// encoder and the KL term is accumulated; without one they are the
    /// supplied prior noise.
    fn rollout(
        &self,
        target: Option<&Tensor>,
        prototype: &Tensor,
        noise: &mut dyn FnMut() -> Tensor,
        steps: usize,
        mut trace: Option<&mut StnTrace>,
    ) -> Rollout {
        let cfg = &self.config;
        let device = prototype.device();
        let b = prototype.size()[0];
        let side = SIDE as i64;
        let opts = (Kind::Float, device);
        let mut canvas = Tensor::zeros([b, 1, side, side], opts);
        let mut theta = identity_affine(b, device);
        let mut h = Tensor::zeros([b, cfg.lstm_size], opts);
        let mut c = Tensor::zeros([b, cfg.lstm_size], opts);
        let mut state = self.readout(&h, &c);
        let mut kl = Tensor::zeros([b], opts);
        let split = cfg.readout_width() - cfg.loc_input;
        let rp = cfg.read_patch;
        for _ in 0..steps {
            let r_proto = read(prototype, &theta, rp).view([b, rp * rp]);
            let eps = noise();
            let z = match target {
                Some(x) => {
                    let residual = x - canvas.sigmoid();
                    let r = read(x, &theta, rp).view([b, rp * rp]);
                    let r_res = read(&residual, &theta, rp).view([b, rp * rp]);
                    let stats = self.enc.forward(&Tensor::cat(&[&r, &r_res, &r_proto, &state], 1));
                    let mu = stats.narrow(1, 0, cfg.latent_size);
                    let logvar = stats.narrow(1, cfg.latent_size, cfg.latent_size);
                    kl += (mu.square() + logvar.exp() - &logvar - 1.0).sum_dim_intlist(1, false, Kind::Float) * 0.5;
                    mu + (logvar * 0.5).exp() * eps
                }
                None => eps,
            };
            let patch = self
                .dec
                .forward(&state.narrow(1, 0, split))
                .view([b, 1, cfg.write_patch, cfg.write_patch]);
            let theta_inv = invert_affine(&theta);
            canvas += write(&patch, &theta_inv);
            if let Some(t) = trace.as_deref_mut() {
                t.patches.push(patch.shallow_clone());
                t.inverse_thetas.push(theta_inv.shallow_clone());
            }
            let cell_in = Tensor::cat(&[&z, &r_proto], 1);
            (h, c) = cell_in.lstm_cell(
                &[&h, &c],
                &self.cell.w_ih,
                &self.cell.w_hh,
                Some(&self.cell.b_ih),
                Some(&self.cell.b_hh),
            );
            state = self.readout(&h, &c);
            theta = squash_affine(&self.loc.forward(&state.narrow(1, split, cfg.loc_input)));
        }
        if let Some(t) = trace {
            t.canvas = canvas.shallow_clone();
        }
        Rollout { canvas, kl }
    }

    /// Negative ELBO per image: Bernoulli reconstruction plus β·Σ_t KL.
    pub fn loss(&self, target: &Tensor, prototype: &Tensor, rng: &mut ChaCha8Rng) -> (Tensor, Tensor, Tensor) {
        let b = target.size()[0];
        let z = self.config.latent_size;
        let device = target.device();
        let mut noise = || crate::tensor::randn(rng, &[b, z], device);
        let r = self.rollout(Some(target), prototype, &mut noise, self.config.attention_steps, None);
        let recon = r
            .canvas
            .binary_cross_entropy_with_logits::<Tensor>(target, None, None, Reduction::Sum)
            / b as f64;
        let kl = r.kl.mean(Kind::Float);
        let total = &recon + &kl * self.config.beta;
        (total, recon, kl)
    }

    pub fn sample(&self, prototypes: &Tensor, mut rngs: Vec<ChaCha8Rng>) -> Result<Tensor> {
        let z = self.config.latent_size;
        let device = prototypes.device();
        let mut noise = || noise_rows(&mut rngs, z, device);
        let r = self.rollout(None, prototypes, &mut noise, self.config.attention_steps, None);
        Ok(r.canvas.sigmoid())
    }

    /// Prior rollout for `steps` steps recording every patch and inverse
    /// transform.
    pub fn trace(&self, prototypes: &Tensor, seed: u64, steps: usize) -> StnTrace {
        let _guard = tch::no_grad_guard();
        let mut rng = seed::rng(seed);
        let b = prototypes.size()[0];
        let z = self.config.latent_size;
        let device = prototypes.device();
        let mut noise = || crate::tensor::randn(&mut rng, &[b, z], device);
        let mut t = StnTrace {
            patches: Vec::new(),
            inverse_thetas: Vec::new(),
            canvas: Tensor::zeros([0], (Kind::Float, device)),
        };
        self.rollout(None, prototypes, &mut noise, steps, Some(&mut t));
        t
    }

    pub(crate) fn train(&mut self, data: &ConceptDataset, seed: u64, log: &mut TrainingLog) -> Result<usize> {
        let cfg = self.config.clone();
        let (fit, eval) = holdout_split(data, cfg.eval_fraction, seed)?;
        let pairs = PairSampler::new(&fit)?;
        let eval_pairs = eval.as_ref().map(PairSampler::new).transpose()?;
        let device = self.vs.device();
        let mut opt = nn::Adam::default().build(&self.vs, cfg.lr)?;
        let mut plateau = ReduceOnPlateau::new(0.5, cfg.plateau_patience);
        let mut lr = cfg.lr;
        for epoch in 0..cfg.epochs {
            let mut rng = seed::rng(seed::derive_indexed(seed, "vae-stn-epoch", epoch as u64));
            let mut batches = pairs.epoch(cfg.batch, &mut rng);
            if let Some(cap) = cfg.steps_per_epoch {
                batches.truncate(cap.max(1));
            }
            let (mut total, mut recon_sum, mut kl_sum) = (0.0, 0.0, 0.0);
            for (step, batch) in batches.iter().enumerate() {
                let (x, proto) = pair_tensors(batch, device);
                let (loss, recon, kl) = self.loss(&x, &proto, &mut rng);
                let v = scalar(&loss);
                check_loss(v, epoch, step)?;
                opt.zero_grad();
                loss.backward();
                opt.clip_grad_norm(cfg.grad_clip);
                opt.step();
                total += v;
                recon_sum += scalar(&recon);
                kl_sum += scalar(&kl);
            }
            let n = batches.len().max(1) as f64;
            let mut metrics = vec![("reconstruction", recon_sum / n), ("kl", kl_sum / n)];
            if let Some(ep) = &eval_pairs {
                let e = self.eval_loss(ep, seed, epoch)?;
                metrics.push(("eval_loss", e));
                lr = plateau.observe(e, lr);
                opt.set_lr(lr);
            }
            log.push(epoch, total / n, lr, metrics);
        }
        Ok(cfg.epochs)
    }

    fn eval_loss(&self, pairs: &PairSampler, seed: u64, epoch: usize) -> Result<f64> {
        let _guard = tch::no_grad_guard();
        let mut rng = seed::rng(seed::derive_indexed(seed, "vae-stn-eval", epoch as u64));
        let batches = pairs.epoch(self.config.batch, &mut rng);
        let mut sum = 0.0;
        let mut count = 0usize;
        for batch in batches.iter().take(4) {
            let (x, proto) = pair_tensors(batch, self.vs.device());
            sum += scalar(&self.loss(&x, &proto, &mut rng).0) * batch.len() as f64;
            count += batch.len();
        }
        let v = sum / count.max(1) as f64;
        check_loss(v, epoch, 0)?;
        Ok(v)
    }
}
