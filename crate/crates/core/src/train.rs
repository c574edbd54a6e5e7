//! Adversarial training of the per-step denoising distribution.
//!
//! Each example draws `t ~ U{1..T}`, noises the clean layout to `x_{t-1}`
//! and then one more step to `x_t`. The generator predicts `x_0'` from
//! `(x_t, z)`, and the posterior (reparameterized) turns it into the fake
//! `x'_{t-1}`. The discriminator sees `(x_{t-1}, x_t)` pairs only; its
//! global context also feeds a decoder that must reconstruct `x_0`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor, Var, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::write_corpus;
use crate::diffusion::{forward_sample, forward_step, make_schedule, standard_normal, Schedule};
use crate::error::{Error, Result};
use crate::layout::{argmax, encode, ArrayShape, LabelMap, Layout, LayoutArray};
use crate::mask::{make_mask, ConditionMask, Task};
use crate::nets::checkpoint::{self, CheckpointMeta, FORMAT_VERSION};
use crate::nets::{to_f64_vec, ModelConfig, Networks, DECODER, DISCRIMINATOR, GENERATOR};

/// Logits are clamped to this magnitude before entering the log-sigmoid.
pub const LOGIT_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    /// Diffusion step count `T`.
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Discriminator and decoder learning rate; `lr` when unset.
    #[serde(default)]
    pub d_lr: Option<f64>,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    pub epochs: usize,
    /// Stops after this many optimization steps even mid-epoch.
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default = "default_rec_weight")]
    pub rec_weight: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (0 disables periodic saves).
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Decay of an exponential moving average of the generator weights.
    /// When set, checkpoints and the returned networks carry the average.
    #[serde(default)]
    pub ema_decay: Option<f64>,
    pub model: ModelConfig,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_rec_weight() -> f64 {
    1.0
}

impl TrainConfig {
    /// Full-scale settings: batch 512, Adam at 1e-5, up to 200 epochs, with
    /// `T = 4` for the class-conditioned tasks and 8 otherwise.
    pub fn full(task: Task, rows: usize, num_labels: usize) -> Self {
        Self {
            task,
            steps: match task {
                Task::CToSp | Task::CsToP => 4,
                Task::Completion | Task::Uncond => 8,
            },
            batch_size: 512,
            lr: 1e-5,
            d_lr: None,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epochs: 200,
            max_iters: None,
            rec_weight: 1.0,
            seed: 0,
            checkpoint_every: 10,
            ema_decay: None,
            model: ModelConfig::full(rows, num_labels),
        }
    }

    /// Single-CPU settings: batch 64, 128-dim networks, 8 element slots,
    /// Adam betas (0.5, 0.9), a 4x faster discriminator and a generator
    /// weight average.
    pub fn desk(task: Task, num_labels: usize) -> Self {
        Self {
            batch_size: 64,
            lr: 2e-4,
            d_lr: Some(8e-4),
            beta1: 0.5,
            beta2: 0.9,
            ema_decay: Some(0.995),
            epochs: 1000,
            max_iters: Some(2000),
            checkpoint_every: 0,
            model: ModelConfig::desk(8, num_labels),
            ..Self::full(task, 8, num_labels)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.d_lr.is_some_and(|d| !(d > 0.0)) {
            return Err(Error::Parameter("learning rates must be positive".into()));
        }
        if self.ema_decay.is_some_and(|d| !(0.0..1.0).contains(&d)) {
            return Err(Error::Parameter("ema_decay must be in [0, 1)".into()));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Parameter("steps and batch_size must be positive".into()));
        }
        self.model.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub rec_loss: f64,
    pub mean_d_real: f64,
    pub mean_d_fake: f64,
    /// Norm of the generator's label-block output gradient.
    pub g_label_grad_norm: f64,
    pub g_box_grad_norm: f64,
}

/// Real training pairs for one batch, in row-major reals.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub size: usize,
    pub t: Vec<usize>,
    pub x0: Vec<f64>,
    pub x_prev: Vec<f64>,
    pub x_t: Vec<f64>,
    pub mask: Vec<f64>,
    pub known: Vec<f64>,
}

/// Draws `t`, the two-stage noising `x_0 -> x_{t-1} -> x_t`, and applies
/// each example's condition to both noisy states.
pub fn build_pairs<R: Rng + ?Sized>(
    x0s: &[Vec<f64>],
    conds: &[ConditionMask],
    schedule: &Schedule,
    rng: &mut R,
) -> Result<PairBatch> {
    let size = x0s.len();
    let n = x0s.first().map_or(0, Vec::len);
    let mut b = PairBatch {
        size,
        t: Vec::with_capacity(size),
        x0: Vec::with_capacity(size * n),
        x_prev: Vec::with_capacity(size * n),
        x_t: Vec::with_capacity(size * n),
        mask: Vec::with_capacity(size * n),
        known: Vec::with_capacity(size * n),
    };
    for (x0, cond) in x0s.iter().zip(conds) {
        let t = rng.random_range(1..=schedule.steps());
        let mut prev = forward_sample(x0, t - 1, &standard_normal(n, rng), schedule)?;
        let mut xt = forward_step(&prev, t, &standard_normal(n, rng), schedule)?;
        cond.apply(&mut prev);
        cond.apply(&mut xt);
        b.t.push(t);
        b.x0.extend_from_slice(x0);
        b.x_prev.extend(prev);
        b.x_t.extend(xt);
        b.mask.extend(cond.mask_values());
        b.known.extend_from_slice(cond.values().as_slice());
    }
    Ok(b)
}

/// Batch tensors used by both players.
pub struct PairTensors {
    pub x_prev: Tensor,
    pub x_t: Tensor,
    mask: Tensor,
    keep: Tensor,
    known: Tensor,
    coeff_x0: Tensor,
    coeff_xt: Tensor,
    std: Tensor,
    label_targets: Tensor,
    box_targets: Tensor,
}

impl PairTensors {
    pub fn new(nets: &Networks, schedule: &Schedule, b: &PairBatch) -> Result<Self> {
        let shape = nets.shape();
        let dev = nets.device();
        let dtype = nets.dtype();
        let coeffs = b
            .t
            .iter()
            .map(|&t| schedule.posterior_coeffs(t))
            .collect::<Result<Vec<_>>>()?;
        let column = |f: &dyn Fn(&crate::diffusion::PosteriorCoeffs) -> f64| -> Result<Tensor> {
            let v: Vec<f64> = coeffs.iter().map(f).collect();
            Ok(Tensor::from_vec(v, (b.size, 1, 1), dev)?.to_dtype(dtype)?)
        };
        let (lw, d) = (shape.label_width(), shape.dim());
        let rows = b.size * shape.rows;
        let labels: Vec<u32> = (0..rows).map(|r| argmax(&b.x0[r * d..r * d + lw]) as u32).collect();
        let boxes: Vec<f64> = (0..rows).flat_map(|r| b.x0[r * d + lw..(r + 1) * d].to_vec()).collect();
        let mask = nets.batch_tensor(&b.mask, b.size)?;
        Ok(Self {
            x_prev: nets.batch_tensor(&b.x_prev, b.size)?,
            x_t: nets.batch_tensor(&b.x_t, b.size)?,
            keep: (1.0 - &mask)?,
            mask,
            known: nets.batch_tensor(&b.known, b.size)?,
            coeff_x0: column(&|c| c.x0)?,
            coeff_xt: column(&|c| c.xt)?,
            std: column(&|c| c.var.sqrt())?,
            label_targets: Tensor::from_vec(labels, rows, dev)?,
            box_targets: Tensor::from_vec(boxes, (b.size, shape.rows, 4), dev)?.to_dtype(dtype)?,
        })
    }

    /// Posterior sample `mean + std * eps` from a predicted `x_0'`, with the
    /// condition re-imposed. Differentiable in `x0_pred`.
    pub fn fake_prev(&self, x0_pred: &Tensor, eps: &Tensor) -> Result<Tensor> {
        let mean = (x0_pred.broadcast_mul(&self.coeff_x0)? + self.x_t.broadcast_mul(&self.coeff_xt)?)?;
        let sample = (mean + eps.broadcast_mul(&self.std)?)?;
        Ok(((sample * &self.keep)? + (&self.known * &self.mask)?)?)
    }
}

/// `-log sigmoid(x)` on clamped logits.
pub fn neg_log_sigmoid(logits: &Tensor) -> Result<Tensor> {
    softplus(&logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)?.neg()?)
}

/// `-log(1 - sigmoid(x))` on clamped logits.
pub fn neg_log_one_minus_sigmoid(logits: &Tensor) -> Result<Tensor> {
    softplus(&logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)?)
}

fn softplus(x: &Tensor) -> Result<Tensor> {
    Ok((x.exp()? + 1.0)?.log()?)
}

fn mean_sigmoid(logits: &Tensor) -> Result<f64> {
    let v = to_f64_vec(logits)?;
    Ok(v.iter().map(|l| 1.0 / (1.0 + (-l.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)).exp())).sum::<f64>() / v.len() as f64)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Cross-entropy over the label block plus mean squared error over the box
/// block, every row including padding.
pub fn reconstruction_loss(recon: &Tensor, shape: ArrayShape, pairs: &PairTensors) -> Result<Tensor> {
    let (b, rows, _) = recon.dims3()?;
    let logits = recon.narrow(D::Minus1, 0, shape.label_width())?.reshape((b * rows, shape.label_width()))?;
    let ce = candle_nn::loss::cross_entropy(&logits, &pairs.label_targets)?;
    let boxes = recon.narrow(D::Minus1, shape.label_width(), 4)?;
    let mse = candle_nn::loss::mse(&boxes, &pairs.box_targets)?;
    Ok((ce + mse)?)
}

#[derive(Debug, Clone, Copy, Default)]
struct DiscriminatorStats {
    loss: f64,
    rec: f64,
    real: f64,
    fake: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct GeneratorStats {
    loss: f64,
    label_grad: f64,
    box_grad: f64,
}

/// Where a run writes its artifacts.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub labels: LabelMap,
    pub dataset: String,
    pub git_hash: Option<String>,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.safetensors";
pub const ABORT_CHECKPOINT_FILE: &str = "abort.safetensors";
pub const LOG_FILE: &str = "logs.jsonl";

pub struct Trainer {
    cfg: TrainConfig,
    nets: Networks,
    schedule: Schedule,
    corpus: Vec<Layout>,
    encoded: Vec<Vec<f64>>,
    d_opt: AdamW,
    g_opt: AdamW,
    g_output: Var,
    /// Generator variables paired with their running averages.
    ema: Vec<(Var, Tensor)>,
    rng: ChaCha8Rng,
    step: usize,
}

impl Trainer {
    pub fn new(corpus: Vec<Layout>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if corpus.is_empty() {
            return Err(Error::Parameter("training corpus is empty".into()));
        }
        let nets = Networks::new(cfg.model.clone(), cfg.seed ^ 0x5eed_0f_1a_7e57)?;
        let shape = nets.shape();
        let encoded = corpus
            .iter()
            .map(|l| encode(l, shape).map(LayoutArray::into_vec))
            .collect::<Result<Vec<_>>>()?;
        let params = |lr| ParamsAdamW { lr, beta1: cfg.beta1, beta2: cfg.beta2, eps: 1e-8, weight_decay: 0.0 };
        let store = nets.store();
        let mut d_vars = store.vars_with_prefix(&format!("{DISCRIMINATOR}."));
        d_vars.extend(store.vars_with_prefix(&format!("{DECODER}.")));
        let d_opt = AdamW::new(d_vars, params(cfg.d_lr.unwrap_or(cfg.lr)))?;
        let g_vars = store.vars_with_prefix(&format!("{GENERATOR}."));
        let ema = match cfg.ema_decay {
            Some(_) => g_vars.iter().map(|v| Ok((v.clone(), v.as_tensor().copy()?.detach()))).collect::<Result<_>>()?,
            None => Vec::new(),
        };
        let g_opt = AdamW::new(g_vars, params(cfg.lr))?;
        let g_output = store
            .get(&format!("{GENERATOR}.output.weight"))
            .cloned()
            .ok_or_else(|| Error::Parameter("generator output weight missing".into()))?;
        Ok(Self {
            schedule: make_schedule(cfg.steps)?,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            nets,
            corpus,
            encoded,
            d_opt,
            g_opt,
            g_output,
            ema,
            step: 0,
        })
    }

    pub fn networks(&self) -> &Networks {
        &self.nets
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    fn pairs(&mut self, batch: &[usize]) -> Result<(PairBatch, PairTensors)> {
        let shape = self.nets.shape();
        let conds = batch
            .iter()
            .map(|&i| make_mask(self.cfg.task, &self.corpus[i], shape, &mut self.rng))
            .collect::<Result<Vec<_>>>()?;
        let x0s: Vec<Vec<f64>> = batch.iter().map(|&i| self.encoded[i].clone()).collect();
        let pairs = build_pairs(&x0s, &conds, &self.schedule, &mut self.rng)?;
        let tensors = PairTensors::new(&self.nets, &self.schedule, &pairs)?;
        Ok((pairs, tensors))
    }

    fn noise(&mut self, batch: usize) -> Result<(Tensor, Tensor)> {
        let s = self.nets.shape();
        let z = self.nets.latent_tensor(&standard_normal(batch * self.cfg.model.latent_dim, &mut self.rng), batch)?;
        let eps = self.nets.batch_tensor(&standard_normal(batch * s.len(), &mut self.rng), batch)?;
        Ok((z, eps))
    }

    fn d_step(&mut self, batch: &[usize]) -> Result<DiscriminatorStats> {
        let (_, p) = self.pairs(batch)?;
        let (z, eps) = self.noise(batch.len())?;
        let x0_pred = self.nets.generator.forward(&p.x_t, &z)?.detach();
        let fake = p.fake_prev(&x0_pred, &eps)?;
        let b = batch.len();
        let prev = Tensor::cat(&[&p.x_prev, &fake], 0)?;
        let cur = Tensor::cat(&[&p.x_t, &p.x_t], 0)?;
        let (logits, h) = self.nets.discriminator.forward(&prev, &cur)?;
        let (real, fake_logits) = (logits.narrow(0, 0, b)?, logits.narrow(0, b, b)?);
        let adv = (neg_log_sigmoid(&real)?.mean_all()? + neg_log_one_minus_sigmoid(&fake_logits)?.mean_all()?)?;
        let recon = self.nets.decoder.forward(&h.narrow(0, 0, b)?)?;
        let rec = reconstruction_loss(&recon, self.nets.shape(), &p)?;
        let loss = (&adv + (&rec * self.cfg.rec_weight)?)?;
        let stats = DiscriminatorStats {
            loss: scalar(&loss)?,
            rec: scalar(&rec)?,
            real: mean_sigmoid(&real)?,
            fake: mean_sigmoid(&fake_logits)?,
        };
        if stats.loss.is_finite() {
            self.d_opt.backward_step(&loss)?;
        }
        Ok(stats)
    }

    fn g_step(&mut self, batch: &[usize]) -> Result<GeneratorStats> {
        let (_, p) = self.pairs(batch)?;
        let (z, eps) = self.noise(batch.len())?;
        let x0_pred = self.nets.generator.forward(&p.x_t, &z)?;
        let fake = p.fake_prev(&x0_pred, &eps)?;
        let (logits, _) = self.nets.discriminator.forward(&fake, &p.x_t)?;
        let loss = neg_log_sigmoid(&logits)?.mean_all()?;
        let value = scalar(&loss)?;
        if !value.is_finite() {
            return Ok(GeneratorStats { loss: value, ..Default::default() });
        }
        let grads = loss.backward()?;
        let (label_grad, box_grad) = match grads.get(&self.g_output) {
            Some(g) => {
                let lw = self.nets.shape().label_width();
                let norm = |t: Tensor| -> Result<f64> { Ok(scalar(&t.sqr()?.sum_all()?)?.sqrt()) };
                (norm(g.narrow(0, 0, lw)?)?, norm(g.narrow(0, lw, 4)?)?)
            }
            None => (0.0, 0.0),
        };
        self.g_opt.step(&grads)?;
        if let Some(d) = self.cfg.ema_decay {
            for (var, avg) in &mut self.ema {
                *avg = ((&*avg * d)? + (var.as_tensor().detach() * (1.0 - d))?)?.detach();
            }
        }
        Ok(GeneratorStats { loss: value, label_grad, box_grad })
    }

    /// One discriminator update followed by one generator update on the same
    /// examples (with fresh noise).
    pub fn train_step(&mut self, batch: &[usize], epoch: usize) -> Result<StepLog> {
        let d = self.d_step(batch)?;
        let g = self.g_step(batch)?;
        self.step += 1;
        Ok(StepLog {
            step: self.step,
            epoch,
            d_loss: d.loss,
            g_loss: g.loss,
            rec_loss: d.rec,
            mean_d_real: d.real,
            mean_d_fake: d.fake,
            g_label_grad_norm: g.label_grad,
            g_box_grad_norm: g.box_grad,
        })
    }

    pub fn epoch_batches(&mut self) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.corpus.len()).collect();
        idx.shuffle(&mut self.rng);
        let bs = self.cfg.batch_size.min(idx.len());
        idx.chunks(bs).filter(|c| c.len() == bs).map(<[usize]>::to_vec).collect()
    }

    pub fn checkpoint_meta(&self, out: &RunOutput) -> Result<CheckpointMeta> {
        Ok(CheckpointMeta {
            format_version: FORMAT_VERSION,
            model: self.cfg.model.clone(),
            labels: out.labels.names().to_vec(),
            schedule: self.schedule.clone(),
            task: self.cfg.task,
            dataset: out.dataset.clone(),
            git_hash: out.git_hash.clone(),
            train: Some(serde_json::to_value(&self.cfg)?),
        })
    }

    /// Runs `f` with the averaged generator weights swapped in, if any.
    pub fn with_ema<T>(&self, f: impl FnOnce(&Networks) -> Result<T>) -> Result<T> {
        let raw = self
            .ema
            .iter()
            .map(|(var, avg)| {
                let keep = var.as_tensor().copy()?.detach();
                var.set(avg)?;
                Ok(keep)
            })
            .collect::<Result<Vec<_>>>()?;
        let out = f(&self.nets);
        for ((var, _), keep) in self.ema.iter().zip(&raw) {
            var.set(keep)?;
        }
        out
    }

    pub fn save_checkpoint(&self, out: &RunOutput, file: &str) -> Result<PathBuf> {
        let path = out.dir.join(file);
        let meta = self.checkpoint_meta(out)?;
        self.with_ema(|nets| checkpoint::save(&path, nets, &meta))?;
        Ok(path)
    }

    fn dump_batch(&self, batch: &[usize], labels: &LabelMap, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("nonfinite_step{}.jsonl", self.step + 1));
        let layouts: Vec<Layout> = batch.iter().map(|&i| self.corpus[i].clone()).collect();
        write_corpus(fs::File::create(&path)?, &layouts, labels)?;
        Ok(path)
    }

    /// Alternating training until `epochs` or `max_iters`. With an output,
    /// writes `logs.jsonl`, periodic and final checkpoints, and an abort
    /// checkpoint plus the offending batch if a loss goes non-finite.
    pub fn run<F: FnMut(&StepLog)>(&mut self, out: Option<&RunOutput>, mut on_step: F) -> Result<Vec<StepLog>> {
        let mut log_file = match out {
            Some(o) => {
                fs::create_dir_all(&o.dir)?;
                Some(std::io::BufWriter::new(fs::File::create(o.dir.join(LOG_FILE))?))
            }
            None => None,
        };
        let mut logs = Vec::new();
        let limit = self.cfg.max_iters.unwrap_or(usize::MAX);
        'outer: for epoch in 1..=self.cfg.epochs {
            for batch in self.epoch_batches() {
                if self.step >= limit {
                    break 'outer;
                }
                let log = self.train_step(&batch, epoch)?;
                if !(log.d_loss.is_finite() && log.g_loss.is_finite()) {
                    let labels = out.map(|o| o.labels.clone()).unwrap_or(fallback_labels(self.nets.shape())?);
                    let dir = out.map(|o| o.dir.clone()).unwrap_or_else(std::env::temp_dir);
                    let dump = self.dump_batch(&batch, &labels, &dir)?;
                    if let Some(o) = out {
                        self.save_checkpoint(o, ABORT_CHECKPOINT_FILE)?;
                    }
                    return Err(Error::NonFinite { step: log.step, dump });
                }
                if let Some(f) = log_file.as_mut() {
                    serde_json::to_writer(&mut *f, &log)?;
                    f.write_all(b"\n")?;
                }
                on_step(&log);
                logs.push(log);
            }
            if let (Some(o), k) = (out, self.cfg.checkpoint_every) {
                if k > 0 && epoch % k == 0 {
                    self.save_checkpoint(o, &format!("epoch{epoch:04}.safetensors"))?;
                }
            }
        }
        if let Some(f) = log_file.as_mut() {
            f.flush()?;
        }
        if let Some(o) = out {
            self.save_checkpoint(o, CHECKPOINT_FILE)?;
        }
        Ok(logs)
    }

    /// The trained networks, carrying the averaged generator if enabled.
    pub fn into_networks(self) -> Result<Networks> {
        for (var, avg) in &self.ema {
            var.set(avg)?;
        }
        Ok(self.nets)
    }
}

fn fallback_labels(shape: ArrayShape) -> Result<LabelMap> {
    LabelMap::new((0..shape.num_labels).map(|i| format!("label{i}")))
}

/// Trains on `corpus` and returns the networks plus every step log.
pub fn train(corpus: Vec<Layout>, cfg: TrainConfig, out: Option<&RunOutput>) -> Result<(Networks, Vec<StepLog>)> {
    let mut trainer = Trainer::new(corpus, cfg)?;
    let logs = trainer.run(out, |_| {})?;
    Ok((trainer.into_networks()?, logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::nn::EncoderConfig;
    use crate::synth::{synth_corpus, Profile};

    fn tiny_cfg(task: Task) -> TrainConfig {
        let enc = EncoderConfig { embed_dim: 16, layers: 1, heads: 2, ffn_width: 32 };
        let mut cfg = TrainConfig::desk(task, 5);
        cfg.batch_size = 8;
        cfg.max_iters = Some(3);
        cfg.steps = 4;
        cfg.model.generator = enc;
        cfg.model.discriminator = enc;
        cfg.model.decoder = enc;
        cfg.model.latent_dim = 8;
        cfg
    }

    fn corpus() -> Vec<Layout> {
        synth_corpus(32, Profile::Columns, &mut ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn adversarial_losses_at_zero_logit() {
        let zero = Tensor::zeros(4, DType::F64, &candle_core::Device::Cpu).unwrap();
        let d = (neg_log_sigmoid(&zero).unwrap() + neg_log_one_minus_sigmoid(&zero).unwrap()).unwrap();
        for v in to_f64_vec(&d).unwrap() {
            assert!((v - 2.0 * 2f64.ln()).abs() < 1e-12);
        }
        for v in to_f64_vec(&neg_log_sigmoid(&zero).unwrap()).unwrap() {
            assert!((v - 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn losses_stay_finite_at_extreme_logits() {
        let x = Tensor::new(&[-1e4f64, 1e4, 50.0, -50.0], &candle_core::Device::Cpu).unwrap();
        for v in to_f64_vec(&neg_log_sigmoid(&x).unwrap()).unwrap() {
            assert!(v.is_finite());
        }
        for v in to_f64_vec(&neg_log_one_minus_sigmoid(&x).unwrap()).unwrap() {
            assert!(v.is_finite());
        }
    }

    #[test]
    fn same_seed_same_logs() {
        let run = || train(corpus(), tiny_cfg(Task::Uncond), None).unwrap().1;
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        for l in &a {
            assert!(l.mean_d_real > 0.0 && l.mean_d_real < 1.0);
            assert!(l.g_label_grad_norm > 0.0);
        }
    }

    #[test]
    fn every_task_trains() {
        for task in Task::ALL {
            let (_, logs) = train(corpus(), tiny_cfg(task), None).unwrap();
            assert!(logs.iter().all(|l| l.d_loss.is_finite() && l.g_loss.is_finite()), "{task}");
        }
    }

    #[test]
    fn rejects_empty_corpus_and_bad_lr() {
        assert!(Trainer::new(Vec::new(), tiny_cfg(Task::Uncond)).is_err());
        let mut cfg = tiny_cfg(Task::Uncond);
        cfg.lr = 0.0;
        assert!(Trainer::new(corpus(), cfg).is_err());
    }

    #[test]
    fn averaged_generator_is_what_ships() {
        use crate::diffusion::Denoiser;
        let corpus = synth_corpus(32, Profile::Columns, &mut ChaCha8Rng::seed_from_u64(2));
        let mut cfg = tiny_cfg(Task::Uncond);
        cfg.ema_decay = Some(0.5);
        let mut trainer = Trainer::new(corpus, cfg).unwrap();
        trainer.run(None, |_| {}).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = trainer.networks().shape().len();
        let xt = standard_normal(n, &mut rng);
        let z = standard_normal(8, &mut rng);
        let raw = trainer.networks().predict_x0(&xt, &z, 1).unwrap();
        let avg = trainer.with_ema(|nets| nets.predict_x0(&xt, &z, 1)).unwrap();
        assert_ne!(raw, avg);
        assert_eq!(trainer.networks().predict_x0(&xt, &z, 1).unwrap(), raw);
        assert_eq!(trainer.into_networks().unwrap().predict_x0(&xt, &z, 1).unwrap(), avg);
    }

    #[test]
    fn run_writes_logs_and_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let out = RunOutput {
            dir: dir.path().to_path_buf(),
            labels: crate::synth::label_map(),
            dataset: "synth-columns".into(),
            git_hash: None,
        };
        let mut t = Trainer::new(corpus(), tiny_cfg(Task::Uncond)).unwrap();
        let logs = t.run(Some(&out), |_| {}).unwrap();
        let text = fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
        assert_eq!(text.lines().count(), logs.len());
        let (_, meta) = checkpoint::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(meta.steps(), 4);
        assert_eq!(meta.labels.len(), 5);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = TrainConfig::desk(Task::CToSp, 5);
        let text = toml::to_string(&cfg).unwrap();
        let back: TrainConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
