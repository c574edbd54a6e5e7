//! Generator, discriminator and reconstruction decoder.
//!
//! None of the networks takes the diffusion step as input; the noise level
//! is only visible through `x_t` itself.

pub mod checkpoint;
pub mod nn;

use candle_core::{DType, Device, Module, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::Denoiser;
use crate::error::{Error, Result};
use crate::layout::ArrayShape;
use nn::{EncoderConfig, Init, Linear, ParamStore, TransformerEncoder};

pub const GENERATOR: &str = "generator";
pub const DISCRIMINATOR: &str = "discriminator";
pub const DECODER: &str = "decoder";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Element slots `E`.
    pub rows: usize,
    /// Real label classes `N`.
    pub num_labels: usize,
    pub latent_dim: usize,
    pub generator: EncoderConfig,
    pub discriminator: EncoderConfig,
    pub decoder: EncoderConfig,
    /// Adds a learned positional embedding to the generator tokens.
    #[serde(default)]
    pub generator_positional: bool,
    #[serde(default)]
    pub precision: Precision,
}

impl ModelConfig {
    /// Full-size networks: 256-dim embeddings, 4x8 generator and decoder,
    /// 8x4 discriminator, feed-forward width 2048.
    pub fn full(rows: usize, num_labels: usize) -> Self {
        let gen = EncoderConfig { embed_dim: 256, layers: 4, heads: 8, ffn_width: 2048 };
        Self {
            rows,
            num_labels,
            latent_dim: 64,
            generator: gen,
            discriminator: EncoderConfig { layers: 8, heads: 4, ..gen },
            decoder: gen,
            generator_positional: false,
            precision: Precision::F32,
        }
    }

    /// Small networks that train in minutes on one CPU core: 128-dim, 4x4
    /// generator and discriminator, a one-layer decoder, and positional
    /// embeddings on the generator tokens.
    pub fn desk(rows: usize, num_labels: usize) -> Self {
        let enc = EncoderConfig { embed_dim: 128, layers: 4, heads: 4, ffn_width: 256 };
        Self {
            rows,
            num_labels,
            latent_dim: 64,
            generator: enc,
            discriminator: enc,
            decoder: EncoderConfig { layers: 1, ..enc },
            generator_positional: true,
            precision: Precision::F32,
        }
    }

    pub fn shape(&self) -> ArrayShape {
        ArrayShape::new(self.rows, self.num_labels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.num_labels == 0 || self.latent_dim == 0 {
            return Err(Error::Parameter("rows, num_labels and latent_dim must be positive".into()));
        }
        self.generator.validate(GENERATOR)?;
        self.discriminator.validate(DISCRIMINATOR)?;
        self.decoder.validate(DECODER)
    }
}

/// `x_0' = G(x_t, z)`: rows of `x_t` and the latent each become a token.
#[derive(Debug, Clone)]
pub struct Generator {
    input: Linear,
    latent: Linear,
    positional: Option<Tensor>,
    encoder: TransformerEncoder,
    output: Linear,
    rows: usize,
}

impl Generator {
    fn new(ps: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let e = cfg.generator.embed_dim;
        let d = cfg.shape().dim();
        let p = GENERATOR;
        Ok(Self {
            input: Linear::new(ps, &format!("{p}.input"), d, e, rng)?,
            latent: Linear::new(ps, &format!("{p}.latent"), cfg.latent_dim, e, rng)?,
            positional: cfg
                .generator_positional
                .then(|| ps.param(&format!("{p}.positional"), &[cfg.rows + 1, e], Init::Normal(0.02), rng))
                .transpose()?,
            encoder: TransformerEncoder::new(ps, &format!("{p}.encoder"), &cfg.generator, rng)?,
            output: Linear::new(ps, &format!("{p}.output"), e, d, rng)?,
            rows: cfg.rows,
        })
    }

    /// `xt: (B, E, D)`, `z: (B, latent)` -> `(B, E, D)`.
    pub fn forward(&self, xt: &Tensor, z: &Tensor) -> Result<Tensor> {
        let rows = self.input.forward(xt)?;
        let latent = self.latent.forward(z)?.unsqueeze(1)?;
        let mut seq = Tensor::cat(&[&latent, &rows], 1)?;
        if let Some(pos) = &self.positional {
            seq = seq.broadcast_add(pos)?;
        }
        let h = self.encoder.forward(&seq)?.narrow(1, 1, self.rows)?;
        Ok(self.output.forward(&h)?)
    }

    /// Output projection; its first `N + 1` rows produce the label block.
    pub fn output_weight(&self) -> &Tensor {
        self.output.weight()
    }
}

/// `D(x_{t-1}, x_t) -> (logit, h)` with a learned special token whose
/// encoder output is the global context `h`.
#[derive(Debug, Clone)]
pub struct Discriminator {
    input: Linear,
    special: Tensor,
    positional: Tensor,
    encoder: TransformerEncoder,
    head: Linear,
}

impl Discriminator {
    fn new(ps: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let e = cfg.discriminator.embed_dim;
        let d = cfg.shape().dim();
        let p = DISCRIMINATOR;
        Ok(Self {
            input: Linear::new(ps, &format!("{p}.input"), 2 * d, e, rng)?,
            special: ps.param(&format!("{p}.special_token"), &[1, 1, e], Init::Normal(0.02), rng)?,
            positional: ps.param(&format!("{p}.positional"), &[cfg.rows + 1, e], Init::Normal(0.02), rng)?,
            encoder: TransformerEncoder::new(ps, &format!("{p}.encoder"), &cfg.discriminator, rng)?,
            head: Linear::new(ps, &format!("{p}.head"), e, 1, rng)?,
        })
    }

    /// Returns logits `(B,)` and global context `(B, embed)`.
    pub fn forward(&self, x_prev: &Tensor, xt: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, _, _) = xt.dims3()?;
        let rows = self.input.forward(&Tensor::cat(&[x_prev, xt], 2)?)?;
        let e = rows.dim(2)?;
        let special = self.special.broadcast_as((b, 1, e))?;
        let seq = Tensor::cat(&[&special, &rows], 1)?.broadcast_add(&self.positional)?;
        let out = self.encoder.forward(&seq)?;
        let h = out.narrow(1, 0, 1)?.squeeze(1)?;
        let logit = self.head.forward(&h)?.squeeze(1)?;
        Ok((logit, h))
    }
}

/// `De(h)`: `E` learned query tokens, each shifted by an affine map of `h`.
#[derive(Debug, Clone)]
pub struct Decoder {
    queries: Tensor,
    context: Linear,
    encoder: TransformerEncoder,
    output: Linear,
}

impl Decoder {
    fn new(ps: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let e = cfg.decoder.embed_dim;
        let p = DECODER;
        Ok(Self {
            queries: ps.param(&format!("{p}.queries"), &[cfg.rows, e], Init::Normal(0.02), rng)?,
            context: Linear::new(ps, &format!("{p}.context"), cfg.discriminator.embed_dim, e, rng)?,
            encoder: TransformerEncoder::new(ps, &format!("{p}.encoder"), &cfg.decoder, rng)?,
            output: Linear::new(ps, &format!("{p}.output"), e, cfg.shape().dim(), rng)?,
        })
    }

    /// `h: (B, embed)` -> `(B, E, D)`.
    pub fn forward(&self, h: &Tensor) -> Result<Tensor> {
        let ctx = self.context.forward(h)?.unsqueeze(1)?;
        let tokens = ctx.broadcast_add(&self.queries)?;
        Ok(self.output.forward(&self.encoder.forward(&tokens)?)?)
    }
}

/// All three networks over one parameter store.
#[derive(Debug)]
pub struct Networks {
    config: ModelConfig,
    store: ParamStore,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub decoder: Decoder,
}

impl Networks {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(config.precision.dtype());
        let generator = Generator::new(&mut store, &config, &mut rng)?;
        let discriminator = Discriminator::new(&mut store, &config, &mut rng)?;
        let decoder = Decoder::new(&mut store, &config, &mut rng)?;
        Ok(Self { config, store, generator, discriminator, decoder })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn shape(&self) -> ArrayShape {
        self.config.shape()
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    /// Builds a `(batch, E, D)` tensor from row-major reals.
    pub fn batch_tensor(&self, data: &[f64], batch: usize) -> Result<Tensor> {
        let s = self.shape();
        Ok(Tensor::from_slice(data, (batch, s.rows, s.dim()), self.device())?.to_dtype(self.dtype())?)
    }

    pub fn latent_tensor(&self, z: &[f64], batch: usize) -> Result<Tensor> {
        Ok(Tensor::from_slice(z, (batch, self.config.latent_dim), self.device())?.to_dtype(self.dtype())?)
    }
}

pub fn to_f64_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?)
}

impl Denoiser for Networks {
    fn shape(&self) -> ArrayShape {
        self.config.shape()
    }

    fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn predict_x0(&self, xt: &[f64], z: &[f64], batch: usize) -> Result<Vec<f64>> {
        if xt.len() != batch * self.shape().len() || z.len() != batch * self.config.latent_dim {
            return Err(Error::Shape(format!("batch of {batch}: got {} state and {} latent values", xt.len(), z.len())));
        }
        let out = self.generator.forward(&self.batch_tensor(xt, batch)?, &self.latent_tensor(z, batch)?)?;
        to_f64_vec(&out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::standard_normal;

    fn tiny(precision: Precision) -> ModelConfig {
        let enc = EncoderConfig { embed_dim: 16, layers: 1, heads: 2, ffn_width: 32 };
        ModelConfig {
            rows: 4,
            num_labels: 3,
            latent_dim: 8,
            generator: enc,
            discriminator: enc,
            decoder: enc,
            generator_positional: false,
            precision,
        }
    }

    #[test]
    fn shapes() {
        let nets = Networks::new(tiny(Precision::F32), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = nets.shape();
        let xt = nets.batch_tensor(&standard_normal(3 * s.len(), &mut rng), 3).unwrap();
        let z = nets.latent_tensor(&standard_normal(3 * 8, &mut rng), 3).unwrap();
        assert_eq!(nets.generator.forward(&xt, &z).unwrap().dims(), &[3, 4, 8]);
        let (logit, h) = nets.discriminator.forward(&xt, &xt).unwrap();
        assert_eq!(logit.dims(), &[3]);
        assert_eq!(h.dims(), &[3, 16]);
        assert_eq!(nets.decoder.forward(&h).unwrap().dims(), &[3, 4, 8]);
    }

    #[test]
    fn latent_changes_output() {
        let nets = Networks::new(tiny(Precision::F64), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xt = standard_normal(nets.shape().len(), &mut rng);
        let a = nets.predict_x0(&xt, &standard_normal(8, &mut rng), 1).unwrap();
        let b = nets.predict_x0(&xt, &standard_normal(8, &mut rng), 1).unwrap();
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff > 0.0);
    }

    #[test]
    fn discriminator_sees_element_order() {
        let nets = Networks::new(tiny(Precision::F64), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = nets.shape();
        let x = standard_normal(s.len(), &mut rng);
        let mut swapped = x.clone();
        let d = s.dim();
        for c in 0..d {
            swapped.swap(c, d + c);
        }
        let logit = |v: &[f64]| {
            let t = nets.batch_tensor(v, 1).unwrap();
            to_f64_vec(&nets.discriminator.forward(&t, &t).unwrap().0).unwrap()[0]
        };
        let (a, b) = (logit(&x), logit(&swapped));
        assert!(a.is_finite() && (a - b).abs() > 0.0);
        let p = 1.0 / (1.0 + (-a).exp());
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn decoder_distinguishes_contexts() {
        let nets = Networks::new(tiny(Precision::F64), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = Tensor::from_vec(standard_normal(32, &mut rng), (2, 16), &Device::Cpu).unwrap();
        let out = to_f64_vec(&nets.decoder.forward(&h).unwrap()).unwrap();
        let n = nets.shape().len();
        assert!(out[..n].iter().zip(&out[n..]).any(|(a, b)| a != b));
    }

    #[test]
    fn positional_flag_adds_parameter() {
        let with = Networks::new(ModelConfig { generator_positional: true, ..tiny(Precision::F32) }, 0).unwrap();
        assert!(with.store().get("generator.positional").is_some());
        let without = Networks::new(tiny(Precision::F32), 0).unwrap();
        assert!(without.store().get("generator.positional").is_none());
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = tiny(Precision::F32);
        cfg.discriminator.heads = 5;
        assert!(Networks::new(cfg, 0).is_err());
    }

    #[test]
    fn presets_validate() {
        ModelConfig::full(25, 5).validate().unwrap();
        ModelConfig::desk(8, 5).validate().unwrap();
    }
}
