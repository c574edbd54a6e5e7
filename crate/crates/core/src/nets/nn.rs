//! Building blocks over candle: a seeded parameter store, affine layers,
//! layer norm and a post-norm transformer encoder.

use std::collections::{BTreeMap, HashMap};

use candle_core::{DType, Device, Module, Tensor, Var, D};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Uniform(f64),
    Normal(f64),
}

/// Named parameters. Initialization draws from a caller-supplied rng so that
/// models are reproducible from a seed.
#[derive(Debug)]
pub struct ParamStore {
    device: Device,
    dtype: DType,
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self { device: Device::Cpu, dtype, vars: BTreeMap::new() }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn param<R: Rng + ?Sized>(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut R) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::Parameter(format!("parameter {name} defined twice")));
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Uniform(b) => {
                let d = Uniform::new_inclusive(-b, b).map_err(|e| Error::Parameter(e.to_string()))?;
                (0..n).map(|_| d.sample(rng)).collect()
            }
            Init::Normal(s) => {
                let d = Normal::new(0.0, s).map_err(|e| Error::Parameter(e.to_string()))?;
                (0..n).map(|_| d.sample(rng)).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn vars_with_prefix(&self, prefix: &str) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn tensors(&self) -> HashMap<String, Tensor> {
        self.vars.iter().map(|(k, v)| (k.clone(), v.as_tensor().clone())).collect()
    }

    /// Overwrites every parameter in place from `values`. All names must be
    /// present with matching shapes.
    pub fn load(&self, values: &HashMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.vars {
            let t = values
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: shape {:?} vs expected {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    /// PyTorch-style uniform init with bound `1 / sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamStore, path: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Result<Self> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Ok(Self {
            weight: ps.param(&format!("{path}.weight"), &[fan_out, fan_in], Init::Uniform(bound), rng)?,
            bias: ps.param(&format!("{path}.bias"), &[fan_out], Init::Uniform(bound), rng)?,
        })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }
}

impl Module for Linear {
    /// Applies to the last dimension of an input of any rank.
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let dims = x.dims().to_vec();
        let fan_in = *dims.last().expect("rank >= 1");
        let rows = x.elem_count() / fan_in;
        let y = x.reshape((rows, fan_in))?.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?;
        let mut out = dims;
        *out.last_mut().unwrap() = self.weight.dim(0)?;
        y.reshape(out)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamStore, path: &str, dim: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            gamma: ps.param(&format!("{path}.weight"), &[dim], Init::Ones, rng)?,
            beta: ps.param(&format!("{path}.bias"), &[dim], Init::Zeros, rng)?,
            eps: 1e-5,
        })
    }
}

impl Module for LayerNorm {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_width: usize,
}

impl EncoderConfig {
    pub fn validate(&self, what: &str) -> Result<()> {
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::Parameter(format!(
                "{what}: embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.layers == 0 || self.ffn_width == 0 {
            return Err(Error::Parameter(format!("{what}: layers and ffn_width must be positive")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct SelfAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
}

impl SelfAttention {
    fn new<R: Rng + ?Sized>(ps: &mut ParamStore, path: &str, dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            q: Linear::new(ps, &format!("{path}.q"), dim, dim, rng)?,
            k: Linear::new(ps, &format!("{path}.k"), dim, dim, rng)?,
            v: Linear::new(ps, &format!("{path}.v"), dim, dim, rng)?,
            out: Linear::new(ps, &format!("{path}.out"), dim, dim, rng)?,
            heads,
        })
    }

    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let (b, s, dim) = x.dims3()?;
        let dh = dim / self.heads;
        let split = |t: Tensor| -> candle_core::Result<Tensor> {
            t.reshape((b, s, self.heads, dh))?.transpose(1, 2)?.contiguous()?.reshape((b * self.heads, s, dh))
        };
        let q = split(self.q.forward(x)?)?;
        let k = split(self.k.forward(x)?)?;
        let v = split(self.v.forward(x)?)?;
        let scores = (q.matmul(&k.t()?)? / (dh as f64).sqrt())?;
        let attn = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let ctx = attn
            .matmul(&v)?
            .reshape((b, self.heads, s, dh))?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, s, dim))?;
        self.out.forward(&ctx)
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn: SelfAttention,
    norm1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    norm2: LayerNorm,
}

impl EncoderLayer {
    fn new<R: Rng + ?Sized>(ps: &mut ParamStore, path: &str, cfg: &EncoderConfig, rng: &mut R) -> Result<Self> {
        Ok(Self {
            attn: SelfAttention::new(ps, &format!("{path}.attn"), cfg.embed_dim, cfg.heads, rng)?,
            norm1: LayerNorm::new(ps, &format!("{path}.norm1"), cfg.embed_dim, rng)?,
            ff1: Linear::new(ps, &format!("{path}.ff1"), cfg.embed_dim, cfg.ffn_width, rng)?,
            ff2: Linear::new(ps, &format!("{path}.ff2"), cfg.ffn_width, cfg.embed_dim, rng)?,
            norm2: LayerNorm::new(ps, &format!("{path}.norm2"), cfg.embed_dim, rng)?,
        })
    }

    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let x = self.norm1.forward(&(x + self.attn.forward(x)?)?)?;
        let ff = self.ff2.forward(&self.ff1.forward(&x)?.relu()?)?;
        self.norm2.forward(&(x + ff)?)
    }
}

/// Stack of post-norm encoder layers over `(batch, seq, embed)` input.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    layers: Vec<EncoderLayer>,
}

impl TransformerEncoder {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamStore, path: &str, cfg: &EncoderConfig, rng: &mut R) -> Result<Self> {
        let layers = (0..cfg.layers)
            .map(|i| EncoderLayer::new(ps, &format!("{path}.layers.{i}"), cfg, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }
}

impl Module for TransformerEncoder {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        self.layers.iter().try_fold(x.clone(), |h, l| l.forward(&h))
    }
}
