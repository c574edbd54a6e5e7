//! Layout feature extractor for FID.
//!
//! A small set encoder trained to tell real layouts from coordinate-jittered
//! copies of them. Features are its mean-pooled penultimate activations.
//! FID values computed with it are only comparable with each other, not with
//! numbers from other extractors.

use std::path::Path;

use candle_core::{DType, Module, Tensor, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{encode, ArrayShape, LabelMap, Layout};
use crate::nets::checkpoint::{load_params, save_params};
use crate::nets::nn::{EncoderConfig, Linear, ParamStore, TransformerEncoder};
use crate::nets::to_f64_vec;

pub const FEATURE_DIM: usize = 64;
const KIND: &str = "feature_extractor";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub rows: usize,
    pub num_labels: usize,
    pub encoder: EncoderConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Standard deviation of the coordinate jitter on the signed box scale.
    pub jitter: f64,
    pub seed: u64,
}

impl FeatureConfig {
    pub fn new(rows: usize, num_labels: usize) -> Self {
        Self {
            rows,
            num_labels,
            encoder: EncoderConfig { embed_dim: FEATURE_DIM, layers: 2, heads: 4, ffn_width: 128 },
            steps: 300,
            batch_size: 64,
            lr: 1e-3,
            jitter: 0.2,
            seed: 0,
        }
    }

    pub fn shape(&self) -> ArrayShape {
        ArrayShape::new(self.rows, self.num_labels)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FeatureMeta {
    kind: String,
    config: FeatureConfig,
    labels: Vec<String>,
}

#[derive(Debug)]
pub struct FeatureExtractor {
    config: FeatureConfig,
    labels: LabelMap,
    store: ParamStore,
    input: Linear,
    encoder: TransformerEncoder,
    pool: Linear,
    head: Linear,
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig, labels: LabelMap) -> Result<Self> {
        config.encoder.validate("feature extractor")?;
        if labels.len() != config.num_labels {
            return Err(Error::Parameter(format!(
                "feature extractor built for {} labels, got {}",
                config.num_labels,
                labels.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new(DType::F32);
        let e = config.encoder.embed_dim;
        let input = Linear::new(&mut store, "fe.input", config.shape().dim(), e, &mut rng)?;
        let encoder = TransformerEncoder::new(&mut store, "fe.encoder", &config.encoder, &mut rng)?;
        let pool = Linear::new(&mut store, "fe.pool", e, FEATURE_DIM, &mut rng)?;
        let head = Linear::new(&mut store, "fe.head", FEATURE_DIM, 1, &mut rng)?;
        Ok(Self { config, labels, store, input, encoder, pool, head })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn labels(&self) -> &LabelMap {
        &self.labels
    }

    fn batch(&self, data: &[f64], batch: usize) -> Result<Tensor> {
        let s = self.config.shape();
        Ok(Tensor::from_slice(data, (batch, s.rows, s.dim()), self.store.device())?.to_dtype(DType::F32)?)
    }

    fn features_tensor(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.encoder.forward(&self.input.forward(x)?)?;
        Ok(self.pool.forward(&h.mean(1)?)?.relu()?)
    }

    /// One feature row per layout.
    pub fn features(&self, corpus: &[Layout]) -> Result<Vec<Vec<f64>>> {
        let shape = self.config.shape();
        let mut out = Vec::with_capacity(corpus.len());
        for chunk in corpus.chunks(256) {
            let mut data = Vec::with_capacity(chunk.len() * shape.len());
            for l in chunk {
                data.extend(encode(l, shape)?.into_vec());
            }
            let f = to_f64_vec(&self.features_tensor(&self.batch(&data, chunk.len())?)?)?;
            out.extend(f.chunks(FEATURE_DIM).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    /// Trains on `corpus` against jittered copies; returns the per-step loss.
    pub fn fit(&mut self, corpus: &[Layout]) -> Result<Vec<f64>> {
        let cfg = self.config.clone();
        if corpus.is_empty() {
            return Err(Error::Parameter("feature extractor needs a non-empty corpus".into()));
        }
        let shape = cfg.shape();
        let encoded: Vec<Vec<f64>> = corpus.iter().map(|l| Ok(encode(l, shape)?.into_vec())).collect::<Result<_>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xfea7);
        let noise = Normal::new(0.0, cfg.jitter).map_err(|e| Error::Parameter(e.to_string()))?;
        let mut opt = AdamW::new(
            self.store.vars(),
            ParamsAdamW { lr: cfg.lr, weight_decay: 0.0, ..Default::default() },
        )?;
        let b = cfg.batch_size.min(encoded.len()).max(1);
        let mut order: Vec<usize> = (0..encoded.len()).collect();
        let mut cursor = order.len();
        let mut losses = Vec::with_capacity(cfg.steps);
        let lw = shape.label_width();
        for _ in 0..cfg.steps {
            let mut data = Vec::with_capacity(2 * b * shape.len());
            let mut picks = Vec::with_capacity(b);
            for _ in 0..b {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                picks.push(order[cursor]);
                cursor += 1;
            }
            for &i in &picks {
                data.extend_from_slice(&encoded[i]);
            }
            for &i in &picks {
                let mut x = encoded[i].clone();
                for row in x.chunks_mut(shape.dim()) {
                    if row[shape.padding_label()] > 0.0 {
                        continue;
                    }
                    for v in &mut row[lw..] {
                        *v = (*v + noise.sample(&mut rng)).clamp(-1.0, 1.0);
                    }
                }
                // Occasionally scramble one box completely.
                if rng.random_bool(0.5) {
                    let rows = x.len() / shape.dim();
                    let r = rng.random_range(0..rows);
                    let row = &mut x[r * shape.dim()..(r + 1) * shape.dim()];
                    if row[shape.padding_label()] < 0.0 {
                        for v in &mut row[lw..] {
                            *v = rng.random_range(-1.0..1.0);
                        }
                    }
                }
                data.extend(x);
            }
            let x = self.batch(&data, 2 * b)?;
            let logits = self.head.forward(&self.features_tensor(&x)?)?.squeeze(D::Minus1)?;
            let real = logits.narrow(0, 0, b)?;
            let fake = logits.narrow(0, b, b)?;
            // softplus(-real) + softplus(fake)
            let softplus = |t: &Tensor| -> candle_core::Result<Tensor> {
                let t = t.clamp(-30f32, 30f32)?;
                (t.exp()? + 1.0)?.log()
            };
            let loss = (softplus(&real.neg()?)?.mean_all()? + softplus(&fake)?.mean_all()?)?;
            opt.backward_step(&loss)?;
            losses.push(loss.to_dtype(DType::F64)?.to_scalar::<f64>()?);
        }
        Ok(losses)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = FeatureMeta { kind: KIND.into(), config: self.config.clone(), labels: self.labels.names().to_vec() };
        save_params(path, &self.store, serde_json::to_string(&meta)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Checkpoint(format!("feature extractor checkpoint {} not found", path.display())));
        }
        let (tensors, raw) = load_params(path)?;
        let meta: FeatureMeta = serde_json::from_str(&raw)?;
        if meta.kind != KIND {
            return Err(Error::Checkpoint(format!("{} is not a feature extractor checkpoint", path.display())));
        }
        let fe = Self::new(meta.config, LabelMap::new(meta.labels)?)?;
        fe.store.load(&tensors)?;
        Ok(fe)
    }
}

/// Trains a feature extractor on `corpus` with default settings.
pub fn train_feature_extractor(corpus: &[Layout], labels: LabelMap, rows: usize, seed: u64) -> Result<FeatureExtractor> {
    let mut cfg = FeatureConfig::new(rows, labels.len());
    cfg.seed = seed;
    let mut fe = FeatureExtractor::new(cfg, labels)?;
    fe.fit(corpus)?;
    Ok(fe)
}
