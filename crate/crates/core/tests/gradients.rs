//! Autograd against central finite differences on small double-precision
//! networks.

use candle_core::{Tensor, Var};
use diffgan_core::diffusion::{make_schedule, standard_normal};
use diffgan_core::layout::encode;
use diffgan_core::mask::ConditionMask;
use diffgan_core::nets::nn::EncoderConfig;
use diffgan_core::nets::{to_f64_vec, ModelConfig, Networks, Precision};
use diffgan_core::synth::{synth_corpus, Profile};
use diffgan_core::train::{
    build_pairs, neg_log_one_minus_sigmoid, neg_log_sigmoid, reconstruction_loss, PairTensors,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny() -> Networks {
    let enc = EncoderConfig { embed_dim: 8, layers: 1, heads: 2, ffn_width: 16 };
    let cfg = ModelConfig {
        rows: 8,
        num_labels: 5,
        latent_dim: 4,
        generator: enc,
        discriminator: enc,
        decoder: enc,
        generator_positional: false,
        precision: Precision::F64,
    };
    Networks::new(cfg, 0).unwrap()
}

struct Batch {
    pairs: PairTensors,
    z: Tensor,
    eps: Tensor,
}

fn batch(nets: &Networks) -> Batch {
    let shape = nets.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let corpus = synth_corpus(6, Profile::Columns, &mut rng);
    let x0s: Vec<Vec<f64>> = corpus.iter().map(|l| encode(l, shape).unwrap().into_vec()).collect();
    let conds = vec![ConditionMask::unconditional(shape); x0s.len()];
    let schedule = make_schedule(8).unwrap();
    let pb = build_pairs(&x0s, &conds, &schedule, &mut rng).unwrap();
    let b = x0s.len();
    Batch {
        pairs: PairTensors::new(nets, &schedule, &pb).unwrap(),
        z: nets.latent_tensor(&standard_normal(b * nets.config().latent_dim, &mut rng), b).unwrap(),
        eps: nets.batch_tensor(&standard_normal(b * shape.len(), &mut rng), b).unwrap(),
    }
}

fn generator_loss(nets: &Networks, b: &Batch) -> Tensor {
    let x0 = nets.generator.forward(&b.pairs.x_t, &b.z).unwrap();
    let fake = b.pairs.fake_prev(&x0, &b.eps).unwrap();
    let (logits, _) = nets.discriminator.forward(&fake, &b.pairs.x_t).unwrap();
    neg_log_sigmoid(&logits).unwrap().mean_all().unwrap()
}

fn discriminator_loss(nets: &Networks, b: &Batch) -> Tensor {
    let x0 = nets.generator.forward(&b.pairs.x_t, &b.z).unwrap().detach();
    let fake = b.pairs.fake_prev(&x0, &b.eps).unwrap();
    let (real, h) = nets.discriminator.forward(&b.pairs.x_prev, &b.pairs.x_t).unwrap();
    let (fake, _) = nets.discriminator.forward(&fake, &b.pairs.x_t).unwrap();
    let adv = (neg_log_sigmoid(&real).unwrap().mean_all().unwrap()
        + neg_log_one_minus_sigmoid(&fake).unwrap().mean_all().unwrap())
    .unwrap();
    let recon = nets.decoder.forward(&h).unwrap();
    (adv + reconstruction_loss(&recon, nets.shape(), &b.pairs).unwrap()).unwrap()
}

fn scalar(t: &Tensor) -> f64 {
    t.to_scalar::<f64>().unwrap()
}

fn with_entry(var: &Var, idx: usize, delta: f64) {
    let mut v = to_f64_vec(var.as_tensor()).unwrap();
    v[idx] += delta;
    var.set(&Tensor::from_vec(v, var.shape(), var.device()).unwrap()).unwrap();
}

/// Compares the autograd gradient of `loss` with central differences on a
/// few entries of each named parameter.
fn check(nets: &Networks, b: &Batch, loss: fn(&Networks, &Batch) -> Tensor, params: &[&str]) {
    let grads = loss(nets, b).backward().unwrap();
    let h = 1e-6;
    for name in params {
        let var = nets.store().get(name).unwrap_or_else(|| panic!("no parameter {name}"));
        let g = to_f64_vec(grads.get(var.as_tensor()).unwrap_or_else(|| panic!("no gradient for {name}"))).unwrap();
        let n = g.len();
        assert!(g.iter().any(|v| v.abs() > 1e-8), "{name} has an all-zero gradient");
        for idx in [0, n / 3, n / 2, n - 1] {
            with_entry(var, idx, h);
            let up = scalar(&loss(nets, b));
            with_entry(var, idx, -2.0 * h);
            let down = scalar(&loss(nets, b));
            with_entry(var, idx, h);
            let numeric = (up - down) / (2.0 * h);
            let err = (numeric - g[idx]).abs();
            assert!(err < 1e-6 + 1e-4 * g[idx].abs(), "{name}[{idx}]: autograd {} vs numeric {numeric}", g[idx]);
        }
    }
}

#[test]
fn generator_loss_gradients_match_finite_differences() {
    let nets = tiny();
    let b = batch(&nets);
    check(
        &nets,
        &b,
        generator_loss,
        &["generator.output.weight", "generator.output.bias", "generator.latent.weight", "generator.input.bias"],
    );
}

#[test]
fn discriminator_loss_gradients_match_finite_differences() {
    let nets = tiny();
    let b = batch(&nets);
    check(
        &nets,
        &b,
        discriminator_loss,
        &["discriminator.head.weight", "discriminator.input.weight", "discriminator.special_token", "decoder.output.bias"],
    );
}
