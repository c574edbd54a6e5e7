//! Noise schedule, forward noising, the Gaussian posterior
//! `q(x_{t-1} | x_t, x_0)` and the ancestral sampling loop driven by a
//! clean-layout predictor.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{ArrayShape, Layout, LayoutArray};
use crate::mask::ConditionMask;

pub const MAX_STEPS: usize = 1000;
const COSINE_OFFSET: f64 = 0.008;
const BETA_MIN: f64 = 1e-5;
const BETA_MAX: f64 = 0.999;

/// Per-step coefficients for `t = 1..=T`, stored at index `t - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

fn cosine_alpha_bar(t: f64, steps: f64) -> f64 {
    let f = |u: f64| ((u + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2).cos().powi(2);
    f(t / steps) / f(0.0)
}

/// Cosine schedule with betas clipped to `[1e-5, 0.999]`. `alpha_bar` is the
/// running product of the clipped `1 - beta`, so the clipping at the last
/// step is what drives `alpha_bar_T` towards zero for small `T`.
pub fn make_schedule(steps: usize) -> Result<Schedule> {
    if !(1..=MAX_STEPS).contains(&steps) {
        return Err(Error::Parameter(format!("step count {steps} outside 1..={MAX_STEPS}")));
    }
    let n = steps as f64;
    let beta: Vec<f64> = (1..=steps)
        .map(|t| {
            let b = 1.0 - cosine_alpha_bar(t as f64, n) / cosine_alpha_bar(t as f64 - 1.0, n);
            b.clamp(BETA_MIN, BETA_MAX)
        })
        .collect();
    Ok(Schedule::from_betas(beta))
}

impl Schedule {
    pub fn from_betas(beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Self { beta, alpha, alpha_bar }
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `alpha_bar_t`, with `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Timestep { t, steps: self.steps() });
        }
        Ok(())
    }

    /// Coefficients of the posterior at step `t`.
    pub fn posterior_coeffs(&self, t: usize) -> Result<PosteriorCoeffs> {
        self.check_t(t)?;
        if t == 1 {
            return Ok(PosteriorCoeffs { x0: 1.0, xt: 0.0, var: 0.0 });
        }
        let (ab, ab_prev, beta) = (self.alpha_bar(t), self.alpha_bar(t - 1), self.beta(t));
        let denom = 1.0 - ab;
        Ok(PosteriorCoeffs {
            x0: ab_prev.sqrt() * beta / denom,
            xt: self.alpha(t).sqrt() * (1.0 - ab_prev) / denom,
            var: beta * (1.0 - ab_prev) / denom,
        })
    }
}

/// `mean = x0 * x0_coeff + xt * xt_coeff`, variance `var`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorCoeffs {
    pub x0: f64,
    pub xt: f64,
    pub var: f64,
}

/// `sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`. `t = 0` returns `x0`.
pub fn forward_sample(x0: &[f64], t: usize, eps: &[f64], s: &Schedule) -> Result<Vec<f64>> {
    if t > s.steps() {
        return Err(Error::Timestep { t, steps: s.steps() });
    }
    check_len(x0.len(), eps.len())?;
    let ab = s.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

/// One forward transition `x_{t-1} -> x_t`: `sqrt(alpha_t) x + sqrt(beta_t) eps`.
pub fn forward_step(x_prev: &[f64], t: usize, eps: &[f64], s: &Schedule) -> Result<Vec<f64>> {
    s.check_t(t)?;
    check_len(x_prev.len(), eps.len())?;
    let (a, b) = (s.alpha(t).sqrt(), s.beta(t).sqrt());
    Ok(x_prev.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

/// Mean and variance of `q(x_{t-1} | x_t, x_0)`. At `t = 1` this is
/// `(x0, 0)` exactly.
pub fn posterior_params(x0: &[f64], xt: &[f64], t: usize, s: &Schedule) -> Result<(Vec<f64>, f64)> {
    check_len(x0.len(), xt.len())?;
    let c = s.posterior_coeffs(t)?;
    if t == 1 {
        return Ok((x0.to_vec(), 0.0));
    }
    Ok((x0.iter().zip(xt).map(|(a, b)| c.x0 * a + c.xt * b).collect(), c.var))
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("length {a} vs {b}")));
    }
    Ok(())
}

pub fn standard_normal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Predicts clean layouts `x_0' = G(x_t, z)` for a batch. Implementations
/// never see the timestep.
pub trait Denoiser {
    fn shape(&self) -> ArrayShape;

    fn latent_dim(&self) -> usize;

    /// `xt` is `batch x E x D` and `z` is `batch x latent_dim`, both row-major.
    fn predict_x0(&self, xt: &[f64], z: &[f64], batch: usize) -> Result<Vec<f64>>;
}

impl<T: Denoiser + ?Sized> Denoiser for &T {
    fn shape(&self) -> ArrayShape {
        (**self).shape()
    }

    fn latent_dim(&self) -> usize {
        (**self).latent_dim()
    }

    fn predict_x0(&self, xt: &[f64], z: &[f64], batch: usize) -> Result<Vec<f64>> {
        (**self).predict_x0(xt, z, batch)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleOptions {
    /// Use the posterior mean instead of drawing from the posterior.
    pub deterministic: bool,
}

/// One reverse step for a batch of states sharing the step `t`. Each state
/// gets its own latent draw. Returns `(1 - m) * x~_{t-1} + m * x_p`.
pub fn denoise_step<G: Denoiser + ?Sized, R: Rng + ?Sized>(
    gen: &G,
    xt: &[LayoutArray],
    t: usize,
    conds: &[ConditionMask],
    s: &Schedule,
    opts: SampleOptions,
    rng: &mut R,
) -> Result<Vec<LayoutArray>> {
    s.check_t(t)?;
    if xt.len() != conds.len() {
        return Err(Error::Shape(format!("{} states but {} conditions", xt.len(), conds.len())));
    }
    let shape = gen.shape();
    let batch = xt.len();
    let mut input = Vec::with_capacity(batch * shape.len());
    for (x, c) in xt.iter().zip(conds) {
        if x.shape() != shape || c.shape() != shape {
            return Err(Error::Shape(format!("state {:?} vs model {:?}", x.shape(), shape)));
        }
        let mut row = x.as_slice().to_vec();
        c.apply(&mut row);
        input.extend(row);
    }
    let z = standard_normal(batch * gen.latent_dim(), rng);
    let x0 = gen.predict_x0(&input, &z, batch)?;
    if x0.len() != input.len() {
        return Err(Error::Shape(format!("generator returned {} values, expected {}", x0.len(), input.len())));
    }
    let coeffs = s.posterior_coeffs(t)?;
    let stochastic = t > 1 && !opts.deterministic;
    let noise = if stochastic { standard_normal(input.len(), rng) } else { Vec::new() };
    let std = coeffs.var.sqrt();
    let n = shape.len();
    let mut out = Vec::with_capacity(batch);
    for (i, c) in conds.iter().enumerate() {
        let range = i * n..(i + 1) * n;
        let (p0, pt) = (&x0[range.clone()], &input[range.clone()]);
        let mut next: Vec<f64> = if t == 1 {
            p0.to_vec()
        } else {
            p0.iter().zip(pt).map(|(a, b)| coeffs.x0 * a + coeffs.xt * b).collect()
        };
        if stochastic {
            next.iter_mut().zip(&noise[range]).for_each(|(v, e)| *v += std * e);
        }
        c.apply(&mut next);
        out.push(LayoutArray::from_vec(shape, next)?);
    }
    Ok(out)
}

/// Runs the full reverse chain from `x_T ~ N(0, I)` for each condition and
/// returns the final clean arrays.
pub fn sample_arrays<G: Denoiser + ?Sized, R: Rng + ?Sized>(
    gen: &G,
    s: &Schedule,
    conds: &[ConditionMask],
    opts: SampleOptions,
    rng: &mut R,
) -> Result<Vec<LayoutArray>> {
    let shape = gen.shape();
    let mut x = conds
        .iter()
        .map(|c| {
            let mut v = standard_normal(shape.len(), rng);
            c.apply(&mut v);
            LayoutArray::from_vec(shape, v)
        })
        .collect::<Result<Vec<_>>>()?;
    for t in (1..=s.steps()).rev() {
        x = denoise_step(gen, &x, t, conds, s, opts, rng)?;
    }
    Ok(x)
}

/// Samples one layout per condition, decoding with known attributes
/// restored from the condition source.
pub fn sample_batch<G: Denoiser + ?Sized, R: Rng + ?Sized>(
    gen: &G,
    s: &Schedule,
    conds: &[ConditionMask],
    opts: SampleOptions,
    rng: &mut R,
) -> Result<Vec<Layout>> {
    let arrays = sample_arrays(gen, s, conds, opts, rng)?;
    Ok(arrays.iter().zip(conds).map(|(a, c)| c.decode(a)).collect())
}

/// `n` samples under a single condition.
pub fn sample<G: Denoiser + ?Sized, R: Rng + ?Sized>(
    gen: &G,
    s: &Schedule,
    cond: &ConditionMask,
    n: usize,
    opts: SampleOptions,
    rng: &mut R,
) -> Result<Vec<Layout>> {
    if n == 0 {
        return Err(Error::Parameter("sample count must be at least 1".into()));
    }
    sample_batch(gen, s, &vec![cond.clone(); n], opts, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{BBox, Canvas, Element};
    use crate::mask::{make_mask, Task};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Returns the same array for every input.
    struct Constant {
        shape: ArrayShape,
        value: Vec<f64>,
    }

    impl Denoiser for Constant {
        fn shape(&self) -> ArrayShape {
            self.shape
        }
        fn latent_dim(&self) -> usize {
            3
        }
        fn predict_x0(&self, _xt: &[f64], _z: &[f64], batch: usize) -> Result<Vec<f64>> {
            Ok(self.value.repeat(batch))
        }
    }

    #[test]
    fn single_step_schedule() {
        let s = make_schedule(1).unwrap();
        assert_eq!(s.alpha_bar(1), s.alpha(1));
        assert_eq!(s.alpha(1), 1.0 - s.beta(1));
    }

    #[test]
    fn schedule_rejects_bad_step_counts() {
        assert!(make_schedule(0).is_err());
        assert!(make_schedule(1001).is_err());
    }

    #[test]
    fn alpha_bar_recurrence_holds() {
        for steps in [1, 2, 4, 8, 12, 100] {
            let s = make_schedule(steps).unwrap();
            for t in 1..=steps {
                let lhs = s.alpha_bar(t);
                let rhs = s.alpha_bar(t - 1) * (1.0 - s.beta(t));
                assert!((lhs - rhs).abs() < 1e-12);
                assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
                assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            }
            assert!(s.alpha_bar(steps) <= 0.01, "T={steps}");
        }
    }

    #[test]
    fn forward_sample_edge_cases() {
        let s = make_schedule(4).unwrap();
        let x0 = [0.3, -0.7];
        let zero = [0.0, 0.0];
        let eps = [1.5, -2.0];
        let a = forward_sample(&x0, 2, &zero, &s).unwrap();
        assert_eq!(a, vec![s.alpha_bar(2).sqrt() * 0.3, s.alpha_bar(2).sqrt() * -0.7]);
        let b = forward_sample(&zero, 2, &eps, &s).unwrap();
        let sd = (1.0 - s.alpha_bar(2)).sqrt();
        assert_eq!(b, vec![sd * 1.5, sd * -2.0]);
        assert!(forward_sample(&x0, 5, &eps, &s).is_err());
    }

    #[test]
    fn posterior_at_first_step_is_exact() {
        let s = make_schedule(4).unwrap();
        let (m, v) = posterior_params(&[0.25, -1.0], &[3.0, 0.5], 1, &s).unwrap();
        assert_eq!(m, vec![0.25, -1.0]);
        assert_eq!(v, 0.0);
        let (m, _) = posterior_params(&[0.0], &[0.0], 3, &s).unwrap();
        assert_eq!(m, vec![0.0]);
        assert!(posterior_params(&[0.0], &[0.0], 0, &s).is_err());
        assert!(posterior_params(&[0.0], &[0.0], 5, &s).is_err());
    }

    fn cond_for(task: Task, shape: ArrayShape, rng: &mut ChaCha8Rng) -> ConditionMask {
        let l = Layout::new(
            vec![
                Element::new(0, BBox::new(0.3, 0.2, 0.4, 0.1)),
                Element::new(1, BBox::new(0.6, 0.7, 0.2, 0.3)),
            ],
            Canvas::default(),
        );
        make_mask(task, &l, shape, rng).unwrap()
    }

    #[test]
    fn fully_known_mask_returns_condition() {
        let shape = ArrayShape::new(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = cond_for(Task::CToSp, shape, &mut rng);
        for r in 0..3 {
            for b in [crate::mask::Block::Position, crate::mask::Block::Size] {
                c.set_block(r, b, true);
            }
        }
        let gen = Constant { shape, value: vec![7.0; shape.len()] };
        let s = make_schedule(4).unwrap();
        let xt = vec![LayoutArray::from_vec(shape, standard_normal(shape.len(), &mut rng)).unwrap()];
        let out = denoise_step(&gen, &xt, 3, &[c.clone()], &s, SampleOptions::default(), &mut rng).unwrap();
        assert_eq!(out[0], *c.values());
    }

    #[test]
    fn last_step_returns_prediction() {
        let shape = ArrayShape::new(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let value = standard_normal(shape.len(), &mut rng);
        let gen = Constant { shape, value: value.clone() };
        let s = make_schedule(4).unwrap();
        let xt = vec![LayoutArray::zeros(shape)];
        let c = ConditionMask::unconditional(shape);
        let out = denoise_step(&gen, &xt, 1, &[c], &s, SampleOptions::default(), &mut rng).unwrap();
        assert_eq!(out[0].as_slice(), value.as_slice());
    }

    #[test]
    fn constant_generator_fixes_output() {
        let shape = ArrayShape::new(4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let value = standard_normal(shape.len(), &mut rng);
        let gen = Constant { shape, value: value.clone() };
        let s = make_schedule(8).unwrap();
        let conds = vec![ConditionMask::unconditional(shape); 5];
        for arr in sample_arrays(&gen, &s, &conds, SampleOptions::default(), &mut rng).unwrap() {
            assert_eq!(arr.as_slice(), value.as_slice());
        }
    }

    #[test]
    fn conditioned_entries_survive_sampling() {
        let shape = ArrayShape::new(4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gen = Constant { shape, value: vec![0.1; shape.len()] };
        let s = make_schedule(4).unwrap();
        for task in [Task::CToSp, Task::CsToP, Task::Completion] {
            let conds: Vec<_> = (0..10).map(|_| cond_for(task, shape, &mut rng)).collect();
            let arrays = sample_arrays(&gen, &s, &conds, SampleOptions::default(), &mut rng).unwrap();
            for (a, c) in arrays.iter().zip(&conds) {
                for i in 0..shape.len() {
                    if c.known()[i] {
                        assert_eq!(a.as_slice()[i].to_bits(), c.values().as_slice()[i].to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn decoded_samples_are_valid() {
        let shape = ArrayShape::new(5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let value = standard_normal(shape.len(), &mut rng).iter().map(|v| v * 4.0).collect();
        let gen = Constant { shape, value };
        let s = make_schedule(4).unwrap();
        let c = ConditionMask::unconditional(shape);
        for l in sample(&gen, &s, &c, 20, SampleOptions::default(), &mut rng).unwrap() {
            l.validate(3).unwrap();
        }
        assert!(sample(&gen, &s, &c, 0, SampleOptions::default(), &mut rng).is_err());
    }
}
