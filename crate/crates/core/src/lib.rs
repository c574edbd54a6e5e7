//! Diffusion-GAN layout generation.
//!
//! A short diffusion chain whose per-step denoising distribution is matched
//! adversarially: a generator predicts the clean layout from a noisy one,
//! the Gaussian posterior turns that prediction into the next, less noisy
//! state, and a discriminator judges `(x_{t-1}, x_t)` pairs. Labels are
//! diffused as scaled one-hot vectors, so the generator output stays
//! differentiable all the way into the discriminator.

pub mod corpus;
pub mod diffusion;
pub mod error;
pub mod features;
pub mod layout;
pub mod mask;
pub mod metrics;
pub mod nets;
pub mod render;
pub mod report;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
