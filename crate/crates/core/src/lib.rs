//! Multimodal instruction generation with adversarial fine-tuning.
//!
//! A decoder transformer writes navigation instructions conditioned on a
//! trajectory's visual features and detected object names; an encoder
//! transformer judges (trajectory, instruction) pairs. Training runs a
//! cross-entropy phase and then alternating adversarial updates with
//! Gumbel-softmax generation. A seeded synthetic world provides data whose
//! latent labels make generated text checkable.

pub mod assembly;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod nn;
pub mod synth;
pub mod text;
pub mod trainer;

pub use error::{CoreError, Result};
