//! Autoencoder OFDM link simulation.
//!
//! The transmitter and receiver of an OFDM link are dense networks trained
//! end to end through a differentiable channel model. Around that core the
//! crate provides conventional QAM/ZF baselines, tone-jammer injection with
//! interference training and randomized smoothing, a conditional WGAN-GP for
//! training-data augmentation, and post-training int8 quantization.

pub mod ae;
pub mod baseline;
pub mod error;
pub mod gan;
pub mod link;
pub mod nn;
pub mod phy;
pub mod quantize;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
