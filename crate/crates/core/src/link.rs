//! Monte Carlo link measurements shared by the autoencoder, the quantized
//! model and the conventional baselines.

use crate::error::Result;
use crate::phy::{ChannelParams, JammerParams};

/// Frames simulated per generator draw. Each chunk `c` of a run seeded with
/// `seed` uses `derived_rng(seed, c)`, so results depend only on the seed and
/// the frame count.
pub const SIM_CHUNK: usize = 256;

/// Accumulated error counts and EVM energies.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LinkStats {
    pub frames: u64,
    pub bits: u64,
    pub bit_errors: u64,
    /// `sum |rx - tx|^2` over the EVM measurement points.
    pub evm_error_energy: f64,
    /// `sum |tx|^2` over the same points.
    pub evm_ref_energy: f64,
}

impl LinkStats {
    pub fn merge(&mut self, other: &LinkStats) {
        self.frames += other.frames;
        self.bits += other.bits;
        self.bit_errors += other.bit_errors;
        self.evm_error_energy += other.evm_error_energy;
        self.evm_ref_energy += other.evm_ref_energy;
    }

    pub fn ber(&self) -> f64 {
        if self.bits == 0 {
            0.0
        } else {
            self.bit_errors as f64 / self.bits as f64
        }
    }

    /// Binomial standard error of [`LinkStats::ber`].
    pub fn ber_std_error(&self) -> f64 {
        if self.bits == 0 {
            return f64::INFINITY;
        }
        let p = self.ber();
        (p * (1.0 - p) / self.bits as f64).sqrt()
    }

    pub fn evm_pct(&self) -> f64 {
        if self.evm_ref_energy == 0.0 {
            0.0
        } else {
            100.0 * (self.evm_error_energy / self.evm_ref_energy).sqrt()
        }
    }
}

/// Anything that can be pushed through the simulated link.
pub trait LinkSim: Sync {
    /// Information bits carried per frame.
    fn bits_per_frame(&self) -> usize;

    /// Simulates `n_frames` frames; a pure function of the arguments.
    fn simulate(&self, ch: &ChannelParams, jam: Option<&JammerParams>, n_frames: u64, seed: u64) -> Result<LinkStats>;
}

/// Sizes of the chunks covering `n_frames`.
pub(crate) fn chunk_sizes(n_frames: u64) -> impl Iterator<Item = (u64, usize)> {
    let n_chunks = n_frames.div_ceil(SIM_CHUNK as u64);
    (0..n_chunks).map(move |c| {
        let start = c * SIM_CHUNK as u64;
        (c, (n_frames - start).min(SIM_CHUNK as u64) as usize)
    })
}
