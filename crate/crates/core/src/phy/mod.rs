//! OFDM waveform chain and impairment models.

mod channel;
mod evm;
mod jammer;
mod mimo;
mod ofdm;

pub use channel::{apply_channel, apply_channel_with_reference, channel_phasors, ChannelParams};
pub use evm::compute_evm;
pub use jammer::{draw_jammer, inject_interference, JamRealization, JammerParams};
pub use mimo::{mimo_channel_apply, rayleigh_matrix, CMatrix, MimoChannelModel};
pub use ofdm::{ofdm_demodulate, ofdm_modulate, Ofdm};

use num_complex::Complex64;

use crate::error::{check_dim, Error, Result};

/// Link dimensions shared by the autoencoder and the baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkConfig {
    /// Subcarriers per OFDM symbol.
    pub n_fft: usize,
    /// Cyclic-prefix length in samples.
    pub n_cp: usize,
    /// Bits per symbol.
    pub k: usize,
    /// Channel uses per information block.
    pub n_ch: usize,
    /// Hidden-layer width of the autoencoder networks.
    pub hidden: usize,
    pub n_t: usize,
    pub n_r: usize,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            n_fft: 12,
            n_cp: 3,
            k: 2,
            n_ch: 1,
            hidden: 800,
            n_t: 1,
            n_r: 1,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_fft == 0 {
            return bad("n_fft must be at least 1".into());
        }
        if self.n_cp > self.n_fft {
            return bad(format!("n_cp {} exceeds n_fft {}", self.n_cp, self.n_fft));
        }
        if ![1, 2, 4, 6].contains(&self.k) {
            return bad(format!("k = {} not in {{1, 2, 4, 6}}", self.k));
        }
        if self.n_ch == 0 {
            return bad("n_ch must be at least 1".into());
        }
        if self.hidden == 0 {
            return bad("hidden width must be at least 1".into());
        }
        if self.n_t == 0 || self.n_r == 0 {
            return bad("antenna counts must be at least 1".into());
        }
        if self.n_t != self.n_r {
            return bad(format!(
                "spatial multiplexing needs n_t = n_r, got {} x {}",
                self.n_t, self.n_r
            ));
        }
        Ok(())
    }

    pub fn is_mimo(&self) -> bool {
        self.n_t > 1 || self.n_r > 1
    }

    /// Information bits per block.
    pub fn bits_per_block(&self) -> usize {
        if self.is_mimo() {
            self.k * self.n_t
        } else {
            self.k * self.n_fft
        }
    }

    /// Samples per channel use including the prefix.
    pub fn symbol_len(&self) -> usize {
        self.n_fft + self.n_cp
    }
}

/// Frequency-domain symbols indexed `(subcarrier, channel use)`, stored
/// subcarrier-major.
#[derive(Debug, Clone, PartialEq)]
pub struct IqGrid {
    n_fft: usize,
    n_ch: usize,
    data: Vec<Complex64>,
}

impl IqGrid {
    pub fn zeros(n_fft: usize, n_ch: usize) -> Self {
        Self {
            n_fft,
            n_ch,
            data: vec![Complex64::new(0.0, 0.0); n_fft * n_ch],
        }
    }

    pub fn from_data(n_fft: usize, n_ch: usize, data: Vec<Complex64>) -> Result<Self> {
        check_dim("grid data length", n_fft * n_ch, data.len())?;
        Ok(Self { n_fft, n_ch, data })
    }

    /// Pairs `(2i, 2i+1)` become `(I, Q)` of element `i`.
    pub fn from_reals(n_fft: usize, n_ch: usize, reals: &[f64]) -> Result<Self> {
        check_dim("grid real length", 2 * n_fft * n_ch, reals.len())?;
        let data = reals.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
        Ok(Self { n_fft, n_ch, data })
    }

    pub fn to_reals(&self) -> Vec<f64> {
        self.data.iter().flat_map(|c| [c.re, c.im]).collect()
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn n_ch(&self) -> usize {
        self.n_ch
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn index(&self, sc: usize, cu: usize) -> usize {
        sc * self.n_ch + cu
    }

    pub fn get(&self, sc: usize, cu: usize) -> Complex64 {
        self.data[self.index(sc, cu)]
    }

    pub fn set(&mut self, sc: usize, cu: usize, v: Complex64) {
        let i = self.index(sc, cu);
        self.data[i] = v;
    }

    /// Subcarrier column of one channel use.
    pub fn channel_use(&self, cu: usize) -> Vec<Complex64> {
        (0..self.n_fft).map(|sc| self.get(sc, cu)).collect()
    }

    pub fn set_channel_use(&mut self, cu: usize, col: &[Complex64]) {
        for (sc, v) in col.iter().enumerate() {
            self.set(sc, cu, *v);
        }
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(Complex64::norm_sqr).sum()
    }

    pub fn average_power(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.energy() / self.data.len() as f64
        }
    }
}

/// Time-domain samples, one `(n_fft + n_cp)`-long symbol per channel use,
/// stored in transmission order.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeFrame {
    n_fft: usize,
    n_cp: usize,
    n_ch: usize,
    data: Vec<Complex64>,
}

impl TimeFrame {
    pub fn from_data(n_fft: usize, n_cp: usize, n_ch: usize, data: Vec<Complex64>) -> Result<Self> {
        check_dim("frame data length", (n_fft + n_cp) * n_ch, data.len())?;
        Ok(Self {
            n_fft,
            n_cp,
            n_ch,
            data,
        })
    }

    /// Interleaved I/Q reals in transmission order.
    pub fn from_reals(n_fft: usize, n_cp: usize, n_ch: usize, reals: &[f64]) -> Result<Self> {
        check_dim("frame real length", 2 * (n_fft + n_cp) * n_ch, reals.len())?;
        let data = reals.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
        Ok(Self {
            n_fft,
            n_cp,
            n_ch,
            data,
        })
    }

    pub fn to_reals(&self) -> Vec<f64> {
        self.data.iter().flat_map(|c| [c.re, c.im]).collect()
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn n_cp(&self) -> usize {
        self.n_cp
    }

    pub fn n_ch(&self) -> usize {
        self.n_ch
    }

    pub fn symbol_len(&self) -> usize {
        self.n_fft + self.n_cp
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// All samples of channel use `cu`, prefix first.
    pub fn symbol(&self, cu: usize) -> &[Complex64] {
        let l = self.symbol_len();
        &self.data[cu * l..(cu + 1) * l]
    }

    pub fn average_power(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.data.iter().map(Complex64::norm_sqr).sum::<f64>() / self.data.len() as f64
        }
    }
}
