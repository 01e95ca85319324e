use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{IqGrid, LinkConfig, TimeFrame};
use crate::error::{check_dim, Result};

/// Planned unitary DFT pair for one subcarrier count plus CP handling.
#[derive(Clone)]
pub struct Ofdm {
    n_fft: usize,
    n_cp: usize,
    scale: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Ofdm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ofdm")
            .field("n_fft", &self.n_fft)
            .field("n_cp", &self.n_cp)
            .finish()
    }
}

impl Ofdm {
    pub fn new(n_fft: usize, n_cp: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n_fft,
            n_cp,
            scale: 1.0 / (n_fft as f64).sqrt(),
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn for_link(cfg: &LinkConfig) -> Self {
        Self::new(cfg.n_fft, cfg.n_cp)
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn n_cp(&self) -> usize {
        self.n_cp
    }

    /// In-place unitary forward DFT.
    pub fn fft(&self, buf: &mut [Complex64]) {
        self.forward.process(buf);
        for v in buf.iter_mut() {
            *v *= self.scale;
        }
    }

    /// In-place unitary inverse DFT.
    pub fn ifft(&self, buf: &mut [Complex64]) {
        self.inverse.process(buf);
        for v in buf.iter_mut() {
            *v *= self.scale;
        }
    }

    /// IFFT each channel-use column and prepend the cyclic prefix.
    pub fn modulate(&self, grid: &IqGrid) -> Result<TimeFrame> {
        check_dim("ofdm_modulate subcarriers", self.n_fft, grid.n_fft())?;
        let n_ch = grid.n_ch();
        let mut data = Vec::with_capacity((self.n_fft + self.n_cp) * n_ch);
        for cu in 0..n_ch {
            let mut col = grid.channel_use(cu);
            self.ifft(&mut col);
            data.extend_from_slice(&col[self.n_fft - self.n_cp..]);
            data.extend_from_slice(&col);
        }
        TimeFrame::from_data(self.n_fft, self.n_cp, n_ch, data)
    }

    /// Strip the prefix of each channel use and FFT the payload.
    pub fn demodulate(&self, frame: &TimeFrame) -> Result<IqGrid> {
        check_dim("ofdm_demodulate subcarriers", self.n_fft, frame.n_fft())?;
        check_dim("ofdm_demodulate prefix", self.n_cp, frame.n_cp())?;
        let n_ch = frame.n_ch();
        let mut grid = IqGrid::zeros(self.n_fft, n_ch);
        for cu in 0..n_ch {
            let mut payload = frame.symbol(cu)[self.n_cp..].to_vec();
            self.fft(&mut payload);
            grid.set_channel_use(cu, &payload);
        }
        Ok(grid)
    }
}

pub fn ofdm_modulate(grid: &IqGrid, cfg: &LinkConfig) -> Result<TimeFrame> {
    check_dim("ofdm_modulate channel uses", cfg.n_ch, grid.n_ch())?;
    Ofdm::for_link(cfg).modulate(grid)
}

pub fn ofdm_demodulate(frame: &TimeFrame, cfg: &LinkConfig) -> Result<IqGrid> {
    check_dim("ofdm_demodulate channel uses", cfg.n_ch, frame.n_ch())?;
    Ofdm::for_link(cfg).demodulate(frame)
}
