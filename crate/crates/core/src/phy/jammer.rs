use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::Rng;

use super::IqGrid;
use crate::error::{Error, Result};

/// Tone jammer hitting a random subset of resource elements per channel use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JammerParams {
    pub enabled: bool,
    /// Jammer-to-signal energy ratio per channel use.
    pub jsr_db: f64,
    /// Resource elements hit per channel use; the energy is split equally.
    pub n_jam_symbols: usize,
    /// Phase alphabet size: phases are `k * pi / phase_steps`.
    pub phase_steps: usize,
}

impl Default for JammerParams {
    fn default() -> Self {
        Self {
            enabled: false,
            jsr_db: 15.0,
            n_jam_symbols: 1,
            phase_steps: 50,
        }
    }
}

impl JammerParams {
    pub fn tone(jsr_db: f64, n_jam_symbols: usize) -> Self {
        Self {
            enabled: true,
            jsr_db,
            n_jam_symbols,
            ..Self::default()
        }
    }

    pub fn validate(&self, n_fft: usize) -> Result<()> {
        if !self.enabled {
            return Ok(());
        }
        if self.n_jam_symbols == 0 || self.n_jam_symbols > n_fft {
            return Err(Error::Config(format!(
                "n_jam_symbols {} outside [1, {n_fft}]",
                self.n_jam_symbols
            )));
        }
        if self.phase_steps == 0 {
            return Err(Error::Config("phase_steps must be at least 1".into()));
        }
        if self.jsr_db.is_nan() || self.jsr_db == f64::INFINITY {
            return Err(Error::Config(format!("jsr_db {} not usable", self.jsr_db)));
        }
        Ok(())
    }

    /// Linear energy ratio; `-inf` dB gives 0.
    pub fn ratio(&self) -> f64 {
        10f64.powf(self.jsr_db / 10.0)
    }
}

/// One draw of jammer placement and phases: `(grid index, additive term)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JamRealization {
    pub hits: Vec<(usize, Complex64)>,
}

impl JamRealization {
    pub fn apply(&self, grid: &mut IqGrid) {
        let data = grid.data_mut();
        for (idx, v) in &self.hits {
            data[*idx] += v;
        }
    }

    pub fn energy(&self) -> f64 {
        self.hits.iter().map(|(_, v)| v.norm_sqr()).sum()
    }
}

/// Draws a jammer realization for an `n_fft × n_ch` grid whose signal energy
/// per channel use is `signal_energy_per_cu`.
///
/// Per channel use, `n_jam_symbols` distinct subcarriers are chosen uniformly
/// and each receives magnitude `sqrt(E_J / n_jam_symbols)` with
/// `E_J = JSR * signal_energy_per_cu` and phase `k pi / phase_steps`.
pub fn draw_jammer<R: Rng + ?Sized>(
    n_fft: usize,
    n_ch: usize,
    signal_energy_per_cu: f64,
    jam: &JammerParams,
    rng: &mut R,
) -> Result<JamRealization> {
    jam.validate(n_fft)?;
    if !jam.enabled {
        return Ok(JamRealization::default());
    }
    let e_j = jam.ratio() * signal_energy_per_cu;
    let amp = (e_j / jam.n_jam_symbols as f64).sqrt();
    let mut hits = Vec::with_capacity(jam.n_jam_symbols * n_ch);
    for cu in 0..n_ch {
        for sc in sample(rng, n_fft, jam.n_jam_symbols) {
            let k = rng.random_range(0..jam.phase_steps);
            let phase = k as f64 * PI / jam.phase_steps as f64;
            hits.push((sc * n_ch + cu, Complex64::from_polar(amp, phase)));
        }
    }
    Ok(JamRealization { hits })
}

/// Adds jamming to a grid using the grid's own average energy per channel use
/// as the signal reference.
pub fn inject_interference<R: Rng + ?Sized>(grid: &IqGrid, jam: &JammerParams, rng: &mut R) -> Result<IqGrid> {
    let per_cu = grid.energy() / grid.n_ch() as f64;
    let real = draw_jammer(grid.n_fft(), grid.n_ch(), per_cu, jam, rng)?;
    let mut out = grid.clone();
    real.apply(&mut out);
    Ok(out)
}
