//! Conventional reference links: Gray-mapped BPSK/QPSK/16-QAM/64-QAM with
//! repetition over channel uses, and zero-forcing spatial multiplexing.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::ae::PassSeeds;
use crate::error::{check_dim, Error, Result};
use crate::link::{chunk_sizes, LinkSim, LinkStats};
use crate::phy::{
    apply_channel, draw_jammer, mimo_channel_apply, CMatrix, ChannelParams, IqGrid, JammerParams, LinkConfig, Ofdm,
    TimeFrame,
};
use crate::rng::{derived_rng, random_bits, rng_from_seed};

/// Unit-energy Gray-labelled constellation. Point `i` carries label `i`
/// (most significant bit first).
#[derive(Debug, Clone, PartialEq)]
pub struct ConstellationSpec {
    n_b: usize,
    points: Vec<Complex64>,
}

fn gray_to_binary(mut g: usize) -> usize {
    let mut b = g;
    while g > 0 {
        g >>= 1;
        b ^= g;
    }
    b
}

impl ConstellationSpec {
    /// BPSK maps bit 0 to +1. For square QAM the first half of the label
    /// selects the Q level and the second half the I level; per axis the
    /// level is `(L - 1) - 2 * gray_decode(bits)`, so QPSK labels 00, 01, 11,
    /// 10 sit counter-clockwise from `(1 + j)/sqrt 2`.
    pub fn new(n_b: usize) -> Result<Self> {
        let points = match n_b {
            1 => vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
            2 | 4 | 6 => {
                let half = n_b / 2;
                let l = 1usize << half;
                let m = 1usize << n_b;
                let norm = (2.0 * (m as f64 - 1.0) / 3.0).sqrt();
                let level = |g: usize| ((l - 1) as f64 - 2.0 * gray_to_binary(g) as f64) / norm;
                (0..m)
                    .map(|label| Complex64::new(level(label & (l - 1)), level(label >> half)))
                    .collect()
            }
            _ => return Err(Error::Config(format!("unsupported bits per symbol {n_b}"))),
        };
        Ok(Self { n_b, points })
    }

    pub fn qpsk() -> Self {
        Self::new(2).expect("supported")
    }

    pub fn n_b(&self) -> usize {
        self.n_b
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    /// Label bits of point `i` as 0.0/1.0.
    pub fn label(&self, i: usize) -> Vec<f64> {
        (0..self.n_b).rev().map(|s| ((i >> s) & 1) as f64).collect()
    }

    /// Index of the nearest point; ties go to the lowest index.
    pub fn nearest(&self, y: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (y - p).norm_sqr();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }
}

pub fn modulate_conventional(bits: &[f64], spec: &ConstellationSpec) -> Result<Vec<Complex64>> {
    if !bits.len().is_multiple_of(spec.n_b) {
        return Err(Error::Config(format!(
            "{} bits do not fill {}-bit symbols",
            bits.len(),
            spec.n_b
        )));
    }
    bits.chunks_exact(spec.n_b)
        .map(|c| {
            let mut idx = 0;
            for b in c {
                let bit = match *b {
                    0.0 => 0,
                    1.0 => 1,
                    v => return Err(Error::InvalidBit(v)),
                };
                idx = (idx << 1) | bit;
            }
            Ok(spec.points[idx])
        })
        .collect()
}

pub fn demodulate_hard(symbols: &[Complex64], spec: &ConstellationSpec) -> Vec<f64> {
    symbols.iter().flat_map(|y| spec.label(spec.nearest(*y))).collect()
}

/// Copies symbol `i` onto subcarrier `i` of every channel use.
pub fn repetition_encode(symbols: &[Complex64], n_ch: usize) -> IqGrid {
    let mut grid = IqGrid::zeros(symbols.len(), n_ch);
    for cu in 0..n_ch {
        grid.set_channel_use(cu, symbols);
    }
    grid
}

/// Coherent average of the copies on each subcarrier.
pub fn repetition_combine(rx: &IqGrid) -> Vec<Complex64> {
    let n = rx.n_ch() as f64;
    (0..rx.n_fft())
        .map(|sc| (0..rx.n_ch()).map(|cu| rx.get(sc, cu)).sum::<Complex64>() / n)
        .collect()
}

/// `x = H^+ y`, warning when `H` is badly conditioned.
pub fn mimo_zf_detect(rx: &[Complex64], h: &CMatrix) -> Result<Vec<Complex64>> {
    check_dim("zf receive antennas", h.nrows(), rx.len())?;
    let svd = h.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= smax * 1e-10 {
        log::warn!(
            "zero-forcing on a rank-deficient channel (condition {:.3e})",
            smax / smin
        );
    }
    let pinv = h
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Config(format!("pseudo-inverse failed: {e}")))?;
    let y = DVector::from_column_slice(rx);
    Ok((pinv * y).iter().copied().collect())
}

/// How an SNR axis value maps to the simulator's per-sample SNR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SnrConvention {
    /// Signal power per sample over noise variance.
    #[default]
    PerSymbol,
    /// Energy per information bit over noise density, counting all
    /// repetitions: `gamma_b = snr * n_ch / n_b`.
    PerBit,
}

impl SnrConvention {
    /// Per-sample SNR in dB for a value on this axis.
    pub fn channel_snr_db(&self, axis_db: f64, n_b: usize, n_ch: usize) -> f64 {
        match self {
            SnrConvention::PerSymbol => axis_db,
            SnrConvention::PerBit => axis_db + 10.0 * (n_b as f64 / n_ch as f64).log10(),
        }
    }
}

/// Repetition-coded QAM over the OFDM link (SISO) or zero-forcing spatial
/// multiplexing (MIMO), decided hard without phase compensation.
#[derive(Debug, Clone)]
pub struct ConventionalLink {
    pub spec: ConstellationSpec,
    pub cfg: LinkConfig,
}

impl ConventionalLink {
    pub fn new(cfg: &LinkConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            spec: ConstellationSpec::new(cfg.k)?,
            cfg: *cfg,
        })
    }

    fn siso_frames(
        &self,
        bits: &[f64],
        ch: &ChannelParams,
        jam: Option<&JammerParams>,
        seeds: &PassSeeds,
        stats: &mut LinkStats,
    ) -> Result<()> {
        let ofdm = Ofdm::for_link(&self.cfg);
        let mut ch_rng = rng_from_seed(seeds.channel);
        let mut jam_rng = rng_from_seed(seeds.jammer);
        for b in bits.chunks_exact(self.cfg.bits_per_block()) {
            let tx = repetition_encode(&modulate_conventional(b, &self.spec)?, self.cfg.n_ch);
            let frame = apply_channel(&ofdm.modulate(&tx)?, ch, &mut ch_rng)?;
            let mut rx = ofdm.demodulate(&frame)?;
            if let Some(j) = jam.filter(|j| j.enabled) {
                let per_cu = tx.energy() / tx.n_ch() as f64;
                draw_jammer(rx.n_fft(), rx.n_ch(), per_cu, j, &mut jam_rng)?.apply(&mut rx);
            }
            let decided = demodulate_hard(&repetition_combine(&rx), &self.spec);
            stats.bit_errors += crate::rng::count_bit_errors(&decided, b);
            for (t, r) in tx.data().iter().zip(rx.data()) {
                stats.evm_error_energy += (r - t).norm_sqr();
                stats.evm_ref_energy += t.norm_sqr();
            }
        }
        Ok(())
    }

    fn mimo_frames(
        &self,
        bits: &[f64],
        ch: &ChannelParams,
        jam: Option<&JammerParams>,
        seeds: &PassSeeds,
        stats: &mut LinkStats,
    ) -> Result<()> {
        let mut ch_rng = rng_from_seed(seeds.channel);
        let mut jam_rng = rng_from_seed(seeds.jammer);
        for b in bits.chunks_exact(self.cfg.bits_per_block()) {
            let x = modulate_conventional(b, &self.spec)?;
            let frames = x
                .iter()
                .map(|v| TimeFrame::from_data(1, 0, 1, vec![*v]))
                .collect::<Result<Vec<_>>>()?;
            let h = ch.mimo.matrix(self.cfg.n_r, self.cfg.n_t, &mut ch_rng);
            let out = mimo_channel_apply(&frames, &h, ch, &mut ch_rng)?;
            let mut rx = IqGrid::from_data(self.cfg.n_r, 1, out.iter().map(|f| f.data()[0]).collect())?;
            if let Some(j) = jam.filter(|j| j.enabled) {
                let energy: f64 = x.iter().map(Complex64::norm_sqr).sum();
                draw_jammer(self.cfg.n_r, 1, energy, j, &mut jam_rng)?.apply(&mut rx);
            }
            let est = mimo_zf_detect(rx.data(), &h)?;
            let decided = demodulate_hard(&est, &self.spec);
            stats.bit_errors += crate::rng::count_bit_errors(&decided, b);
            for (t, r) in x.iter().zip(&est) {
                stats.evm_error_energy += (r - t).norm_sqr();
                stats.evm_ref_energy += t.norm_sqr();
            }
        }
        Ok(())
    }
}

impl LinkSim for ConventionalLink {
    fn bits_per_frame(&self) -> usize {
        self.cfg.bits_per_block()
    }

    /// Same chunking and stream layout as the autoencoder simulation.
    fn simulate(&self, ch: &ChannelParams, jam: Option<&JammerParams>, n_frames: u64, seed: u64) -> Result<LinkStats> {
        let mut stats = LinkStats::default();
        for (c, size) in chunk_sizes(n_frames) {
            let mut rng = derived_rng(seed, c);
            let bits = random_bits(size, self.cfg.bits_per_block(), &mut rng);
            let seeds = PassSeeds::draw(&mut rng);
            if self.cfg.is_mimo() {
                self.mimo_frames(bits.data(), ch, jam, &seeds, &mut stats)?;
            } else {
                self.siso_frames(bits.data(), ch, jam, &seeds, &mut stats)?;
            }
            stats.frames += size as u64;
            stats.bits += bits.data().len() as u64;
        }
        Ok(stats)
    }
}

/// Monte Carlo BER of the conventional link.
pub fn conventional_link_ber(
    cfg: &LinkConfig,
    ch: &ChannelParams,
    jam: Option<&JammerParams>,
    n_frames: u64,
    seed: u64,
) -> Result<f64> {
    Ok(ConventionalLink::new(cfg)?.simulate(ch, jam, n_frames, seed)?.ber())
}
