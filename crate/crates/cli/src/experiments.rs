//! BER sweeps, SNR-JSR frontiers and constellation export.

use aecomm::baseline::{modulate_conventional, ConstellationSpec};
use aecomm::gan::Transmitter;
use aecomm::link::{LinkSim, LinkStats, SIM_CHUNK};
use aecomm::nn::Tensor2;
use aecomm::phy::{ChannelParams, JammerParams};
use aecomm::rng::{random_bits, rng_from_seed, split_seed};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Frames simulated between stopping checks.
const MC_BLOCK: u64 = 4 * SIM_CHUNK as u64;

/// Largest pattern count enumerated by [`export_constellation`].
pub const MAX_ENUMERATED: usize = 4096;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Link(#[from] aecomm::Error),
    #[error("frontier not monotone: JSR {jsr_db} dB needs {snr_db} dB, below the {floor_db} dB of a weaker jammer")]
    NotMonotone { jsr_db: f64, snr_db: f64, floor_db: f64 },
}

type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepMetric {
    #[default]
    Ber,
    /// Rows sorted by measured EVM instead of SNR.
    EvmBer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub snr_grid_db: Vec<f64>,
    /// Frame budget per grid point.
    pub n_frames: u64,
    /// A point stops early once this many bit errors are seen.
    pub min_errors: u64,
    pub metric: SweepMetric,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            snr_grid_db: (0..=6).map(|i| -5.0 + 2.5 * i as f64).collect(),
            n_frames: 10_000,
            min_errors: 100,
            metric: SweepMetric::Ber,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.snr_grid_db.is_empty() {
            return Err(ExperimentError::Spec("empty SNR grid".into()));
        }
        if self.n_frames == 0 {
            return Err(ExperimentError::Spec("n_frames must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub snr_db: f64,
    pub ber: f64,
    pub evm_pct: f64,
    pub frames: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierSpec {
    pub jsr_grid_db: Vec<f64>,
    pub ber_target: f64,
    pub snr_range_db: (f64, f64),
    pub snr_step_db: f64,
    /// Jammed resource elements per channel use at test time.
    pub n_te_jam: usize,
    /// Frame budget per SNR point.
    pub n_frames: u64,
    pub min_errors: u64,
    /// Fail on a monotonicity violation beyond one grid step; otherwise
    /// report the running-maximum envelope.
    pub strict: bool,
}

impl Default for FrontierSpec {
    fn default() -> Self {
        Self {
            jsr_grid_db: (0..=8).map(|i| 5.0 * i as f64).collect(),
            ber_target: 1e-2,
            snr_range_db: (-5.0, 30.0),
            snr_step_db: 0.5,
            n_te_jam: 1,
            n_frames: 20_000,
            min_errors: 100,
            strict: true,
        }
    }
}

impl FrontierSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.ber_target > 0.0 && self.ber_target < 0.5) {
            return Err(ExperimentError::Spec(format!(
                "ber_target {} outside (0, 0.5)",
                self.ber_target
            )));
        }
        let (lo, hi) = self.snr_range_db;
        if !(lo < hi) {
            return Err(ExperimentError::Spec(format!("empty SNR range [{lo}, {hi}]")));
        }
        if !(self.snr_step_db > 0.0) || self.n_frames == 0 || self.jsr_grid_db.is_empty() {
            return Err(ExperimentError::Spec(
                "need a positive step, a frame budget and a JSR grid".into(),
            ));
        }
        Ok(())
    }

    pub fn snr_grid(&self) -> Vec<f64> {
        let (lo, hi) = self.snr_range_db;
        let n = ((hi - lo) / self.snr_step_db + 1e-9).floor() as usize;
        (0..=n).map(|i| lo + i as f64 * self.snr_step_db).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierRow {
    pub jsr_db: f64,
    /// `None` when no SNR in range meets the target.
    pub min_snr_db: Option<f64>,
}

/// Simulates blocks of frames until `done` holds or `max_frames` is spent.
/// Block `j` uses `split_seed(seed, j)`.
pub fn measure_until(
    sim: &dyn LinkSim,
    ch: &ChannelParams,
    jam: Option<&JammerParams>,
    max_frames: u64,
    seed: u64,
    done: impl Fn(&LinkStats) -> bool,
) -> Result<LinkStats> {
    let mut stats = LinkStats::default();
    let mut block = 0;
    while stats.frames < max_frames {
        let n = MC_BLOCK.min(max_frames - stats.frames);
        stats.merge(&sim.simulate(ch, jam, n, split_seed(seed, block))?);
        block += 1;
        if done(&stats) {
            break;
        }
    }
    Ok(stats)
}

/// BER and EVM per SNR point. Point `i` is seeded with
/// `split_seed(seed, i)`, so rows do not depend on scheduling.
pub fn sweep_snr_ber(
    sim: &dyn LinkSim,
    base: &ChannelParams,
    jam: Option<&JammerParams>,
    spec: &SweepSpec,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let mut rows = spec
        .snr_grid_db
        .par_iter()
        .enumerate()
        .map(|(i, &snr_db)| {
            let ch = base.with_snr(snr_db);
            let s = measure_until(sim, &ch, jam, spec.n_frames, split_seed(seed, i as u64), |s| {
                s.bit_errors >= spec.min_errors
            })?;
            Ok(SweepRow {
                snr_db,
                ber: s.ber(),
                evm_pct: s.evm_pct(),
                frames: s.frames,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if spec.metric == SweepMetric::EvmBer {
        rows.sort_by(|a, b| a.evm_pct.total_cmp(&b.evm_pct));
    }
    Ok(rows)
}

/// Whether a measurement settles the comparison with `target`: a clear
/// excess, a clear pass, or a tight estimate from enough errors.
fn settled(s: &LinkStats, target: f64, min_errors: u64) -> bool {
    let (ber, se) = (s.ber(), s.ber_std_error());
    let tight = se <= target / 5.0;
    let enough = s.bit_errors >= min_errors;
    (enough && (tight || ber - 3.0 * se > target)) || (tight && ber + 3.0 * se < target)
}

/// SNR where BER first drops to `target`, interpolated linearly in log BER
/// between the bracketing rows of an SNR-sorted sweep.
pub fn snr_at_ber(rows: &[SweepRow], target: f64) -> Option<f64> {
    let first = rows.first()?;
    if first.ber <= target {
        return Some(first.snr_db);
    }
    rows.windows(2).find(|w| w[1].ber <= target).map(|w| {
        let (a, b) = (&w[0], &w[1]);
        if b.ber <= 0.0 {
            return b.snr_db;
        }
        let t = (a.ber.ln() - target.ln()) / (a.ber.ln() - b.ber.ln());
        a.snr_db + t * (b.snr_db - a.snr_db)
    })
}

fn meets_target(s: &LinkStats, target: f64) -> bool {
    s.ber() <= target && s.ber_std_error() <= target / 5.0
}

/// Lowest grid SNR meeting the target at one JSR, by ascending scan.
fn min_snr(
    sim: &dyn LinkSim,
    base: &ChannelParams,
    jam: Option<&JammerParams>,
    spec: &FrontierSpec,
    seed: u64,
) -> Result<Option<f64>> {
    for (i, snr_db) in spec.snr_grid().into_iter().enumerate() {
        let ch = base.with_snr(snr_db);
        let s = measure_until(sim, &ch, jam, spec.n_frames, split_seed(seed, i as u64), |s| {
            settled(s, spec.ber_target, spec.min_errors)
        })?;
        if meets_target(&s, spec.ber_target) {
            return Ok(Some(snr_db));
        }
    }
    Ok(None)
}

/// Minimum SNR reaching `spec.ber_target` per JSR. `jam` supplies the
/// jammer shape (its JSR and symbol count are replaced per row); `None`
/// measures every row jam-free. Rows are reported as the running maximum
/// over weaker jammers, and a row stays unreachable once a weaker jammer
/// was. A row more than one grid step below that maximum is an error when
/// `spec.strict` is set.
pub fn frontier_snr_jsr(
    sim: &dyn LinkSim,
    base: &ChannelParams,
    jam: Option<&JammerParams>,
    spec: &FrontierSpec,
    seed: u64,
) -> Result<Vec<FrontierRow>> {
    spec.validate()?;
    let mut order: Vec<usize> = (0..spec.jsr_grid_db.len()).collect();
    order.sort_by(|&a, &b| spec.jsr_grid_db[a].total_cmp(&spec.jsr_grid_db[b]));
    let measured = order
        .par_iter()
        .map(|&r| {
            let jsr_db = spec.jsr_grid_db[r];
            let j = jam.map(|j| JammerParams {
                enabled: true,
                jsr_db,
                n_jam_symbols: spec.n_te_jam,
                ..*j
            });
            Ok((
                jsr_db,
                min_snr(sim, base, j.as_ref(), spec, split_seed(seed, r as u64))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut floor: Option<f64> = Some(f64::NEG_INFINITY);
    let mut rows = Vec::with_capacity(measured.len());
    for (jsr_db, snr) in measured {
        if let Some(s) = snr {
            let f = floor.unwrap_or(f64::INFINITY);
            if s < f - spec.snr_step_db - 1e-9 {
                let err = ExperimentError::NotMonotone {
                    jsr_db,
                    snr_db: s,
                    floor_db: f,
                };
                if spec.strict {
                    return Err(err);
                }
                log::warn!("{err}");
            }
        }
        floor = match (floor, snr) {
            (Some(f), Some(s)) => Some(f.max(s)),
            _ => None,
        };
        rows.push(FrontierRow {
            jsr_db,
            min_snr_db: floor,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstellationPoint {
    pub i: f64,
    pub q: f64,
    /// Bits of the pattern that produced the point, as `0`/`1` characters.
    pub bits: String,
}

fn bit_string(bits: &[f64]) -> String {
    bits.iter().map(|&b| if b > 0.5 { '1' } else { '0' }).collect()
}

/// Bit patterns probed for a block of `n_bits`: all of them when there are
/// at most [`MAX_ENUMERATED`], otherwise that many random draws.
pub fn probe_patterns(n_bits: usize, seed: u64) -> Tensor2 {
    if n_bits < usize::BITS as usize && (1usize << n_bits) <= MAX_ENUMERATED {
        let n = 1usize << n_bits;
        let mut t = Tensor2::zeros(n, n_bits);
        for p in 0..n {
            for (b, v) in t.row_mut(p).iter_mut().enumerate() {
                *v = ((p >> (n_bits - 1 - b)) & 1) as f64;
            }
        }
        t
    } else {
        random_bits(MAX_ENUMERATED, n_bits, &mut rng_from_seed(seed))
    }
}

/// Adds complex noise of variance `10^(-snr/10)` (unit signal power).
fn add_noise(points: &mut [ConstellationPoint], snr_db: Option<f64>, seed: u64) {
    if let Some(snr) = snr_db {
        let sd = (10f64.powf(-snr / 10.0) / 2.0).sqrt();
        let mut rng = rng_from_seed(split_seed(seed, 1));
        for p in points {
            p.i += sd * rng.sample::<f64, _>(StandardNormal);
            p.q += sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

/// Transmit points of every probed bit block, each grid cell labelled with
/// its block's bits. The count is patterns times grid cells.
pub fn export_constellation(tx: &dyn Transmitter, snr_db: Option<f64>, seed: u64) -> Result<Vec<ConstellationPoint>> {
    let bits = probe_patterns(tx.link_config().bits_per_block(), seed);
    let grids = tx.transmit(&bits)?;
    let mut points = Vec::new();
    for r in 0..bits.rows() {
        let label = bit_string(bits.row(r));
        for iq in grids.row(r).chunks_exact(2) {
            points.push(ConstellationPoint {
                i: iq[0],
                q: iq[1],
                bits: label.clone(),
            });
        }
    }
    add_noise(&mut points, snr_db, seed);
    Ok(points)
}

/// One point per symbol label of a conventional constellation.
pub fn export_conventional(
    spec: &ConstellationSpec,
    snr_db: Option<f64>,
    seed: u64,
) -> Result<Vec<ConstellationPoint>> {
    let bits = probe_patterns(spec.n_b(), seed);
    let mut points = Vec::with_capacity(bits.rows());
    for r in 0..bits.rows() {
        let s = modulate_conventional(bits.row(r), spec)?[0];
        points.push(ConstellationPoint {
            i: s.re,
            q: s.im,
            bits: bit_string(bits.row(r)),
        });
    }
    add_noise(&mut points, snr_db, seed);
    Ok(points)
}
