use rand::Rng;

use super::{generate_synthetic, GanData, GanDims, GanPair};
use crate::ae::{build_ae_with_dropout, AeModel, LinkPath, DROPOUT_RATE};
use crate::baseline::{modulate_conventional, repetition_encode, ConventionalLink};
use crate::error::{check_dim, Error, Result};
use crate::nn::{bce_with_logits, AdamConfig, AdamState, DenseNet, Mode, Tensor2};
use crate::phy::{apply_channel, ChannelParams, IqGrid, LinkConfig, Ofdm, TimeFrame};
use crate::rng::{count_bit_errors, random_bits, rng_from_seed, split_seed};

/// Fixed transmitter whose output the GAN learns to imitate after the channel.
pub trait Transmitter: Sync {
    fn link_config(&self) -> &LinkConfig;
    /// Unit-power transmit grids as I/Q reals, one row per bit block.
    fn transmit(&self, bits: &Tensor2) -> Result<Tensor2>;
}

impl Transmitter for AeModel {
    fn link_config(&self) -> &LinkConfig {
        &self.cfg
    }

    fn transmit(&self, bits: &Tensor2) -> Result<Tensor2> {
        let mut raw = self.encoder.predict(bits)?;
        for r in 0..raw.rows() {
            let (scaled, _) = LinkPath::normalize(raw.row(r));
            raw.row_mut(r).copy_from_slice(&scaled);
        }
        Ok(raw)
    }
}

impl Transmitter for ConventionalLink {
    fn link_config(&self) -> &LinkConfig {
        &self.cfg
    }

    fn transmit(&self, bits: &Tensor2) -> Result<Tensor2> {
        let rows = (0..bits.rows())
            .map(|r| Ok(repetition_encode(&modulate_conventional(bits.row(r), &self.spec)?, self.cfg.n_ch).to_reals()))
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Ok(Tensor2::zeros(0, 2 * self.cfg.n_fft * self.cfg.n_ch));
        }
        Tensor2::from_rows(&rows)
    }
}

fn siso_only(cfg: &LinkConfig) -> Result<()> {
    if cfg.is_mimo() {
        return Err(Error::Config(
            "GAN augmentation is defined for the OFDM link only".into(),
        ));
    }
    Ok(())
}

/// Clean transmitted time frames for each bit row, as I/Q reals.
fn clean_frames(tx: &dyn Transmitter, bits: &Tensor2) -> Result<Tensor2> {
    let cfg = tx.link_config();
    let ofdm = Ofdm::for_link(cfg);
    let grids = tx.transmit(bits)?;
    let mut out = Tensor2::zeros(bits.rows(), 2 * cfg.symbol_len() * cfg.n_ch);
    for r in 0..bits.rows() {
        let grid = IqGrid::from_reals(cfg.n_fft, cfg.n_ch, grids.row(r))?;
        out.row_mut(r).copy_from_slice(&ofdm.modulate(&grid)?.to_reals());
    }
    Ok(out)
}

/// Received time frames (I/Q reals) paired with the bits that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    pub bits: Tensor2,
    pub frames: Tensor2,
}

impl FrameSet {
    pub fn len(&self) -> usize {
        self.bits.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &FrameSet) -> Result<FrameSet> {
        let stack = |a: &Tensor2, b: &Tensor2| -> Result<Tensor2> {
            check_dim("frame set width", a.cols(), b.cols())?;
            let mut data = a.data().to_vec();
            data.extend_from_slice(b.data());
            Tensor2::from_vec(a.rows() + b.rows(), a.cols(), data)
        };
        Ok(FrameSet {
            bits: stack(&self.bits, &other.bits)?,
            frames: stack(&self.frames, &other.frames)?,
        })
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> FrameSet {
        let n = n.min(self.len());
        let take = |t: &Tensor2| Tensor2::from_vec(n, t.cols(), t.data()[..n * t.cols()].to_vec()).expect("prefix");
        FrameSet {
            bits: take(&self.bits),
            frames: take(&self.frames),
        }
    }

    /// Generator conditions are the bits; the critic additionally sees the
    /// clean transmitted frame.
    pub fn to_gan_data(&self, tx: &dyn Transmitter) -> Result<GanData> {
        Ok(GanData {
            samples: self.frames.clone(),
            gen_cond: self.bits.clone(),
            critic_cond: clean_frames(tx, &self.bits)?,
        })
    }

    /// Receive grids as decoder inputs.
    fn grids(&self, cfg: &LinkConfig) -> Result<Tensor2> {
        let ofdm = Ofdm::for_link(cfg);
        let mut out = Tensor2::zeros(self.len(), 2 * cfg.n_fft * cfg.n_ch);
        for r in 0..self.len() {
            let frame = TimeFrame::from_reals(cfg.n_fft, cfg.n_cp, cfg.n_ch, self.frames.row(r))?;
            out.row_mut(r).copy_from_slice(&ofdm.demodulate(&frame)?.to_reals());
        }
        Ok(out)
    }
}

/// `n` random bit blocks sent through `tx` and the channel.
pub fn collect_frames(tx: &dyn Transmitter, ch: &ChannelParams, n: usize, seed: u64) -> Result<FrameSet> {
    let cfg = tx.link_config();
    siso_only(cfg)?;
    let mut rng = rng_from_seed(seed);
    let bits = random_bits(n, cfg.bits_per_block(), &mut rng);
    let clean = clean_frames(tx, &bits)?;
    let mut frames = Tensor2::zeros(n, clean.cols());
    for r in 0..n {
        let frame = TimeFrame::from_reals(cfg.n_fft, cfg.n_cp, cfg.n_ch, clean.row(r))?;
        frames
            .row_mut(r)
            .copy_from_slice(&apply_channel(&frame, ch, &mut rng)?.to_reals());
    }
    Ok(FrameSet { bits, frames })
}

/// Receiver-only training on a fixed frame set.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverConfig {
    /// Adam updates, independent of the set size.
    pub steps: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub adam: AdamConfig,
    /// Seeds the decoder initialization and the minibatch draws.
    pub seed: u64,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            batch_size: 64,
            dropout: DROPOUT_RATE,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// Fresh decoder trained with BCE on minibatches drawn uniformly with
/// replacement from `data`. Returned in eval mode.
pub fn train_receiver(cfg: &LinkConfig, data: &FrameSet, rcfg: &ReceiverConfig) -> Result<DenseNet> {
    siso_only(cfg)?;
    if data.is_empty() {
        return Err(Error::Empty("receiver training set".into()));
    }
    check_dim("frame set bits", cfg.bits_per_block(), data.bits.cols())?;
    let mut rng = rng_from_seed(rcfg.seed);
    let mut decoder = build_ae_with_dropout(cfg, rcfg.dropout, &mut rng)?.decoder;
    decoder.set_mode(Mode::Train);
    let inputs = data.grids(cfg)?;
    let top = decoder.layers().len() - 1;
    let mut adam = AdamState::new(rcfg.adam);
    let b = rcfg.batch_size.max(1);
    for step in 0..rcfg.steps {
        let mut x = Tensor2::zeros(b, inputs.cols());
        let mut y = Tensor2::zeros(b, data.bits.cols());
        for i in 0..b {
            let j = rng.random_range(0..data.len());
            x.row_mut(i).copy_from_slice(inputs.row(j));
            y.row_mut(i).copy_from_slice(data.bits.row(j));
        }
        let (_, cache) = decoder.forward(&x, &mut rng)?;
        let (loss, grad) = bce_with_logits(cache.layer_input(top), &y)?;
        let (grads, _) = decoder.backward_below(&cache, top, &grad)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: 0, batch: step });
        }
        adam.step(&mut decoder.params_mut(), &grads)?;
    }
    decoder.set_mode(Mode::Eval);
    Ok(decoder)
}

/// Hard-decision BER of `decoder` on `data`.
pub fn receiver_ber(cfg: &LinkConfig, decoder: &DenseNet, data: &FrameSet) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("validation set".into()));
    }
    let probs = decoder.predict(&data.grids(cfg)?)?;
    Ok(count_bit_errors(probs.data(), data.bits.data()) as f64 / data.bits.data().len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentReport {
    /// `(multiplier, validation BER)` in candidate order.
    pub table: Vec<(usize, f64)>,
    pub best: usize,
    pub best_ber: f64,
}

/// For each multiplier `m`, trains a receiver on the real frames plus
/// `m * len(real)` synthetic ones and measures BER on `val_frames` fresh real
/// frames at `eval_ch`. Synthetic sets are nested prefixes of one pool, and
/// every receiver starts from the same initialization.
#[allow(clippy::too_many_arguments)]
pub fn augment_and_select(
    real: &FrameSet,
    gan: &GanPair,
    tx: &dyn Transmitter,
    eval_ch: &ChannelParams,
    candidates: &[usize],
    rcfg: &ReceiverConfig,
    val_frames: usize,
    seed: u64,
) -> Result<AugmentReport> {
    if candidates.is_empty() {
        return Err(Error::Config("no augmentation multipliers".into()));
    }
    let cfg = tx.link_config();
    siso_only(cfg)?;
    check_dim("GAN sample width", GanDims::for_link(cfg).sample, gan.dims.sample)?;
    let max_m = candidates.iter().copied().max().unwrap_or(0);
    let mut rng = rng_from_seed(split_seed(seed, 1));
    let (bits, frames) = generate_synthetic(gan, max_m * real.len(), &mut rng)?;
    let pool = FrameSet { bits, frames };
    let val = collect_frames(tx, eval_ch, val_frames, split_seed(seed, 2))?;
    let mut table = Vec::with_capacity(candidates.len());
    for &m in candidates {
        let set = real.concat(&pool.head(m * real.len()))?;
        let decoder = train_receiver(cfg, &set, rcfg)?;
        let ber = receiver_ber(cfg, &decoder, &val)?;
        log::info!("augment x{m}: {} frames, val BER {ber:.5}", set.len());
        table.push((m, ber));
    }
    let (best, best_ber) = table
        .iter()
        .copied()
        .fold(None, |acc: Option<(usize, f64)>, (m, b)| match acc {
            Some((am, ab)) if ab < b || (ab == b && am <= m) => Some((am, ab)),
            _ => Some((m, b)),
        })
        .expect("nonempty");
    Ok(AugmentReport { table, best, best_ber })
}
