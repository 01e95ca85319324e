//! End-to-end training with interference realizations and randomized
//! smoothing, one Adam update per batch.

use rand::Rng;

use crate::ae::{AeModel, PassConfig, PassSeeds};
use crate::error::{Error, Result};
use crate::link::LinkSim;
use crate::nn::{AdamConfig, AdamState, Gradients, Mode, Tensor2};
use crate::phy::{ChannelParams, JammerParams};
use crate::rng::{derive_seed, random_bits, rng_from_seed};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n_ep: usize,
    pub n_batches: usize,
    pub batch_size: usize,
    /// Jammer realizations per batch.
    pub n_it: usize,
    /// Smoothing realizations per batch.
    pub n_rs: usize,
    /// Std dev of the smoothing noise added to the input bits.
    pub sigma: f64,
    pub train_jam: Option<JammerParams>,
    pub ch: ChannelParams,
    pub adam: AdamConfig,
    /// Frames for the per-epoch validation BER (dropout off, no jammer,
    /// training channel); 0 skips validation.
    pub val_frames: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_ep: 50,
            n_batches: 64,
            batch_size: 256,
            n_it: 1,
            n_rs: 1,
            sigma: 0.1,
            train_jam: Some(JammerParams::tone(15.0, 1)),
            ch: ChannelParams::default(),
            adam: AdamConfig::default(),
            val_frames: 4_200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::Config(format!("sigma must be non-negative, got {}", self.sigma)));
        }
        if self.n_it > 0 && self.train_jam.is_none() {
            return Err(Error::Config("interference training needs a training jammer".into()));
        }
        self.ch.validate()
    }
}

/// Loss terms of one batch. `total` is their plain sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub ae: f64,
    pub it: f64,
    pub rs: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Epoch means of the per-batch terms.
    pub losses: LossTerms,
    pub val_ber: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

/// Mean BCE and gradients over explicit pass realizations.
fn mean_over_realizations(
    model: &AeModel,
    bits: &Tensor2,
    pass: &PassConfig<'_>,
    seeds: &[PassSeeds],
) -> Result<(f64, Gradients)> {
    let mut total = 0.0;
    let mut grads: Option<Gradients> = None;
    for s in seeds {
        let (l, g) = model.loss_and_grads(bits, pass, s)?;
        total += l;
        match grads.as_mut() {
            Some(acc) => acc.add_scaled(&g, 1.0)?,
            None => grads = Some(g),
        }
    }
    let n = seeds.len() as f64;
    let mut grads = grads.ok_or_else(|| Error::Config("no realizations".into()))?;
    grads.scale(1.0 / n);
    Ok((total / n, grads))
}

fn draw_seeds<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<PassSeeds> {
    (0..n).map(|_| PassSeeds::draw(rng)).collect()
}

/// Mean BCE over the batch without interference.
pub fn loss_regular<R: Rng + ?Sized>(
    model: &AeModel,
    bits: &Tensor2,
    ch: &ChannelParams,
    rng: &mut R,
) -> Result<(f64, Gradients)> {
    mean_over_realizations(model, bits, &PassConfig::new(ch, None), &draw_seeds(1, rng))
}

/// Mean BCE over `n_it` independent jammer realizations.
pub fn loss_interference<R: Rng + ?Sized>(
    model: &AeModel,
    bits: &Tensor2,
    ch: &ChannelParams,
    jam: Option<&JammerParams>,
    n_it: usize,
    rng: &mut R,
) -> Result<(f64, Gradients)> {
    let seeds = draw_seeds(n_it, rng);
    loss_interference_with(model, bits, ch, jam, &seeds)
}

/// [`loss_interference`] with forced realizations.
pub fn loss_interference_with(
    model: &AeModel,
    bits: &Tensor2,
    ch: &ChannelParams,
    jam: Option<&JammerParams>,
    seeds: &[PassSeeds],
) -> Result<(f64, Gradients)> {
    let jam = jam.ok_or_else(|| Error::Config("interference loss needs a jammer".into()))?;
    if seeds.is_empty() {
        return Err(Error::Config("n_it must be at least 1".into()));
    }
    mean_over_realizations(model, bits, &PassConfig::new(ch, Some(jam)), seeds)
}

/// Mean BCE over `n_rs` realizations of Gaussian noise on the input bits.
pub fn loss_smoothing<R: Rng + ?Sized>(
    model: &AeModel,
    bits: &Tensor2,
    ch: &ChannelParams,
    sigma: f64,
    n_rs: usize,
    rng: &mut R,
) -> Result<(f64, Gradients)> {
    let seeds = draw_seeds(n_rs, rng);
    loss_smoothing_with(model, bits, ch, sigma, &seeds)
}

/// [`loss_smoothing`] with forced realizations.
pub fn loss_smoothing_with(
    model: &AeModel,
    bits: &Tensor2,
    ch: &ChannelParams,
    sigma: f64,
    seeds: &[PassSeeds],
) -> Result<(f64, Gradients)> {
    if !(sigma >= 0.0) {
        return Err(Error::Config(format!("sigma must be non-negative, got {sigma}")));
    }
    if seeds.is_empty() {
        return Err(Error::Config("n_rs must be at least 1".into()));
    }
    let pass = PassConfig {
        input_sigma: sigma,
        ..PassConfig::new(ch, None)
    };
    mean_over_realizations(model, bits, &pass, seeds)
}

/// Sum of the three terms and of their gradients. Absent terms contribute 0.
pub fn loss_total<R: Rng + ?Sized>(
    model: &AeModel,
    bits: &Tensor2,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(LossTerms, Gradients)> {
    let (ae, mut grads) = loss_regular(model, bits, &cfg.ch, rng)?;
    let mut terms = LossTerms {
        ae,
        ..LossTerms::default()
    };
    if cfg.n_it > 0 {
        let (l, g) = loss_interference(model, bits, &cfg.ch, cfg.train_jam.as_ref(), cfg.n_it, rng)?;
        terms.it = l;
        grads.add_scaled(&g, 1.0)?;
    }
    if cfg.n_rs > 0 {
        let (l, g) = loss_smoothing(model, bits, &cfg.ch, cfg.sigma, cfg.n_rs, rng)?;
        terms.rs = l;
        grads.add_scaled(&g, 1.0)?;
    }
    terms.total = terms.ae + terms.it + terms.rs;
    Ok((terms, grads))
}

/// Seed of the fixed validation stream.
pub fn validation_seed(seed: u64) -> u64 {
    derive_seed(seed, 0x5EED_0000_0000)
}

/// Epoch/batch loop with one Adam step per batch. The model comes back in
/// eval mode.
pub fn train(mut model: AeModel, cfg: &TrainConfig) -> Result<(AeModel, TrainHistory)> {
    let history = train_with(&mut model, cfg, |_| {})?;
    Ok((model, history))
}

/// As [`train`], calling `on_epoch` after each epoch.
pub fn train_with(
    model: &mut AeModel,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainHistory> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut adam = AdamState::new(cfg.adam);
    let mut history = TrainHistory::default();
    let bpb = model.bits_per_block();
    for epoch in 0..cfg.n_ep {
        model.set_mode(Mode::Train);
        let mut sums = LossTerms::default();
        for batch in 0..cfg.n_batches {
            let bits = random_bits(cfg.batch_size, bpb, &mut rng);
            let (terms, grads) = loss_total(model, &bits, cfg, &mut rng)?;
            if !terms.total.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            adam.step(&mut model.params_mut(), &grads)?;
            sums.ae += terms.ae;
            sums.it += terms.it;
            sums.rs += terms.rs;
        }
        let n = cfg.n_batches.max(1) as f64;
        let mut losses = LossTerms {
            ae: sums.ae / n,
            it: sums.it / n,
            rs: sums.rs / n,
            total: 0.0,
        };
        losses.total = losses.ae + losses.it + losses.rs;
        model.set_mode(Mode::Eval);
        let val_ber = if cfg.val_frames > 0 {
            Some(
                model
                    .simulate(&cfg.ch, None, cfg.val_frames, validation_seed(cfg.seed))?
                    .ber(),
            )
        } else {
            None
        };
        let rec = EpochRecord {
            epoch: epoch + 1,
            losses,
            val_ber,
        };
        log::info!(
            "epoch {} loss {:.5} (ae {:.5} it {:.5} rs {:.5}) val_ber {:?}",
            rec.epoch,
            losses.total,
            losses.ae,
            losses.it,
            losses.rs,
            val_ber
        );
        on_epoch(&rec);
        history.epochs.push(rec);
    }
    model.set_mode(Mode::Eval);
    Ok(history)
}
