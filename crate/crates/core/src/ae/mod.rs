//! Autoencoder transceiver: encoder/decoder networks and the differentiable
//! transmit-channel-receive pipeline.

mod path;

pub use path::{FrameRecord, LinkPath, PassSeeds};

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::link::{chunk_sizes, LinkSim, LinkStats};
use crate::nn::{bce_with_logits, DenseNet, ForwardCache, Gradients, Layer, Linear, Mode, Tensor2};
use crate::phy::{ChannelParams, IqGrid, JammerParams, LinkConfig};
use crate::rng::{count_bit_errors, derived_rng, random_bits, rng_from_seed};

pub const DROPOUT_RATE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct AeModel {
    pub encoder: DenseNet,
    pub decoder: DenseNet,
    pub cfg: LinkConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub encoder: usize,
    pub decoder: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.encoder + self.decoder
    }
}

/// Encoder output, decoder input and decoder output of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineTrace {
    pub tx_grid: IqGrid,
    pub rx_grid: IqGrid,
    pub bit_probs: Vec<f64>,
}

/// Impairments and input perturbation for a batch pass.
#[derive(Debug, Clone, Copy)]
pub struct PassConfig<'a> {
    pub ch: &'a ChannelParams,
    pub jam: Option<&'a JammerParams>,
    /// Std dev of Gaussian noise added to the encoder input bits.
    pub input_sigma: f64,
}

impl<'a> PassConfig<'a> {
    pub fn new(ch: &'a ChannelParams, jam: Option<&'a JammerParams>) -> Self {
        Self {
            ch,
            jam,
            input_sigma: 0.0,
        }
    }
}

/// Everything a batched forward pass records for its backward pass.
#[derive(Debug, Clone)]
pub struct BatchPass {
    pub probs: Tensor2,
    pub logits: Tensor2,
    pub records: Vec<FrameRecord>,
    enc_cache: ForwardCache,
    dec_cache: ForwardCache,
}

fn dims(cfg: &LinkConfig) -> (usize, usize, usize, usize) {
    if cfg.is_mimo() {
        (cfg.k * cfg.n_t, 2 * cfg.n_t, 2 * cfg.n_r, cfg.k * cfg.n_r)
    } else {
        let io = 2 * cfg.n_fft * cfg.n_ch;
        (cfg.k * cfg.n_fft, io, io, cfg.k * cfg.n_fft)
    }
}

/// Builds encoder and decoder with Glorot-uniform weights and zero biases.
pub fn build_ae<R: Rng + ?Sized>(cfg: &LinkConfig, rng: &mut R) -> Result<AeModel> {
    build_ae_with_dropout(cfg, DROPOUT_RATE, rng)
}

pub fn build_ae_with_dropout<R: Rng + ?Sized>(cfg: &LinkConfig, dropout: f64, rng: &mut R) -> Result<AeModel> {
    cfg.validate()?;
    let h = cfg.hidden;
    let (enc_in, enc_out, dec_in, dec_out) = dims(cfg);
    let drop = Layer::Dropout { rate: dropout };
    let mut enc = vec![Layer::Linear(Linear::glorot(enc_in, h, rng)), Layer::Relu, drop.clone()];
    if cfg.is_mimo() {
        enc.extend([Layer::Linear(Linear::glorot(h, h, rng)), Layer::Relu, drop.clone()]);
    }
    enc.push(Layer::Linear(Linear::glorot(h, enc_out, rng)));
    let mut dec = vec![
        Layer::Linear(Linear::glorot(dec_in, h, rng)),
        Layer::Relu,
        drop.clone(),
        Layer::Linear(Linear::glorot(h, h, rng)),
        Layer::Relu,
        drop.clone(),
    ];
    if cfg.is_mimo() {
        dec.extend([Layer::Linear(Linear::glorot(h, h, rng)), Layer::Relu, drop]);
    }
    dec.extend([Layer::Linear(Linear::glorot(h, dec_out, rng)), Layer::Sigmoid]);
    AeModel::from_parts(*cfg, DenseNet::new(enc)?, DenseNet::new(dec)?)
}

impl AeModel {
    /// Assembles a model after checking the dimension ladder and the final
    /// sigmoid.
    pub fn from_parts(cfg: LinkConfig, encoder: DenseNet, decoder: DenseNet) -> Result<Self> {
        cfg.validate()?;
        let (enc_in, enc_out, dec_in, dec_out) = dims(&cfg);
        check_dim("encoder input", enc_in, encoder.input_len().unwrap_or(0))?;
        check_dim("encoder output", enc_out, encoder.output_len().unwrap_or(0))?;
        check_dim("decoder input", dec_in, decoder.input_len().unwrap_or(0))?;
        check_dim("decoder output", dec_out, decoder.output_len().unwrap_or(0))?;
        if !matches!(decoder.layers().last(), Some(Layer::Sigmoid)) {
            return Err(Error::Config("decoder must end with a sigmoid".into()));
        }
        Ok(Self { encoder, decoder, cfg })
    }

    pub fn param_count(&self) -> ParamCount {
        ParamCount {
            encoder: self.encoder.param_count(),
            decoder: self.decoder.param_count(),
        }
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.encoder.set_mode(mode);
        self.decoder.set_mode(mode);
    }

    pub fn mode(&self) -> Mode {
        self.encoder.mode()
    }

    /// Encoder parameters followed by decoder parameters, matching the
    /// order of [`AeModel::backward_batch`].
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }

    pub fn bits_per_block(&self) -> usize {
        self.cfg.bits_per_block()
    }

    pub fn path(&self) -> LinkPath {
        LinkPath::new(&self.cfg)
    }

    /// Batched pass through encoder, link and decoder. Dropout follows the
    /// model mode.
    pub fn forward_batch(&self, bits: &Tensor2, pass: &PassConfig<'_>, seeds: &PassSeeds) -> Result<BatchPass> {
        self.forward_with_path(&self.path(), bits, pass, seeds)
    }

    pub fn forward_with_path(
        &self,
        path: &LinkPath,
        bits: &Tensor2,
        pass: &PassConfig<'_>,
        seeds: &PassSeeds,
    ) -> Result<BatchPass> {
        check_dim("bit block", self.bits_per_block(), bits.cols())?;
        let mut input = bits.clone();
        if pass.input_sigma > 0.0 {
            let mut rng = rng_from_seed(seeds.smoothing);
            for v in input.data_mut() {
                *v += pass.input_sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let mut drop_rng = rng_from_seed(seeds.dropout);
        let (raw, enc_cache) = self.encoder.forward(&input, &mut drop_rng)?;
        let (records, rx) = path.propagate_batch(&raw, pass.ch, pass.jam, seeds)?;
        let (probs, dec_cache) = self.decoder.forward(&rx, &mut drop_rng)?;
        let logits = dec_cache.layer_input(self.decoder.layers().len() - 1).clone();
        Ok(BatchPass {
            probs,
            logits,
            records,
            enc_cache,
            dec_cache,
        })
    }

    /// Parameter gradients (encoder then decoder) given the loss gradient at
    /// the decoder logits.
    pub fn backward_batch(
        &self,
        path: &LinkPath,
        pass: &BatchPass,
        ch: &ChannelParams,
        grad_logits: &Tensor2,
    ) -> Result<Gradients> {
        let top = self.decoder.layers().len() - 1;
        let (dec_grads, grad_rx) = self.decoder.backward_below(&pass.dec_cache, top, grad_logits)?;
        let enc_out = self.encoder.output_len().unwrap_or(0);
        let mut grad_raw = Tensor2::zeros(grad_rx.rows(), enc_out);
        for (r, rec) in pass.records.iter().enumerate() {
            let g = path.backprop(rec, ch, grad_rx.row(r))?;
            grad_raw.row_mut(r).copy_from_slice(&g);
        }
        let (enc_grads, _) = self.encoder.backward(&pass.enc_cache, &grad_raw)?;
        Ok(enc_grads.chain(dec_grads))
    }

    /// Mean BCE of one batch pass and its parameter gradients.
    pub fn loss_and_grads(&self, bits: &Tensor2, pass: &PassConfig<'_>, seeds: &PassSeeds) -> Result<(f64, Gradients)> {
        let path = self.path();
        let fwd = self.forward_with_path(&path, bits, pass, seeds)?;
        let (loss, grad) = bce_with_logits(&fwd.logits, bits)?;
        let grads = self.backward_batch(&path, &fwd, pass.ch, &grad)?;
        Ok((loss, grads))
    }
}

pub fn param_count(model: &AeModel) -> ParamCount {
    model.param_count()
}

/// Normalized transmit grid for one bit block. Dropout follows the model mode.
pub fn encode<R: RngCore>(model: &AeModel, bits: &[f64], rng: &mut R) -> Result<IqGrid> {
    check_dim("bit block", model.bits_per_block(), bits.len())?;
    let (raw, _) = model.encoder.forward_vec(bits, rng)?;
    let (scaled, _) = LinkPath::normalize(&raw);
    let (rows, cols) = model.path().tx_shape();
    IqGrid::from_reals(rows, cols, &scaled)
}

/// Bit probabilities for one receive grid.
pub fn decode<R: RngCore>(model: &AeModel, rx: &IqGrid, rng: &mut R) -> Result<Vec<f64>> {
    let (rows, cols) = model.path().rx_shape();
    check_dim("receive grid subcarriers", rows, rx.n_fft())?;
    check_dim("receive grid channel uses", cols, rx.n_ch())?;
    Ok(model.decoder.forward_vec(&rx.to_reals(), rng)?.0)
}

/// Single-frame pipeline. The four pass streams are drawn from `rng`.
pub fn end_to_end<R: Rng + ?Sized>(
    model: &AeModel,
    bits: &[f64],
    ch: &ChannelParams,
    jam: Option<&JammerParams>,
    rng: &mut R,
) -> Result<PipelineTrace> {
    let seeds = PassSeeds::draw(rng);
    let pass = model.forward_batch(&Tensor2::row_vector(bits.to_vec()), &PassConfig::new(ch, jam), &seeds)?;
    let rec = pass.records.into_iter().next().expect("one row");
    Ok(PipelineTrace {
        tx_grid: rec.tx,
        rx_grid: rec.rx,
        bit_probs: pass.probs.into_data(),
    })
}

/// Eval-mode transceiver halves, implemented by the float and quantized
/// models so both run through the same simulation loop.
pub trait Codec: Sync {
    fn link_config(&self) -> &LinkConfig;
    /// Raw encoder output, one row per bit block.
    fn encode_rows(&self, bits: &Tensor2) -> Result<Tensor2>;
    /// Bit probabilities, one row per receive grid.
    fn decode_rows(&self, rx: &Tensor2) -> Result<Tensor2>;
}

impl Codec for AeModel {
    fn link_config(&self) -> &LinkConfig {
        &self.cfg
    }

    fn encode_rows(&self, bits: &Tensor2) -> Result<Tensor2> {
        self.encoder.predict(bits)
    }

    fn decode_rows(&self, rx: &Tensor2) -> Result<Tensor2> {
        self.decoder.predict(rx)
    }
}

/// Monte Carlo BER/EVM of a codec. Chunk `c` draws its bits and pass seeds
/// from `derived_rng(seed, c)`, so two codecs on the same link see the same
/// bits, noise and jammer realizations.
pub fn simulate_codec<C: Codec + ?Sized>(
    codec: &C,
    ch: &ChannelParams,
    jam: Option<&JammerParams>,
    n_frames: u64,
    seed: u64,
) -> Result<LinkStats> {
    let cfg = codec.link_config();
    let path = LinkPath::new(cfg);
    let mut stats = LinkStats::default();
    for (c, size) in chunk_sizes(n_frames) {
        let mut rng = derived_rng(seed, c);
        let bits = random_bits(size, cfg.bits_per_block(), &mut rng);
        let seeds = PassSeeds::draw(&mut rng);
        let raw = codec.encode_rows(&bits)?;
        let (records, rx) = path.propagate_batch(&raw, ch, jam, &seeds)?;
        let probs = codec.decode_rows(&rx)?;
        stats.frames += size as u64;
        stats.bits += bits.data().len() as u64;
        stats.bit_errors += count_bit_errors(probs.data(), bits.data());
        for rec in &records {
            for (t, r) in rec.tx.data().iter().zip(rec.rx.data()) {
                stats.evm_error_energy += (r - t).norm_sqr();
                stats.evm_ref_energy += t.norm_sqr();
            }
        }
    }
    Ok(stats)
}

impl LinkSim for AeModel {
    fn bits_per_frame(&self) -> usize {
        self.bits_per_block()
    }

    fn simulate(&self, ch: &ChannelParams, jam: Option<&JammerParams>, n_frames: u64, seed: u64) -> Result<LinkStats> {
        simulate_codec(self, ch, jam, n_frames, seed)
    }
}
