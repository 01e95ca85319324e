//! Conditional WGAN-GP over received frames, and training-data augmentation
//! for the receiver network.

mod augment;

pub use augment::{
    augment_and_select, collect_frames, receiver_ber, train_receiver, AugmentReport, FrameSet, ReceiverConfig,
    Transmitter,
};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::nn::{AdamConfig, AdamState, DenseNet, Layer, Linear, Mode, PenaltyOutput, Tensor2};
use crate::phy::LinkConfig;
use crate::rng::{random_bits, rng_from_seed};

#[derive(Debug, Clone, PartialEq)]
pub struct GanConfig {
    pub z_dim: usize,
    /// Generator hidden width.
    pub gen_hidden: usize,
    /// Critic hidden width.
    pub critic_hidden: usize,
    pub critic_dropout: f64,
    pub leaky_slope: f64,
    pub lambda_gp: f64,
    /// Critic updates per generator update.
    pub critic_iters: usize,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Decay of the exponential moving average of generator weights that is
    /// returned after training; 0 returns the last iterate.
    pub gen_ema: f64,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            z_dim: 20,
            gen_hidden: 800,
            critic_hidden: 64,
            critic_dropout: 0.4,
            leaky_slope: 0.2,
            lambda_gp: 10.0,
            critic_iters: 5,
            adam: AdamConfig {
                alpha: 1e-4,
                beta1: 0.5,
                beta2: 0.9,
                epsilon: 1e-8,
            },
            epochs: 200,
            batch_size: 64,
            gen_ema: 0.999,
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.z_dim == 0 {
            return Err(Error::Config("z_dim must be at least 1".into()));
        }
        if !(self.lambda_gp >= 0.0) {
            return Err(Error::Config(format!(
                "lambda_gp must be non-negative, got {}",
                self.lambda_gp
            )));
        }
        if !(0.0..1.0).contains(&self.gen_ema) {
            return Err(Error::Config(format!(
                "gen_ema must be in [0, 1), got {}",
                self.gen_ema
            )));
        }
        if self.batch_size == 0 || self.critic_iters == 0 {
            return Err(Error::Config("batch_size and critic_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Widths of the generated sample and of the two conditioning inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GanDims {
    pub sample: usize,
    /// Condition appended to the latent vector.
    pub gen_cond: usize,
    /// Condition appended to the critic input.
    pub critic_cond: usize,
}

impl GanDims {
    /// Received time frame conditioned on the bit block; the critic also sees
    /// the clean transmitted frame.
    pub fn for_link(cfg: &LinkConfig) -> Self {
        let sample = 2 * cfg.symbol_len() * cfg.n_ch;
        Self {
            sample,
            gen_cond: cfg.k * cfg.n_fft,
            critic_cond: sample,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanPair {
    pub generator: DenseNet,
    pub critic: DenseNet,
    pub dims: GanDims,
    pub z_dim: usize,
}

impl GanPair {
    /// Generator `z + cond -> h -> h -> sample` with ReLU; critic
    /// `sample + cond -> c -> c -> c -> 1` with leaky ReLU and dropout
    /// after the second and third linear layers.
    pub fn new<R: Rng + ?Sized>(dims: GanDims, cfg: &GanConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.gen_hidden;
        let generator = DenseNet::new(vec![
            Layer::Linear(Linear::glorot(cfg.z_dim + dims.gen_cond, h, rng)),
            Layer::Relu,
            Layer::Linear(Linear::glorot(h, h, rng)),
            Layer::Relu,
            Layer::Linear(Linear::glorot(h, dims.sample, rng)),
        ])?;
        let c = cfg.critic_hidden;
        let lrelu = Layer::LeakyRelu { slope: cfg.leaky_slope };
        let drop = Layer::Dropout {
            rate: cfg.critic_dropout,
        };
        let critic = DenseNet::new(vec![
            Layer::Linear(Linear::glorot(dims.sample + dims.critic_cond, c, rng)),
            lrelu.clone(),
            Layer::Linear(Linear::glorot(c, c, rng)),
            drop.clone(),
            lrelu.clone(),
            Layer::Linear(Linear::glorot(c, c, rng)),
            drop,
            lrelu,
            Layer::Linear(Linear::glorot(c, 1, rng)),
        ])?;
        Ok(Self {
            generator,
            critic,
            dims,
            z_dim: cfg.z_dim,
        })
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.generator.set_mode(mode);
        self.critic.set_mode(mode);
    }

    fn latent<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Tensor2 {
        let data = (0..rows * self.z_dim).map(|_| rng.sample(StandardNormal)).collect();
        Tensor2::from_vec(rows, self.z_dim, data).expect("sized above")
    }

    /// Generated samples for a batch of latent rows and conditions.
    pub fn generate(&self, z: &Tensor2, cond: &Tensor2) -> Result<Tensor2> {
        check_dim("latent width", self.z_dim, z.cols())?;
        check_dim("generator condition", self.dims.gen_cond, cond.cols())?;
        self.generator.predict(&z.hconcat(cond)?)
    }
}

/// One synthetic sample from latent `z` and condition `cond`.
pub fn generator_forward(gan: &GanPair, z: &[f64], condition: &[f64]) -> Result<Vec<f64>> {
    let out = gan.generate(
        &Tensor2::row_vector(z.to_vec()),
        &Tensor2::row_vector(condition.to_vec()),
    )?;
    Ok(out.into_data())
}

/// `lambda * mean_b (||grad_yhat D(yhat_b | c_b)|| - 1)^2` with
/// `yhat = u real + (1 - u) fake` and one `u ~ U(0, 1)` per row.
pub fn gradient_penalty<R: Rng + ?Sized>(
    critic: &DenseNet,
    real: &Tensor2,
    fake: &Tensor2,
    cond: &Tensor2,
    lambda: f64,
    rng: &mut R,
) -> Result<PenaltyOutput> {
    check_dim("penalty fake rows", real.rows(), fake.rows())?;
    check_dim("penalty fake width", real.cols(), fake.cols())?;
    let mut mix = real.clone();
    for r in 0..real.rows() {
        let u: f64 = rng.random();
        for (m, f) in mix.row_mut(r).iter_mut().zip(fake.row(r)) {
            *m = u * *m + (1.0 - u) * f;
        }
    }
    let input = mix.hconcat(cond)?;
    let mut drop_rng = rng_from_seed(rng.random());
    critic.input_gradient_penalty(&input, 0..real.cols(), lambda, &mut drop_rng)
}

/// Training samples with their generator and critic conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct GanData {
    pub samples: Tensor2,
    pub gen_cond: Tensor2,
    pub critic_cond: Tensor2,
}

impl GanData {
    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn rows(&self, idx: &[usize]) -> (Tensor2, Tensor2, Tensor2) {
        let pick = |t: &Tensor2| {
            let mut out = Tensor2::zeros(idx.len(), t.cols());
            for (o, &i) in idx.iter().enumerate() {
                out.row_mut(o).copy_from_slice(t.row(i));
            }
            out
        };
        (pick(&self.samples), pick(&self.gen_cond), pick(&self.critic_cond))
    }
}

/// Per-epoch means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanEpoch {
    /// `E[D(fake)] - E[D(real)] + GP`
    pub critic_loss: f64,
    pub gp: f64,
    /// Mean critic input-gradient norm on interpolates.
    pub grad_norm: f64,
    /// `-E[D(fake)]`
    pub gen_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GanHistory {
    pub epochs: Vec<GanEpoch>,
}

fn mean(t: &Tensor2) -> f64 {
    t.data().iter().sum::<f64>() / t.data().len().max(1) as f64
}

/// Alternating critic/generator optimization. An epoch is
/// `ceil(n / batch_size)` generator updates, each preceded by
/// `critic_iters` critic updates; minibatches are drawn with replacement.
pub fn train_wgan_gp(data: &GanData, dims: GanDims, cfg: &GanConfig) -> Result<(GanPair, GanHistory)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("GAN training data".into()));
    }
    check_dim("GAN sample width", dims.sample, data.samples.cols())?;
    check_dim("GAN generator condition", dims.gen_cond, data.gen_cond.cols())?;
    check_dim("GAN critic condition", dims.critic_cond, data.critic_cond.cols())?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut gan = GanPair::new(dims, cfg, &mut rng)?;
    gan.set_mode(Mode::Train);
    let mut adam_g = AdamState::new(cfg.adam);
    let mut adam_c = AdamState::new(cfg.adam);
    let mut ema = gan.generator.clone();
    let mut gen_steps = 0usize;
    let b = cfg.batch_size;
    let steps = data.len().div_ceil(b);
    let mut history = GanHistory::default();
    for epoch in 0..cfg.epochs {
        let mut acc = [0.0; 4];
        let mut critic_steps = 0usize;
        for step in 0..steps {
            for _ in 0..cfg.critic_iters {
                let idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..data.len())).collect();
                let (real, gcond, ccond) = data.rows(&idx);
                let z = gan.latent(b, &mut rng);
                let fake = gan.generator.predict(&z.hconcat(&gcond)?)?;
                let mut drop_rng = rng_from_seed(rng.random());
                let (d_real, c_real) = gan.critic.forward(&real.hconcat(&ccond)?, &mut drop_rng)?;
                let (d_fake, c_fake) = gan.critic.forward(&fake.hconcat(&ccond)?, &mut drop_rng)?;
                let gp = gradient_penalty(&gan.critic, &real, &fake, &ccond, cfg.lambda_gp, &mut rng)?;
                let (mut grads, _) = gan.critic.backward(&c_fake, &Tensor2::filled(b, 1, 1.0 / b as f64))?;
                let (g_real, _) = gan.critic.backward(&c_real, &Tensor2::filled(b, 1, -1.0 / b as f64))?;
                grads.add_scaled(&g_real, 1.0)?;
                grads.add_scaled(&gp.grads, 1.0)?;
                let loss = mean(&d_fake) - mean(&d_real) + gp.value;
                if !loss.is_finite() || !grads.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: step });
                }
                adam_c.step(&mut gan.critic.params_mut(), &grads)?;
                acc[0] += loss;
                acc[1] += gp.value;
                acc[2] += gp.norms.iter().sum::<f64>() / b as f64;
                critic_steps += 1;
            }
            let idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..data.len())).collect();
            let (_, gcond, ccond) = data.rows(&idx);
            let z = gan.latent(b, &mut rng);
            let (fake, g_cache) = gan.generator.forward(&z.hconcat(&gcond)?, &mut rng)?;
            let mut drop_rng = rng_from_seed(rng.random());
            let (d_fake, c_fake) = gan.critic.forward(&fake.hconcat(&ccond)?, &mut drop_rng)?;
            let (_, d_in) = gan.critic.backward(&c_fake, &Tensor2::filled(b, 1, -1.0 / b as f64))?;
            let (grads, _) = gan.generator.backward(&g_cache, &d_in.columns(0..dims.sample))?;
            let loss = -mean(&d_fake);
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: step });
            }
            adam_g.step(&mut gan.generator.params_mut(), &grads)?;
            // warm-up keeps the average from remembering the initialization
            gen_steps += 1;
            let d = cfg.gen_ema.min(gen_steps as f64 / (gen_steps as f64 + 10.0));
            for (e, p) in ema.params_mut().into_iter().zip(gan.generator.params_mut()) {
                for (e, p) in e.iter_mut().zip(p.iter()) {
                    *e = d * *e + (1.0 - d) * p;
                }
            }
            acc[3] += loss;
        }
        let c = critic_steps.max(1) as f64;
        let rec = GanEpoch {
            critic_loss: acc[0] / c,
            gp: acc[1] / c,
            grad_norm: acc[2] / c,
            gen_loss: acc[3] / steps as f64,
        };
        log::debug!("gan epoch {} {:?}", epoch + 1, rec);
        history.epochs.push(rec);
    }
    gan.generator = ema;
    gan.set_mode(Mode::Eval);
    Ok((gan, history))
}

/// `n` samples with fresh latents and uniformly random bit conditions.
/// Returns `(conditions, samples)`.
pub fn generate_synthetic<R: Rng + ?Sized>(gan: &GanPair, n: usize, rng: &mut R) -> Result<(Tensor2, Tensor2)> {
    let cond = random_bits(n, gan.dims.gen_cond, rng);
    let z = gan.latent(n, rng);
    let samples = gan.generate(&z, &cond)?;
    Ok((cond, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear_critic(w: Vec<f64>) -> DenseNet {
        let n = w.len();
        DenseNet::new(vec![Layer::Linear(Linear {
            weight: Tensor2::from_vec(1, n, w).unwrap(),
            bias: vec![0.0],
        })])
        .unwrap()
    }

    #[test]
    fn penalty_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let real = Tensor2::from_rows(&[vec![0.3, -1.0, 2.0, 0.1]]).unwrap();
        let fake = Tensor2::from_rows(&[vec![1.0, 0.0, -0.5, 0.4]]).unwrap();
        let none = Tensor2::zeros(1, 0);
        let unit = linear_critic(vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(
            gradient_penalty(&unit, &real, &fake, &none, 10.0, &mut rng)
                .unwrap()
                .value,
            0.0
        );
        let twice_sum = linear_critic(vec![2.0; 4]);
        let p = gradient_penalty(&twice_sum, &real, &fake, &none, 10.0, &mut rng).unwrap();
        assert!((p.value - 90.0).abs() < 1e-12);
        assert!((p.norms[0] - 4.0).abs() < 1e-12);
        assert_eq!(
            gradient_penalty(&twice_sum, &real, &fake, &none, 0.0, &mut rng)
                .unwrap()
                .value,
            0.0
        );
    }

    #[test]
    fn reference_architecture_dimensions() {
        let cfg = GanConfig::default();
        let dims = GanDims::for_link(&LinkConfig::default());
        let gan = GanPair::new(dims, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(gan.generator.input_len(), Some(44));
        assert_eq!(gan.generator.output_len(), Some(30));
        assert_eq!(gan.critic.input_len(), Some(60));
        assert_eq!(
            gan.generator.param_count(),
            44 * 800 + 800 + 800 * 800 + 800 + 800 * 30 + 30
        );
        assert_eq!(gan.critic.param_count(), 60 * 64 + 64 + 2 * (64 * 64 + 64) + 65);
        let out = generator_forward(&gan, &[0.1; 20], &[1.0; 24]).unwrap();
        assert_eq!(out.len(), 30);
        assert_eq!(out, generator_forward(&gan, &[0.1; 20], &[1.0; 24]).unwrap());
        assert!(generator_forward(&gan, &[0.1; 19], &[1.0; 24]).is_err());
    }

    #[test]
    fn empty_data_is_rejected() {
        let dims = GanDims {
            sample: 1,
            gen_cond: 0,
            critic_cond: 0,
        };
        let data = GanData {
            samples: Tensor2::zeros(0, 1),
            gen_cond: Tensor2::zeros(0, 0),
            critic_cond: Tensor2::zeros(0, 0),
        };
        assert!(matches!(
            train_wgan_gp(&data, dims, &GanConfig::default()),
            Err(Error::Empty(_))
        ));
    }

    fn toy_config(seed: u64) -> GanConfig {
        GanConfig {
            z_dim: 4,
            gen_hidden: 32,
            critic_hidden: 32,
            critic_dropout: 0.0,
            adam: AdamConfig {
                alpha: 1e-3,
                ..GanConfig::default().adam
            },
            epochs: 60,
            batch_size: 64,
            seed,
            ..GanConfig::default()
        }
    }

    // N(2, 0.5^2) in each of `dim` coordinates
    fn gaussian_data(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> GanData {
        let samples = (0..n * dim)
            .map(|_| 2.0 + 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        GanData {
            samples: Tensor2::from_vec(n, dim, samples).unwrap(),
            gen_cond: Tensor2::zeros(n, 0),
            critic_cond: Tensor2::zeros(n, 0),
        }
    }

    const PLANE: GanDims = GanDims {
        sample: 2,
        gen_cond: 0,
        critic_cond: 0,
    };

    #[test]
    fn learns_a_shifted_gaussian() {
        let data = gaussian_data(2048, 2, &mut ChaCha8Rng::seed_from_u64(10));
        let cfg = GanConfig {
            epochs: 100,
            ..toy_config(11)
        };
        let (gan, hist) = train_wgan_gp(&data, PLANE, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (_, s) = generate_synthetic(&gan, 20_000, &mut rng).unwrap();
        for c in 0..2 {
            let col: Vec<f64> = (0..s.rows()).map(|r| s.get(r, c)).collect();
            let n = col.len() as f64;
            let m = col.iter().sum::<f64>() / n;
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            assert!((m - 2.0).abs() < 0.1, "mean {m}");
            assert!((sd - 0.5).abs() < 0.12, "std {sd}");
        }
        let last = hist.epochs.last().unwrap();
        assert!(last.gp < 0.1 * cfg.lambda_gp, "gp {}", last.gp);
        assert!((0.5..=1.5).contains(&last.grad_norm), "grad norm {}", last.grad_norm);
    }

    #[test]
    fn training_is_reproducible() {
        let data = gaussian_data(256, 2, &mut ChaCha8Rng::seed_from_u64(13));
        let cfg = GanConfig {
            epochs: 2,
            critic_dropout: 0.4,
            ..toy_config(14)
        };
        assert_eq!(
            train_wgan_gp(&data, PLANE, &cfg).unwrap(),
            train_wgan_gp(&data, PLANE, &cfg).unwrap()
        );
    }

    #[test]
    fn conditioning_separates_classes() {
        // class c in {0, 1} maps to N(4c - 2, 0.5^2) in two dimensions
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let n = 2048;
        let cond = random_bits(n, 1, &mut rng);
        let mut samples = Tensor2::zeros(n, 2);
        for r in 0..n {
            let mu = 4.0 * cond.get(r, 0) - 2.0;
            for v in samples.row_mut(r) {
                *v = mu + 0.5 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let data = GanData {
            samples,
            gen_cond: cond.clone(),
            critic_cond: cond,
        };
        let dims = GanDims {
            sample: 2,
            gen_cond: 1,
            critic_cond: 1,
        };
        let (gan, _) = train_wgan_gp(&data, dims, &toy_config(21)).unwrap();
        let (c, s) = generate_synthetic(&gan, 2000, &mut rng).unwrap();
        let correct = (0..2000)
            .filter(|&r| ((s.get(r, 0) + s.get(r, 1)) > 0.0) == (c.get(r, 0) > 0.5))
            .count();
        assert!(correct as f64 / 2000.0 > 0.9, "probe accuracy {correct}/2000");
    }

    #[test]
    fn synthetic_batch_shapes() {
        let cfg = GanConfig {
            gen_hidden: 16,
            ..GanConfig::default()
        };
        let gan = GanPair::new(
            GanDims::for_link(&LinkConfig::default()),
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (c, s) = generate_synthetic(&gan, 0, &mut rng).unwrap();
        assert_eq!((c.rows(), s.rows()), (0, 0));
        let (c, s) = generate_synthetic(&gan, 400, &mut rng).unwrap();
        assert_eq!(c.shape(), (400, 24));
        assert_eq!(s.shape(), (400, 30));
    }
}
