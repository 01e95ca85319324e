//! Post-training int8 quantization of the linear layers with dynamic
//! per-row activation quantization.

use std::time::{Duration, Instant};

use crate::ae::{simulate_codec, AeModel, Codec};
use crate::error::{check_dim, Error, Result};
use crate::link::{LinkSim, LinkStats};
use crate::nn::{sigmoid, DenseNet, Layer, Tensor2};
use crate::phy::{ChannelParams, JammerParams, LinkConfig};
use crate::rng::{random_bits, rng_from_seed};

/// Smallest scale, so constant tensors still quantize.
pub const SCALE_FLOOR: f64 = 1e-12;

/// Per-tensor affine int8 tensor: `value = scale * (q - zero_point)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    pub values: Vec<i8>,
    pub scale: f64,
    pub zero_point: i32,
    pub rows: usize,
    pub cols: usize,
}

/// Scale and zero point for data spanning `[min, max]`. The range is widened
/// to contain 0 so that zero is exactly representable.
pub fn affine_params(min: f64, max: f64) -> (f64, i32) {
    let lo = min.min(0.0);
    let hi = max.max(0.0);
    let scale = ((hi - lo) / 255.0).max(SCALE_FLOOR);
    let zp = ((-lo / scale).round_ties_even() - 128.0).clamp(-128.0, 127.0) as i32;
    (scale, zp)
}

fn quantize_value(x: f64, scale: f64, zp: i32) -> i8 {
    (x / scale + zp as f64).round_ties_even().clamp(-128.0, 127.0) as i8
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

pub fn quantize_tensor(t: &Tensor2) -> Result<QuantTensor> {
    if !t.is_finite() {
        return Err(Error::Config("cannot quantize a tensor with non-finite entries".into()));
    }
    let (lo, hi) = if t.data().is_empty() {
        (0.0, 0.0)
    } else {
        min_max(t.data())
    };
    let (scale, zero_point) = affine_params(lo, hi);
    Ok(QuantTensor {
        values: t.data().iter().map(|&x| quantize_value(x, scale, zero_point)).collect(),
        scale,
        zero_point,
        rows: t.rows(),
        cols: t.cols(),
    })
}

impl QuantTensor {
    pub fn dequantize(&self) -> Tensor2 {
        let data = self
            .values
            .iter()
            .map(|&q| self.scale * (q as i32 - self.zero_point) as f64)
            .collect();
        Tensor2::from_vec(self.rows, self.cols, data).expect("shape kept from source")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantLinear {
    pub weight: QuantTensor,
    pub bias: Vec<f32>,
    /// `q - zero_point`, row-major `out x in`.
    offsets: Vec<i16>,
}

impl QuantLinear {
    pub fn new(weight: QuantTensor, bias: Vec<f32>) -> Result<Self> {
        check_dim("quantized bias", weight.rows, bias.len())?;
        let offsets = weight
            .values
            .iter()
            .map(|&q| q as i16 - weight.zero_point as i16)
            .collect();
        Ok(Self { weight, bias, offsets })
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows
    }

    fn forward(&self, x: &Tensor2) -> Result<Tensor2> {
        check_dim("quantized linear input", self.inputs(), x.cols())?;
        let n_in = self.inputs();
        let mut out = Tensor2::zeros(x.rows(), self.outputs());
        let mut xq = vec![0i16; n_in];
        for r in 0..x.rows() {
            let row = x.row(r);
            let (lo, hi) = if row.is_empty() { (0.0, 0.0) } else { min_max(row) };
            let (sx, zx) = affine_params(lo, hi);
            for (d, &v) in xq.iter_mut().zip(row) {
                *d = quantize_value(v, sx, zx) as i16 - zx as i16;
            }
            let s = sx * self.weight.scale;
            for ((o, w), b) in out
                .row_mut(r)
                .iter_mut()
                .zip(self.offsets.chunks_exact(n_in))
                .zip(&self.bias)
            {
                let acc: i32 = w.iter().zip(&xq).map(|(&a, &b)| a as i32 * b as i32).sum();
                *o = s * acc as f64 + *b as f64;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QuantLayer {
    Linear(QuantLinear),
    Relu,
    LeakyRelu { slope: f64 },
    Sigmoid,
}

/// Eval-mode network with int8 linear layers; dropout is dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantNet {
    pub layers: Vec<QuantLayer>,
}

impl QuantNet {
    pub fn from_dense(net: &DenseNet) -> Result<Self> {
        let mut layers = Vec::with_capacity(net.layers().len());
        for layer in net.layers() {
            match layer {
                Layer::Linear(lin) => {
                    let bias = lin.bias.iter().map(|&b| b as f32).collect();
                    layers.push(QuantLayer::Linear(QuantLinear::new(
                        quantize_tensor(&lin.weight)?,
                        bias,
                    )?));
                }
                Layer::Relu => layers.push(QuantLayer::Relu),
                Layer::LeakyRelu { slope } => layers.push(QuantLayer::LeakyRelu { slope: *slope }),
                Layer::Sigmoid => layers.push(QuantLayer::Sigmoid),
                Layer::Dropout { .. } => {}
            }
        }
        Ok(Self { layers })
    }

    pub fn linears(&self) -> impl Iterator<Item = &QuantLinear> {
        self.layers.iter().filter_map(|l| match l {
            QuantLayer::Linear(q) => Some(q),
            _ => None,
        })
    }

    pub fn forward(&self, input: &Tensor2) -> Result<Tensor2> {
        let mut x = input.clone();
        for layer in &self.layers {
            match layer {
                QuantLayer::Linear(q) => x = q.forward(&x)?,
                QuantLayer::Relu => x.map_inplace(|v| v.max(0.0)),
                QuantLayer::LeakyRelu { slope } => {
                    let s = *slope;
                    x.map_inplace(|v| if v > 0.0 { v } else { s * v });
                }
                QuantLayer::Sigmoid => x.map_inplace(sigmoid),
            }
        }
        Ok(x)
    }

    /// 1 byte per weight, 4 per bias, 8 per weight tensor (scale and zero
    /// point).
    pub fn size_bytes(&self) -> usize {
        self.linears()
            .map(|q| q.weight.values.len() + 4 * q.bias.len() + 8)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub cfg: LinkConfig,
    pub encoder: QuantNet,
    pub decoder: QuantNet,
}

pub fn quantize_model(model: &AeModel) -> Result<QuantizedModel> {
    Ok(QuantizedModel {
        cfg: model.cfg,
        encoder: QuantNet::from_dense(&model.encoder)?,
        decoder: QuantNet::from_dense(&model.decoder)?,
    })
}

/// Quantized inference through one network, e.g. `qmodel.decoder`.
pub fn quantized_forward(net: &QuantNet, input: &Tensor2) -> Result<Tensor2> {
    net.forward(input)
}

impl QuantizedModel {
    pub fn size_bytes(&self) -> usize {
        self.encoder.size_bytes() + self.decoder.size_bytes()
    }
}

/// Float model size at 4 bytes per parameter.
pub fn float_size_bytes(model: &AeModel) -> usize {
    4 * model.param_count().total()
}

impl Codec for QuantizedModel {
    fn link_config(&self) -> &LinkConfig {
        &self.cfg
    }

    fn encode_rows(&self, bits: &Tensor2) -> Result<Tensor2> {
        self.encoder.forward(bits)
    }

    fn decode_rows(&self, rx: &Tensor2) -> Result<Tensor2> {
        self.decoder.forward(rx)
    }
}

impl LinkSim for QuantizedModel {
    fn bits_per_frame(&self) -> usize {
        self.cfg.bits_per_block()
    }

    fn simulate(&self, ch: &ChannelParams, jam: Option<&JammerParams>, n_frames: u64, seed: u64) -> Result<LinkStats> {
        simulate_codec(self, ch, jam, n_frames, seed)
    }
}

/// Wall-clock time of `reps` encode+decode passes over `n_frames` frames.
pub fn time_inference<C: Codec + ?Sized>(codec: &C, n_frames: usize, reps: usize, seed: u64) -> Result<Duration> {
    let cfg = codec.link_config();
    let bits = random_bits(n_frames, cfg.bits_per_block(), &mut rng_from_seed(seed));
    let rx = codec.encode_rows(&bits)?;
    let start = Instant::now();
    for _ in 0..reps {
        let raw = codec.encode_rows(&bits)?;
        std::hint::black_box(&raw);
        if cfg.is_mimo() {
            continue;
        }
        std::hint::black_box(codec.decode_rows(&rx)?);
    }
    Ok(start.elapsed())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ae::build_ae;
    use crate::nn::Linear;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_zero_tensor_is_exact() {
        let q = quantize_tensor(&Tensor2::zeros(3, 4)).unwrap();
        assert!(q.values.iter().all(|&v| v as i32 == q.zero_point));
        assert!(q.dequantize().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn symmetric_unit_range() {
        let q = quantize_tensor(&Tensor2::row_vector(vec![-1.0, 1.0])).unwrap();
        assert!((q.scale - 2.0 / 255.0).abs() < 1e-15);
        assert_eq!(q.zero_point, 0);
        for (a, b) in q.dequantize().data().iter().zip([-1.0, 1.0]) {
            assert!((a - b).abs() <= 1.0 / 255.0 + 1e-15);
        }
    }

    #[test]
    fn zero_weight_layer_outputs_bias() {
        let net = DenseNet::new(vec![Layer::Linear(Linear {
            weight: Tensor2::zeros(3, 5),
            bias: vec![0.5, -1.25, 2.0],
        })])
        .unwrap();
        let q = QuantNet::from_dense(&net).unwrap();
        let out = q.forward(&Tensor2::row_vector(vec![0.3, -2.0, 1.0, 7.0, 0.0])).unwrap();
        assert_eq!(out.data(), &[0.5, -1.25, 2.0]);
    }

    #[test]
    fn reference_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let expect = [(1, 2.88, 0.73), (2, 3.03, 0.77), (4, 3.34, 0.85)];
        for (n_ch, fmb, qmb) in expect {
            let cfg = LinkConfig {
                n_ch,
                ..LinkConfig::default()
            };
            let m = build_ae(&cfg, &mut rng).unwrap();
            let f = float_size_bytes(&m) as f64 / 1e6;
            let q = quantize_model(&m).unwrap().size_bytes() as f64 / 1e6;
            assert!((f - fmb).abs() <= 0.02, "n_ch {n_ch}: float {f}");
            assert!((q - qmb).abs() <= 0.02, "n_ch {n_ch}: quantized {q}");
            assert!((3.7..=4.1).contains(&(f / q)));
        }
        assert_eq!(
            float_size_bytes(&build_ae(&LinkConfig::default(), &mut rng).unwrap()),
            2_876_992
        );
        assert_eq!(QuantNet { layers: vec![] }.size_bytes(), 0);
    }

    #[test]
    fn quantized_outputs_track_float_outputs() {
        let cfg = LinkConfig {
            hidden: 64,
            ..LinkConfig::default()
        };
        let m = build_ae(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let q = quantize_model(&m).unwrap();
        let bits = random_bits(32, cfg.bits_per_block(), &mut ChaCha8Rng::seed_from_u64(2));
        let f = m.encoder.predict(&bits).unwrap();
        let g = q.encode_rows(&bits).unwrap();
        let scale = f.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in f.data().iter().zip(g.data()) {
            assert!((a - b).abs() < 0.05 * scale, "{a} vs {b}");
        }
    }

    proptest! {
        #[test]
        fn round_trip_error_is_at_most_half_a_step(
            data in prop::collection::vec(-1e3f64..1e3, 1..64),
            shift in -1e3f64..1e3,
        ) {
            let t = Tensor2::row_vector(data.iter().map(|v| v + shift).collect());
            let q = quantize_tensor(&t).unwrap();
            for (a, b) in q.dequantize().data().iter().zip(t.data()) {
                prop_assert!((a - b).abs() <= q.scale * 0.5 * (1.0 + 1e-9) + 1e-12);
            }
        }

        #[test]
        fn zero_is_exactly_representable(data in prop::collection::vec(-5.0f64..5.0, 1..32)) {
            let q = quantize_tensor(&Tensor2::row_vector(data)).unwrap();
            let (s, zp) = (q.scale, q.zero_point);
            prop_assert_eq!(s * (quantize_value(0.0, s, zp) as i32 - zp) as f64, 0.0);
        }
    }
}
