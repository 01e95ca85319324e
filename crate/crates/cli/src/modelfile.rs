//! `AECM` model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "AECM" | u16 version = 1 | u8 payload (0 float32, 1 int8) | u8 kind (0 AE, 1 GAN)
//! LinkConfig: u32 n_fft, n_cp, k, n_ch, hidden, n_t, n_r
//! GAN only:   u32 z_dim, sample, gen_cond, critic_cond
//! u32 net count, then per net: u32 layer count, then per layer a u8 tag:
//!   0 linear  u32 out, u32 in, then
//!             float32: f32 weights (out x in, row-major), f32 bias
//!             int8:    f64 scale, i32 zero point, i8 weights, f32 bias
//!   1 relu | 2 leaky relu (f64 slope) | 3 sigmoid | 4 dropout (f64 rate)
//! ```
//!
//! Float weights are stored as f32, so a save rounds the in-memory f64
//! weights once; after that, load and save are exact inverses.

use std::path::Path;

use aecomm::ae::AeModel;
use aecomm::gan::{GanDims, GanPair};
use aecomm::nn::{DenseNet, Layer, Linear, Tensor2};
use aecomm::phy::LinkConfig;
use aecomm::quantize::{QuantLayer, QuantLinear, QuantNet, QuantTensor, QuantizedModel};

pub const MAGIC: &[u8; 4] = b"AECM";
pub const VERSION: u16 = 1;

const TAG_LINEAR: u8 = 0;
const TAG_RELU: u8 = 1;
const TAG_LEAKY: u8 = 2;
const TAG_SIGMOID: u8 = 3;
const TAG_DROPOUT: u8 = 4;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad magic at offset {offset}: expected {expected:?}")]
    BadMagic { offset: usize, expected: String },
    #[error("unsupported version {version} at offset {offset}")]
    Version { offset: usize, version: u16 },
    #[error("truncated at offset {offset}: {what} needs {needed} more bytes")]
    Truncated {
        offset: usize,
        what: &'static str,
        needed: usize,
    },
    #[error("invalid {what} at offset {offset}: {msg}")]
    Invalid {
        offset: usize,
        what: &'static str,
        msg: String,
    },
    #[error("{len} trailing bytes at offset {offset}")]
    Trailing { offset: usize, len: usize },
}

pub type Result<T> = std::result::Result<T, FormatError>;

#[derive(Debug, Clone, PartialEq)]
pub enum StoredModel {
    Float(AeModel),
    Quantized(QuantizedModel),
    Gan(GanPair),
}

impl StoredModel {
    pub fn link_config(&self) -> Option<&LinkConfig> {
        match self {
            StoredModel::Float(m) => Some(&m.cfg),
            StoredModel::Quantized(q) => Some(&q.cfg),
            StoredModel::Gan(_) => None,
        }
    }

    fn kind_name(&self) -> &'static str {
        match self {
            StoredModel::Float(_) => "float autoencoder",
            StoredModel::Quantized(_) => "quantized autoencoder",
            StoredModel::Gan(_) => "GAN",
        }
    }

    pub fn into_float(self) -> std::result::Result<AeModel, String> {
        match self {
            StoredModel::Float(m) => Ok(m),
            other => Err(format!("expected a float autoencoder, found a {}", other.kind_name())),
        }
    }

    pub fn into_gan(self) -> std::result::Result<GanPair, String> {
        match self {
            StoredModel::Gan(g) => Ok(g),
            other => Err(format!("expected a GAN, found a {}", other.kind_name())),
        }
    }
}

// ---- writing ----

pub(crate) struct Writer {
    pub(crate) buf: Vec<u8>,
}

impl Writer {
    pub(crate) fn new() -> Self {
        Self { buf: Vec::new() }
    }
    pub(crate) fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    pub(crate) fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub(crate) fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }
    pub(crate) fn u32(&mut self, v: usize) {
        self.bytes(&(v as u32).to_le_bytes());
    }
    pub(crate) fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    pub(crate) fn i32(&mut self, v: i32) {
        self.bytes(&v.to_le_bytes());
    }
    pub(crate) fn f32(&mut self, v: f64) {
        self.bytes(&(v as f32).to_le_bytes());
    }
    pub(crate) fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
}

fn write_link(w: &mut Writer, c: &LinkConfig) {
    for v in [c.n_fft, c.n_cp, c.k, c.n_ch, c.hidden, c.n_t, c.n_r] {
        w.u32(v);
    }
}

fn write_dense(w: &mut Writer, net: &DenseNet) {
    w.u32(net.layers().len());
    for layer in net.layers() {
        match layer {
            Layer::Linear(lin) => {
                w.u8(TAG_LINEAR);
                w.u32(lin.outputs());
                w.u32(lin.inputs());
                lin.weight.data().iter().for_each(|&v| w.f32(v));
                lin.bias.iter().for_each(|&v| w.f32(v));
            }
            Layer::Relu => w.u8(TAG_RELU),
            Layer::LeakyRelu { slope } => {
                w.u8(TAG_LEAKY);
                w.f64(*slope);
            }
            Layer::Sigmoid => w.u8(TAG_SIGMOID),
            Layer::Dropout { rate } => {
                w.u8(TAG_DROPOUT);
                w.f64(*rate);
            }
        }
    }
}

fn write_quant(w: &mut Writer, net: &QuantNet) {
    w.u32(net.layers.len());
    for layer in &net.layers {
        match layer {
            QuantLayer::Linear(q) => {
                w.u8(TAG_LINEAR);
                w.u32(q.outputs());
                w.u32(q.inputs());
                w.f64(q.weight.scale);
                w.i32(q.weight.zero_point);
                w.bytes(&q.weight.values.iter().map(|&v| v as u8).collect::<Vec<_>>());
                q.bias.iter().for_each(|&b| w.bytes(&b.to_le_bytes()));
            }
            QuantLayer::Relu => w.u8(TAG_RELU),
            QuantLayer::LeakyRelu { slope } => {
                w.u8(TAG_LEAKY);
                w.f64(*slope);
            }
            QuantLayer::Sigmoid => w.u8(TAG_SIGMOID),
        }
    }
}

pub fn to_bytes(model: &StoredModel) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u16(VERSION);
    let (payload, kind) = match model {
        StoredModel::Float(_) => (0, 0),
        StoredModel::Quantized(_) => (1, 0),
        StoredModel::Gan(_) => (0, 1),
    };
    w.u8(payload);
    w.u8(kind);
    match model {
        StoredModel::Float(m) => {
            write_link(&mut w, &m.cfg);
            w.u32(2);
            write_dense(&mut w, &m.encoder);
            write_dense(&mut w, &m.decoder);
        }
        StoredModel::Quantized(q) => {
            write_link(&mut w, &q.cfg);
            w.u32(2);
            write_quant(&mut w, &q.encoder);
            write_quant(&mut w, &q.decoder);
        }
        StoredModel::Gan(g) => {
            // GANs carry no link of their own
            write_link(&mut w, &LinkConfig::default());
            for v in [g.z_dim, g.dims.sample, g.dims.gen_cond, g.dims.critic_cond] {
                w.u32(v);
            }
            w.u32(2);
            write_dense(&mut w, &g.generator);
            write_dense(&mut w, &g.critic);
        }
    }
    w.buf
}

pub fn save_model(model: &StoredModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

// ---- reading ----

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let left = self.buf.len() - self.pos;
        if n > left {
            return Err(FormatError::Truncated {
                offset: self.pos,
                what,
                needed: n - left,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }
    pub(crate) fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    pub(crate) fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }
    pub(crate) fn u32(&mut self, what: &'static str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.array(what)?) as usize)
    }
    pub(crate) fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }
    pub(crate) fn i32(&mut self, what: &'static str) -> Result<i32> {
        Ok(i32::from_le_bytes(self.array(what)?))
    }
    pub(crate) fn f64(&mut self, what: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }
    pub(crate) fn f32s(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>> {
        let bytes = self.take(n.saturating_mul(4), what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
            .collect())
    }

    pub(crate) fn invalid(&self, offset: usize, what: &'static str, msg: impl Into<String>) -> FormatError {
        FormatError::Invalid {
            offset,
            what,
            msg: msg.into(),
        }
    }

    pub(crate) fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let at = self.pos;
        if self.take(4, "magic")? != magic {
            return Err(FormatError::BadMagic {
                offset: at,
                expected: String::from_utf8_lossy(magic).into_owned(),
            });
        }
        Ok(())
    }

    pub(crate) fn version(&mut self) -> Result<()> {
        let at = self.pos;
        let version = self.u16("version")?;
        if version != VERSION {
            return Err(FormatError::Version { offset: at, version });
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(FormatError::Trailing {
                offset: self.pos,
                len: self.buf.len() - self.pos,
            });
        }
        Ok(())
    }
}

fn read_link(r: &mut Reader) -> Result<LinkConfig> {
    let at = r.pos;
    let mut v = [0usize; 7];
    for x in &mut v {
        *x = r.u32("link config")?;
    }
    let cfg = LinkConfig {
        n_fft: v[0],
        n_cp: v[1],
        k: v[2],
        n_ch: v[3],
        hidden: v[4],
        n_t: v[5],
        n_r: v[6],
    };
    cfg.validate()
        .map_err(|e| r.invalid(at, "link config", e.to_string()))?;
    Ok(cfg)
}

/// Dimensions of a linear record, refusing sizes beyond the input.
fn read_dims(r: &mut Reader, bytes_per_weight: usize) -> Result<(usize, usize)> {
    let at = r.pos;
    let (out, inp) = (r.u32("linear dims")?, r.u32("linear dims")?);
    let need = out
        .checked_mul(inp)
        .and_then(|n| n.checked_mul(bytes_per_weight))
        .ok_or_else(|| r.invalid(at, "linear dims", format!("{out} x {inp} overflows")))?;
    if need > r.buf.len() {
        return Err(r.invalid(at, "linear dims", format!("{out} x {inp} exceeds the file")));
    }
    Ok((out, inp))
}

fn read_rate(r: &mut Reader, what: &'static str) -> Result<f64> {
    let at = r.pos;
    let v = r.f64(what)?;
    if !v.is_finite() {
        return Err(r.invalid(at, what, format!("{v}")));
    }
    Ok(v)
}

fn read_dense(r: &mut Reader) -> Result<DenseNet> {
    let at = r.pos;
    let n = r.u32("layer count")?;
    let mut layers = Vec::new();
    for _ in 0..n {
        let tag_at = r.pos;
        layers.push(match r.u8("layer tag")? {
            TAG_LINEAR => {
                let (out, inp) = read_dims(r, 4)?;
                let w = r.f32s(out * inp, "weights")?;
                let bias = r.f32s(out, "bias")?;
                Layer::Linear(Linear {
                    weight: Tensor2::from_vec(out, inp, w).expect("sized by dims"),
                    bias,
                })
            }
            TAG_RELU => Layer::Relu,
            TAG_LEAKY => Layer::LeakyRelu {
                slope: read_rate(r, "leaky slope")?,
            },
            TAG_SIGMOID => Layer::Sigmoid,
            TAG_DROPOUT => Layer::Dropout {
                rate: read_rate(r, "dropout rate")?,
            },
            t => return Err(r.invalid(tag_at, "layer tag", format!("unknown tag {t}"))),
        });
    }
    DenseNet::new(layers).map_err(|e| r.invalid(at, "network", e.to_string()))
}

fn read_quant(r: &mut Reader) -> Result<QuantNet> {
    let n = r.u32("layer count")?;
    let mut layers = Vec::new();
    for _ in 0..n {
        let tag_at = r.pos;
        layers.push(match r.u8("layer tag")? {
            TAG_LINEAR => {
                let (rows, cols) = read_dims(r, 1)?;
                let scale_at = r.pos;
                let scale = r.f64("scale")?;
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(r.invalid(scale_at, "scale", format!("{scale}")));
                }
                let zero_point = r.i32("zero point")?;
                let values = r.take(rows * cols, "int8 weights")?.iter().map(|&b| b as i8).collect();
                let bias = r.f32s(rows, "bias")?.into_iter().map(|b| b as f32).collect();
                let weight = QuantTensor {
                    values,
                    scale,
                    zero_point,
                    rows,
                    cols,
                };
                QuantLayer::Linear(
                    QuantLinear::new(weight, bias).map_err(|e| r.invalid(tag_at, "layer", e.to_string()))?,
                )
            }
            TAG_RELU => QuantLayer::Relu,
            TAG_LEAKY => QuantLayer::LeakyRelu {
                slope: read_rate(r, "leaky slope")?,
            },
            TAG_SIGMOID => QuantLayer::Sigmoid,
            t => return Err(r.invalid(tag_at, "layer tag", format!("unknown tag {t}"))),
        });
    }
    Ok(QuantNet { layers })
}

fn expect_two_nets(r: &mut Reader) -> Result<()> {
    let at = r.pos;
    let n = r.u32("net count")?;
    if n != 2 {
        return Err(r.invalid(at, "net count", format!("expected 2, found {n}")));
    }
    Ok(())
}

pub fn from_bytes(buf: &[u8]) -> Result<StoredModel> {
    let mut r = Reader::new(buf);
    r.magic(MAGIC)?;
    r.version()?;
    let flag_at = r.pos;
    let payload = r.u8("payload flag")?;
    let kind = r.u8("model kind")?;
    let model = match (payload, kind) {
        (0, 0) => {
            let cfg = read_link(&mut r)?;
            expect_two_nets(&mut r)?;
            let at = r.pos;
            let (enc, dec) = (read_dense(&mut r)?, read_dense(&mut r)?);
            StoredModel::Float(AeModel::from_parts(cfg, enc, dec).map_err(|e| r.invalid(at, "model", e.to_string()))?)
        }
        (1, 0) => {
            let cfg = read_link(&mut r)?;
            expect_two_nets(&mut r)?;
            let (encoder, decoder) = (read_quant(&mut r)?, read_quant(&mut r)?);
            StoredModel::Quantized(QuantizedModel { cfg, encoder, decoder })
        }
        (0, 1) => {
            read_link(&mut r)?;
            let at = r.pos;
            let z_dim = r.u32("GAN dims")?;
            let dims = GanDims {
                sample: r.u32("GAN dims")?,
                gen_cond: r.u32("GAN dims")?,
                critic_cond: r.u32("GAN dims")?,
            };
            expect_two_nets(&mut r)?;
            let (generator, critic) = (read_dense(&mut r)?, read_dense(&mut r)?);
            let fits = generator.input_len() == Some(z_dim + dims.gen_cond)
                && generator.output_len() == Some(dims.sample)
                && critic.input_len() == Some(dims.sample + dims.critic_cond)
                && critic.output_len() == Some(1);
            if !fits {
                return Err(r.invalid(at, "GAN dims", "networks do not match the declared dimensions"));
            }
            StoredModel::Gan(GanPair {
                generator,
                critic,
                dims,
                z_dim,
            })
        }
        _ => {
            return Err(r.invalid(flag_at, "payload flag", format!("payload {payload} with kind {kind}")));
        }
    };
    r.finish()?;
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<StoredModel> {
    let buf = std::fs::read(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use aecomm::ae::build_ae;
    use aecomm::gan::GanConfig;
    use aecomm::quantize::quantize_model;
    use aecomm::rng::rng_from_seed;

    fn small() -> LinkConfig {
        LinkConfig {
            n_fft: 4,
            hidden: 8,
            ..LinkConfig::default()
        }
    }

    fn models() -> Vec<StoredModel> {
        let ae = build_ae(&small(), &mut rng_from_seed(1)).unwrap();
        let q = quantize_model(&ae).unwrap();
        let gcfg = GanConfig {
            gen_hidden: 8,
            critic_hidden: 8,
            z_dim: 3,
            ..GanConfig::default()
        };
        let gan = GanPair::new(GanDims::for_link(&small()), &gcfg, &mut rng_from_seed(2)).unwrap();
        vec![StoredModel::Float(ae), StoredModel::Quantized(q), StoredModel::Gan(gan)]
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        for m in models() {
            let first = to_bytes(&m);
            let loaded = from_bytes(&first).unwrap();
            assert_eq!(std::mem::discriminant(&loaded), std::mem::discriminant(&m));
            assert_eq!(to_bytes(&loaded), first);
        }
    }

    #[test]
    fn payload_flag_is_preserved() {
        let ms = models();
        assert_eq!(to_bytes(&ms[0])[6], 0);
        assert_eq!(to_bytes(&ms[1])[6], 1);
        assert!(matches!(
            from_bytes(&to_bytes(&ms[1])).unwrap(),
            StoredModel::Quantized(_)
        ));
    }

    #[test]
    fn quantized_payload_is_exact() {
        let q = &models()[1];
        assert_eq!(&from_bytes(&to_bytes(q)).unwrap(), q);
    }

    #[test]
    fn float_weights_round_through_f32() {
        let StoredModel::Float(ae) = &models()[0] else {
            unreachable!()
        };
        let StoredModel::Float(back) = from_bytes(&to_bytes(&models()[0])).unwrap() else {
            panic!("kind changed")
        };
        let (Layer::Linear(a), Layer::Linear(b)) = (&ae.encoder.layers()[0], &back.encoder.layers()[0]) else {
            panic!("first layer is linear")
        };
        for (x, y) in a.weight.data().iter().zip(b.weight.data()) {
            assert_eq!(*y, *x as f32 as f64);
        }
    }

    #[test]
    fn corrupted_magic_names_offset_zero() {
        let mut b = to_bytes(&models()[0]);
        b[0] = b'X';
        let err = from_bytes(&b).unwrap_err();
        assert!(matches!(err, FormatError::BadMagic { offset: 0, .. }));
        assert!(err.to_string().contains("offset 0"));
    }

    #[test]
    fn wrong_version_and_truncation_are_reported() {
        let mut b = to_bytes(&models()[0]);
        b[4] = 9;
        assert!(matches!(
            from_bytes(&b),
            Err(FormatError::Version { offset: 4, version: 9 })
        ));
        let b = to_bytes(&models()[0]);
        for cut in [3, 10, b.len() - 1] {
            assert!(
                matches!(from_bytes(&b[..cut]), Err(FormatError::Truncated { .. })),
                "cut {cut}"
            );
        }
        let mut long = b.clone();
        long.push(0);
        assert!(matches!(from_bytes(&long), Err(FormatError::Trailing { .. })));
    }

    #[test]
    fn unknown_layer_tag_is_rejected() {
        let mut b = to_bytes(&models()[0]);
        // first layer tag follows the header, link block, net and layer counts
        let at = 4 + 2 + 2 + 28 + 4 + 4;
        b[at] = 42;
        let err = from_bytes(&b).unwrap_err();
        assert!(
            matches!(err, FormatError::Invalid { offset, .. } if offset == at),
            "{err}"
        );
    }
}
