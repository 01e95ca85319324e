//! `AEDS` frame datasets.
//!
//! ```text
//! "AEDS" | u16 version = 1 | u64 frame count | u32 bits per frame | u32 reals per frame
//! per frame: condition bits packed MSB-first into whole bytes, then f32 I/Q reals
//! ```

use std::path::Path;

use aecomm::gan::FrameSet;
use aecomm::nn::Tensor2;

use crate::modelfile::{FormatError, Reader, Result, Writer, VERSION};

pub const MAGIC: &[u8; 4] = b"AEDS";

pub fn to_bytes(set: &FrameSet) -> Vec<u8> {
    let (n_bits, n_reals) = (set.bits.cols(), set.frames.cols());
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u16(VERSION);
    w.u64(set.len() as u64);
    w.u32(n_bits);
    w.u32(n_reals);
    for r in 0..set.len() {
        for chunk in set.bits.row(r).chunks(8) {
            let byte = chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| acc | (u8::from(b > 0.5) << (7 - i)));
            w.u8(byte);
        }
        set.frames.row(r).iter().for_each(|&v| w.f32(v));
    }
    w.buf
}

pub fn from_bytes(buf: &[u8]) -> Result<FrameSet> {
    let mut r = Reader::new(buf);
    r.magic(MAGIC)?;
    r.version()?;
    let count_at = r.pos;
    let count = r.u64("frame count")?;
    let n_bits = r.u32("bits per frame")?;
    let n_reals = r.u32("reals per frame")?;
    let per_frame = n_bits.div_ceil(8) as u64 + 4 * n_reals as u64;
    if count.saturating_mul(per_frame) > buf.len() as u64 {
        return Err(FormatError::Truncated {
            offset: count_at,
            what: "frames",
            needed: (count.saturating_mul(per_frame) - (buf.len() - r.pos) as u64) as usize,
        });
    }
    let count = count as usize;
    let mut bits = Tensor2::zeros(count, n_bits);
    let mut frames = Tensor2::zeros(count, n_reals);
    for f in 0..count {
        let packed = r.take(n_bits.div_ceil(8), "packed bits")?;
        for (i, v) in bits.row_mut(f).iter_mut().enumerate() {
            *v = f64::from((packed[i / 8] >> (7 - i % 8)) & 1);
        }
        frames.row_mut(f).copy_from_slice(&r.f32s(n_reals, "frame reals")?);
    }
    r.finish()?;
    Ok(FrameSet { bits, frames })
}

pub fn save_dataset(set: &FrameSet, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(set)).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_dataset(path: &Path) -> Result<FrameSet> {
    let buf = std::fs::read(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use aecomm::rng::{random_bits, rng_from_seed};
    use rand::Rng;

    fn sample(n: usize, n_bits: usize, n_reals: usize) -> FrameSet {
        let mut rng = rng_from_seed(3);
        let bits = random_bits(n, n_bits, &mut rng);
        let reals = (0..n * n_reals)
            .map(|_| rng.random_range(-2.0f32..2.0) as f64)
            .collect();
        FrameSet {
            bits,
            frames: Tensor2::from_vec(n, n_reals, reals).unwrap(),
        }
    }

    #[test]
    fn round_trip_is_exact_for_f32_values() {
        for (n, nb, nr) in [(5, 24, 30), (3, 3, 2), (0, 24, 30), (2, 16, 0)] {
            let set = sample(n, nb, nr);
            let bytes = to_bytes(&set);
            assert_eq!(bytes.len(), 22 + n * (nb.div_ceil(8) + 4 * nr));
            let back = from_bytes(&bytes).unwrap();
            assert_eq!(back, set);
            assert_eq!(to_bytes(&back), bytes);
        }
    }

    #[test]
    fn bits_pack_most_significant_first() {
        let set = FrameSet {
            bits: Tensor2::from_vec(1, 10, vec![1., 0., 0., 0., 0., 0., 0., 1., 1., 1.]).unwrap(),
            frames: Tensor2::zeros(1, 0),
        };
        assert_eq!(&to_bytes(&set)[22..], &[0b1000_0001, 0b1100_0000]);
    }

    #[test]
    fn damaged_files_are_rejected() {
        let bytes = to_bytes(&sample(4, 24, 30));
        let mut bad = bytes.clone();
        bad[3] = b'M';
        assert!(matches!(from_bytes(&bad), Err(FormatError::BadMagic { offset: 0, .. })));
        assert!(matches!(
            from_bytes(&bytes[..bytes.len() - 3]),
            Err(FormatError::Truncated { .. })
        ));
        let mut huge = bytes.clone();
        huge[6..14].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(
            from_bytes(&huge),
            Err(FormatError::Truncated { offset: 6, .. })
        ));
    }
}
