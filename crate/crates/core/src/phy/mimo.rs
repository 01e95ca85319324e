use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{apply_channel_with_reference, ChannelParams, TimeFrame};
use crate::error::{check_dim, Result};
use crate::rng::rng_from_seed;

pub type CMatrix = DMatrix<Complex64>;

/// i.i.d. `CN(0, 1)` entries.
pub fn rayleigh_matrix<R: Rng + ?Sized>(n_r: usize, n_t: usize, rng: &mut R) -> CMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMatrix::from_fn(n_r, n_t, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(s * re, s * im)
    })
}

/// How the flat spatial channel matrix is chosen for each frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MimoChannelModel {
    /// Fresh Rayleigh draw for every frame.
    RayleighPerFrame,
    /// One Rayleigh draw from `seed`, held for the whole link lifetime.
    BlockRayleigh {
        seed: u64,
    },
    Identity,
}

impl Default for MimoChannelModel {
    fn default() -> Self {
        MimoChannelModel::BlockRayleigh { seed: 0 }
    }
}

impl MimoChannelModel {
    /// Channel matrix for the next frame; only `RayleighPerFrame` consumes `rng`.
    pub fn matrix<R: Rng + ?Sized>(&self, n_r: usize, n_t: usize, rng: &mut R) -> CMatrix {
        match self {
            MimoChannelModel::RayleighPerFrame => rayleigh_matrix(n_r, n_t, rng),
            MimoChannelModel::BlockRayleigh { seed } => rayleigh_matrix(n_r, n_t, &mut rng_from_seed(*seed)),
            MimoChannelModel::Identity => CMatrix::identity(n_r, n_t),
        }
    }
}

/// Receive antenna `i` gets `sum_t H[i, t] * frame_t`, then each receive chain
/// sees the shared phase/frequency offsets and its own noise. The noise
/// variance is referenced to the mean per-antenna transmit power so a weak
/// channel realization lowers the effective SNR.
pub fn mimo_channel_apply<R: Rng + ?Sized>(
    frames: &[TimeFrame],
    h: &CMatrix,
    ch: &ChannelParams,
    rng: &mut R,
) -> Result<Vec<TimeFrame>> {
    check_dim("mimo transmit antennas", h.ncols(), frames.len())?;
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    let len = first.data().len();
    for f in frames {
        check_dim("mimo frame length", len, f.data().len())?;
    }
    let tx_power = frames.iter().map(TimeFrame::average_power).sum::<f64>() / frames.len() as f64;
    let mut out = Vec::with_capacity(h.nrows());
    for i in 0..h.nrows() {
        let mixed: Vec<Complex64> = (0..len)
            .map(|m| frames.iter().enumerate().map(|(t, f)| h[(i, t)] * f.data()[m]).sum())
            .collect();
        let mixed = TimeFrame::from_data(first.n_fft(), first.n_cp(), first.n_ch(), mixed)?;
        out.push(apply_channel_with_reference(&mixed, ch, tx_power, rng)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frames(rng: &mut ChaCha8Rng) -> Vec<TimeFrame> {
        (0..2)
            .map(|_| {
                let d = (0..5)
                    .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                    .collect();
                TimeFrame::from_data(4, 1, 1, d).unwrap()
            })
            .collect()
    }

    #[test]
    fn identity_passthrough_and_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = frames(&mut rng);
        let ch = ChannelParams::noiseless();
        let out = mimo_channel_apply(&f, &CMatrix::identity(2, 2), &ch, &mut rng).unwrap();
        assert_eq!(out, f);
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        let swap = CMatrix::from_row_slice(2, 2, &[zero, one, one, zero]);
        let out = mimo_channel_apply(&f, &swap, &ch, &mut rng).unwrap();
        assert_eq!(out[0], f[1]);
        assert_eq!(out[1], f[0]);
    }

    #[test]
    fn random_mixing_matches_hand_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = frames(&mut rng);
        let h = rayleigh_matrix(2, 2, &mut rng);
        let out = mimo_channel_apply(&f, &h, &ChannelParams::noiseless(), &mut rng).unwrap();
        for i in 0..2 {
            for m in 0..5 {
                let expect = h[(i, 0)] * f[0].data()[m] + h[(i, 1)] * f[1].data()[m];
                assert!((out[i].data()[m] - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = frames(&mut rng);
        assert!(mimo_channel_apply(&f, &CMatrix::identity(3, 3), &ChannelParams::noiseless(), &mut rng).is_err());
    }

    #[test]
    fn block_model_is_stable_and_per_frame_is_not() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let block = MimoChannelModel::BlockRayleigh { seed: 9 };
        assert_eq!(block.matrix(2, 2, &mut rng), block.matrix(2, 2, &mut rng));
        let per = MimoChannelModel::RayleighPerFrame;
        assert_ne!(per.matrix(2, 2, &mut rng), per.matrix(2, 2, &mut rng));
    }
}
