use rand::Rng;

use crate::error::{check_dim, Result};
use crate::nn::Tensor2;
use crate::phy::{
    apply_channel, channel_phasors, draw_jammer, mimo_channel_apply, CMatrix, ChannelParams, IqGrid, JammerParams,
    LinkConfig, Ofdm, TimeFrame,
};
use crate::rng::rng_from_seed;

/// Independent random streams for one batch pass. Drawing them up front keeps
/// the channel noise identical whether or not a jammer or smoothing noise is
/// active, which makes the degenerate-term equivalences exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PassSeeds {
    pub channel: u64,
    pub jammer: u64,
    pub dropout: u64,
    pub smoothing: u64,
}

impl PassSeeds {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            channel: rng.random(),
            jammer: rng.random(),
            dropout: rng.random(),
            smoothing: rng.random(),
        }
    }
}

/// One frame's trip from normalized transmit grid to receive grid, with what
/// the adjoint needs.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub tx: IqGrid,
    pub rx: IqGrid,
    rms: f64,
    h: Option<CMatrix>,
}

/// Non-learned part of the link: power normalization, OFDM framing, channel,
/// receiver FFT and jammer (SISO), or the flat spatial channel (MIMO).
#[derive(Debug, Clone)]
pub struct LinkPath {
    cfg: LinkConfig,
    ofdm: Ofdm,
}

impl LinkPath {
    pub fn new(cfg: &LinkConfig) -> Self {
        Self {
            cfg: *cfg,
            ofdm: Ofdm::for_link(cfg),
        }
    }

    /// `(rows, cols)` of the transmit grid; MIMO uses one column with one
    /// row per antenna.
    pub fn tx_shape(&self) -> (usize, usize) {
        if self.cfg.is_mimo() {
            (self.cfg.n_t, 1)
        } else {
            (self.cfg.n_fft, self.cfg.n_ch)
        }
    }

    pub fn rx_shape(&self) -> (usize, usize) {
        if self.cfg.is_mimo() {
            (self.cfg.n_r, 1)
        } else {
            (self.cfg.n_fft, self.cfg.n_ch)
        }
    }

    /// Scales a real vector of I/Q pairs to unit average complex power.
    /// Returns the scaled vector and the RMS that was divided out.
    pub fn normalize(raw: &[f64]) -> (Vec<f64>, f64) {
        let m = (raw.len() / 2).max(1) as f64;
        let rms = (raw.iter().map(|v| v * v).sum::<f64>() / m).sqrt().max(1e-12);
        (raw.iter().map(|v| v / rms).collect(), rms)
    }

    pub fn propagate<R: Rng + ?Sized>(
        &self,
        raw: &[f64],
        ch: &ChannelParams,
        jam: Option<&JammerParams>,
        ch_rng: &mut R,
        jam_rng: &mut R,
    ) -> Result<FrameRecord> {
        let (rows, cols) = self.tx_shape();
        check_dim("encoder output", 2 * rows * cols, raw.len())?;
        let (scaled, rms) = Self::normalize(raw);
        let tx = IqGrid::from_reals(rows, cols, &scaled)?;
        let (mut rx, h) = if self.cfg.is_mimo() {
            let frames = tx
                .data()
                .iter()
                .map(|x| TimeFrame::from_data(1, 0, 1, vec![*x]))
                .collect::<Result<Vec<_>>>()?;
            let h = ch.mimo.matrix(self.cfg.n_r, self.cfg.n_t, ch_rng);
            let out = mimo_channel_apply(&frames, &h, ch, ch_rng)?;
            let data = out.iter().map(|f| f.data()[0]).collect();
            (IqGrid::from_data(self.cfg.n_r, 1, data)?, Some(h))
        } else {
            let frame = self.ofdm.modulate(&tx)?;
            let frame = apply_channel(&frame, ch, ch_rng)?;
            (self.ofdm.demodulate(&frame)?, None)
        };
        if let Some(j) = jam.filter(|j| j.enabled) {
            let per_cu = tx.energy() / tx.n_ch() as f64;
            draw_jammer(rx.n_fft(), rx.n_ch(), per_cu, j, jam_rng)?.apply(&mut rx);
        }
        Ok(FrameRecord { tx, rx, rms, h })
    }

    /// Runs every row of `raw` through the link. Channel and jammer streams
    /// come from `seeds`; rows are processed in order.
    pub fn propagate_batch(
        &self,
        raw: &Tensor2,
        ch: &ChannelParams,
        jam: Option<&JammerParams>,
        seeds: &PassSeeds,
    ) -> Result<(Vec<FrameRecord>, Tensor2)> {
        let mut ch_rng = rng_from_seed(seeds.channel);
        let mut jam_rng = rng_from_seed(seeds.jammer);
        let (rows, cols) = self.rx_shape();
        let mut rx = Tensor2::zeros(raw.rows(), 2 * rows * cols);
        let mut records = Vec::with_capacity(raw.rows());
        for r in 0..raw.rows() {
            let rec = self.propagate(raw.row(r), ch, jam, &mut ch_rng, &mut jam_rng)?;
            rx.row_mut(r).copy_from_slice(&rec.rx.to_reals());
            records.push(rec);
        }
        Ok((records, rx))
    }

    /// Gradient with respect to the raw encoder output given the gradient at
    /// the receive grid. Noise and jammer terms are constants.
    pub fn backprop(&self, rec: &FrameRecord, ch: &ChannelParams, grad_rx: &[f64]) -> Result<Vec<f64>> {
        let (rows, cols) = self.rx_shape();
        check_dim("receive gradient", 2 * rows * cols, grad_rx.len())?;
        let g = IqGrid::from_reals(rows, cols, grad_rx)?;
        let grad_tx = match &rec.h {
            Some(h) => {
                let rot = channel_phasors(ch, 1)[0].conj();
                let gy = nalgebra::DVector::from_iterator(rows, g.data().iter().map(|v| v * rot));
                let gx = h.adjoint() * gy;
                IqGrid::from_data(self.cfg.n_t, 1, gx.iter().copied().collect())?
            }
            None => self.ofdm_adjoint(&g, ch)?,
        };
        let gv = grad_tx.to_reals();
        // d(u / s) with s = sqrt(sum u^2 / m)
        let m = (gv.len() / 2) as f64;
        let v = rec.tx.to_reals();
        let dot: f64 = v.iter().zip(&gv).map(|(a, b)| a * b).sum();
        Ok(gv.iter().zip(&v).map(|(g, v)| (g - v * dot / m) / rec.rms).collect())
    }

    fn ofdm_adjoint(&self, g: &IqGrid, ch: &ChannelParams) -> Result<IqGrid> {
        let n_fft = self.cfg.n_fft;
        let n_cp = self.cfg.n_cp;
        let len = n_fft + n_cp;
        let rot = channel_phasors(ch, len * self.cfg.n_ch);
        let mut out = IqGrid::zeros(n_fft, self.cfg.n_ch);
        for cu in 0..self.cfg.n_ch {
            let mut col = g.channel_use(cu);
            self.ofdm.ifft(&mut col);
            for (i, v) in col.iter_mut().enumerate() {
                *v *= rot[cu * len + n_cp + i].conj();
            }
            self.ofdm.fft(&mut col);
            out.set_channel_use(cu, &col);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phy::MimoChannelModel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> LinkConfig {
        LinkConfig {
            n_fft: 4,
            n_cp: 1,
            n_ch: 2,
            hidden: 8,
            ..LinkConfig::default()
        }
    }

    #[test]
    fn normalization_gives_unit_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let raw: Vec<f64> = (0..16).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (v, _) = LinkPath::normalize(&raw);
        let p: f64 = v.iter().map(|x| x * x).sum::<f64>() / 8.0;
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_path_is_identity_on_the_grid() {
        let path = LinkPath::new(&cfg());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let raw: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut a = ChaCha8Rng::seed_from_u64(0);
        let mut b = ChaCha8Rng::seed_from_u64(0);
        let rec = path
            .propagate(&raw, &ChannelParams::noiseless(), None, &mut a, &mut b)
            .unwrap();
        for (x, y) in rec.tx.data().iter().zip(rec.rx.data()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    // Directional derivative of a random linear functional of the receive
    // grid, checked against central differences through the whole path.
    fn adjoint_check(cfg: LinkConfig, ch: ChannelParams) {
        let path = LinkPath::new(&cfg);
        let (r, c) = path.tx_shape();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let raw: Vec<f64> = (0..2 * r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (rr, rc) = path.rx_shape();
        let w: Vec<f64> = (0..2 * rr * rc).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |x: &[f64]| {
            let mut a = ChaCha8Rng::seed_from_u64(9);
            let mut b = ChaCha8Rng::seed_from_u64(9);
            let rec = path.propagate(x, &ch, None, &mut a, &mut b).unwrap();
            rec.rx.to_reals().iter().zip(&w).map(|(p, q)| p * q).sum::<f64>()
        };
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let rec = path.propagate(&raw, &ch, None, &mut a, &mut b).unwrap();
        let grad = path.backprop(&rec, &ch, &w).unwrap();
        for i in 0..raw.len() {
            let mut p = raw.clone();
            let mut m = raw.clone();
            p[i] += 1e-6;
            m[i] -= 1e-6;
            let fd = (f(&p) - f(&m)) / 2e-6;
            assert!((fd - grad[i]).abs() < 1e-6, "entry {i}: fd {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn siso_adjoint_matches_finite_differences() {
        let ch = ChannelParams {
            freq_offset_norm: 0.01,
            ..ChannelParams::impaired(f64::INFINITY)
        };
        adjoint_check(cfg(), ch);
    }

    #[test]
    fn mimo_adjoint_matches_finite_differences() {
        let cfg = LinkConfig {
            n_t: 2,
            n_r: 2,
            ..cfg()
        };
        let ch = ChannelParams {
            mimo: MimoChannelModel::BlockRayleigh { seed: 4 },
            ..ChannelParams::impaired(f64::INFINITY)
        };
        adjoint_check(cfg, ch);
    }

    #[test]
    fn jammer_is_referenced_to_transmit_energy() {
        let path = LinkPath::new(&cfg());
        let raw = vec![1.0; 16];
        let jam = JammerParams::tone(0.0, 1);
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(6);
        let rec = path
            .propagate(&raw, &ChannelParams::noiseless(), Some(&jam), &mut a, &mut b)
            .unwrap();
        let diff: f64 = rec
            .rx
            .data()
            .iter()
            .zip(rec.tx.data())
            .map(|(x, y)| (x - y).norm_sqr())
            .sum();
        assert!((diff - rec.tx.energy()).abs() < 1e-9);
    }
}
