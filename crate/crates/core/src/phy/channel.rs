use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{MimoChannelModel, TimeFrame};
use crate::error::{Error, Result};

/// Receiver impairments: AWGN at a given SNR plus an optional constant phase
/// offset and a linear phase ramp (carrier frequency offset).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    /// SNR against the measured average signal power; `+inf` disables noise.
    pub snr_db: f64,
    pub phase_offset_deg: f64,
    /// Carrier frequency offset in cycles per sample. `1e-4` stands for 30 Hz
    /// at an assumed 300 kHz sample rate.
    pub freq_offset_norm: f64,
    pub impairments_enabled: bool,
    /// Spatial channel used when the link has more than one antenna.
    pub mimo: MimoChannelModel,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            snr_db: 10.0,
            phase_offset_deg: 10.0,
            freq_offset_norm: 1e-4,
            impairments_enabled: false,
            mimo: MimoChannelModel::default(),
        }
    }
}

impl ChannelParams {
    pub fn awgn(snr_db: f64) -> Self {
        Self {
            snr_db,
            ..Self::default()
        }
    }

    pub fn impaired(snr_db: f64) -> Self {
        Self {
            snr_db,
            impairments_enabled: true,
            ..Self::default()
        }
    }

    pub fn noiseless() -> Self {
        Self::awgn(f64::INFINITY)
    }

    pub fn with_snr(self, snr_db: f64) -> Self {
        Self { snr_db, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::Config(format!(
                "snr_db must be finite or +inf, got {}",
                self.snr_db
            )));
        }
        if !(0.0..0.5).contains(&self.freq_offset_norm) {
            return Err(Error::Config(format!(
                "freq_offset_norm {} outside [0, 0.5)",
                self.freq_offset_norm
            )));
        }
        if !self.phase_offset_deg.is_finite() {
            return Err(Error::Config("phase offset must be finite".into()));
        }
        Ok(())
    }

    /// Complex noise variance for a signal of the given average power.
    pub fn noise_variance(&self, signal_power: f64) -> f64 {
        if self.snr_db == f64::INFINITY {
            0.0
        } else {
            signal_power / 10f64.powf(self.snr_db / 10.0)
        }
    }
}

/// Per-sample rotation `exp(j(2 pi f m + phi))` for `m = 0..n`; all ones when
/// impairments are off.
pub fn channel_phasors(ch: &ChannelParams, n: usize) -> Vec<Complex64> {
    if !ch.impairments_enabled {
        return vec![Complex64::new(1.0, 0.0); n];
    }
    let phi = ch.phase_offset_deg * PI / 180.0;
    (0..n)
        .map(|m| Complex64::from_polar(1.0, 2.0 * PI * ch.freq_offset_norm * m as f64 + phi))
        .collect()
}

/// Rotates every sample and adds circularly symmetric Gaussian noise at the
/// configured SNR relative to the frame's measured average power.
pub fn apply_channel<R: Rng + ?Sized>(frame: &TimeFrame, ch: &ChannelParams, rng: &mut R) -> Result<TimeFrame> {
    apply_channel_with_reference(frame, ch, frame.average_power(), rng)
}

/// As [`apply_channel`] with the noise variance referenced to an explicit
/// signal power.
pub fn apply_channel_with_reference<R: Rng + ?Sized>(
    frame: &TimeFrame,
    ch: &ChannelParams,
    reference_power: f64,
    rng: &mut R,
) -> Result<TimeFrame> {
    ch.validate()?;
    let mut out = frame.clone();
    if ch.impairments_enabled {
        let rot = channel_phasors(ch, out.data().len());
        for (s, r) in out.data_mut().iter_mut().zip(&rot) {
            *s *= r;
        }
    }
    let var = ch.noise_variance(reference_power);
    if var > 0.0 {
        let sd = (var / 2.0).sqrt();
        for s in out.data_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *s += Complex64::new(sd * re, sd * im);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_frame(len: usize, rng: &mut ChaCha8Rng) -> TimeFrame {
        let data = (0..len)
            .map(|_| Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI)))
            .collect();
        TimeFrame::from_data(len, 0, 1, data).unwrap()
    }

    #[test]
    fn identity_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frame = unit_frame(15, &mut rng);
        let out = apply_channel(&frame, &ChannelParams::noiseless(), &mut rng).unwrap();
        assert_eq!(out, frame);
    }

    #[test]
    fn constant_rotation_without_frequency_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let frame = unit_frame(30, &mut rng);
        let ch = ChannelParams {
            freq_offset_norm: 0.0,
            ..ChannelParams::impaired(f64::INFINITY)
        };
        let out = apply_channel(&frame, &ch, &mut rng).unwrap();
        let rot = Complex64::from_polar(1.0, 10.0 * PI / 180.0);
        for (a, b) in out.data().iter().zip(frame.data()) {
            assert!((a - b * rot).norm() < 1e-14);
        }
    }

    #[test]
    fn frequency_offset_is_a_phase_ramp() {
        let frame = TimeFrame::from_data(4, 0, 1, vec![Complex64::new(1.0, 0.0); 4]).unwrap();
        let ch = ChannelParams {
            phase_offset_deg: 0.0,
            freq_offset_norm: 0.25,
            ..ChannelParams::impaired(f64::INFINITY)
        };
        let out = apply_channel(&frame, &ch, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let expect = [
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(0.0, -1.0),
        ];
        for (a, b) in out.data().iter().zip(expect) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn measured_snr_matches_configuration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frame = unit_frame(1_000_000, &mut rng);
        for snr in [-5.0, 10.0, 30.0] {
            let out = apply_channel(&frame, &ChannelParams::awgn(snr), &mut rng).unwrap();
            let noise: f64 = out
                .data()
                .iter()
                .zip(frame.data())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                / 1e6;
            let measured = 10.0 * (frame.average_power() / noise).log10();
            assert!((measured - snr).abs() < 0.05, "snr {snr}: measured {measured}");
        }
    }

    #[test]
    fn invalid_frequency_offset_is_rejected() {
        let frame = TimeFrame::from_data(1, 0, 1, vec![Complex64::new(1.0, 0.0)]).unwrap();
        let ch = ChannelParams {
            freq_offset_norm: 0.6,
            ..ChannelParams::default()
        };
        assert!(apply_channel(&frame, &ch, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
