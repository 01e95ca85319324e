//! Seeded random streams.
//!
//! Every random draw flows from an explicit master seed. Frame chunks get
//! their own generator seeded with `master + index` (wrapping), so results
//! never depend on scheduling. Work that is itself split into chunks (Monte
//! Carlo blocks, sweep points, frontier rows) takes its master from
//! [`split_seed`] instead, because neighbouring `master + index` seeds would
//! share most of their chunk seeds.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::Tensor2;

pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

pub fn derive_seed(master: u64, index: u64) -> u64 {
    master.wrapping_add(index)
}

pub fn derived_rng(master: u64, index: u64) -> SimRng {
    rng_from_seed(derive_seed(master, index))
}

/// First word of ChaCha stream `stream` under `master`.
pub fn split_seed(master: u64, stream: u64) -> u64 {
    let mut rng = rng_from_seed(master);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Uniform i.i.d. bits as a `rows × cols` tensor of 0.0/1.0.
pub fn random_bits<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor2 {
    let data = (0..rows * cols)
        .map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 })
        .collect();
    Tensor2::from_vec(rows, cols, data).expect("sized above")
}

/// Hard decisions at threshold 0.5.
pub fn hard_bits(probs: &[f64]) -> Vec<f64> {
    probs.iter().map(|p| if *p > 0.5 { 1.0 } else { 0.0 }).collect()
}

pub fn count_bit_errors(a: &[f64], b: &[f64]) -> u64 {
    a.iter().zip(b).filter(|(x, y)| (**x > 0.5) != (**y > 0.5)).count() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_seeds_are_stable_and_far_apart() {
        assert_eq!(split_seed(7, 3), split_seed(7, 3));
        let seeds: Vec<u64> = (0..64).flat_map(|m| (0..64).map(move |j| split_seed(m, j))).collect();
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        let min_gap = sorted.windows(2).map(|w| w[1] - w[0]).min().unwrap();
        assert!(min_gap > 1 << 32, "{min_gap}");
    }

    #[test]
    fn bits_are_balanced() {
        let b = random_bits(1000, 10, &mut rng_from_seed(1));
        let ones = b.data().iter().filter(|v| **v == 1.0).count();
        assert!((4700..5300).contains(&ones));
        assert_eq!(count_bit_errors(&hard_bits(&[0.2, 0.7]), &[0.0, 0.0]), 1);
    }
}
