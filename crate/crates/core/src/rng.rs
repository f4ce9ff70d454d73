//! Seeded random streams. Every stochastic component takes an explicit rng so
//! runs are reproducible from a single master seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for `(master_seed, gop_index, frame_index)`.
pub fn frame_stream(master_seed: u64, gop_index: u64, frame_index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream((gop_index << 20) ^ frame_index);
    rng
}

/// Stream derived from a master seed and an arbitrary label, used for
/// channel draws and training batches.
pub fn labeled_stream(master_seed: u64, label: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(label.wrapping_add(1 << 62));
    rng
}

pub fn normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}
