//! Counter-based noise streams.
//!
//! Every random draw is addressed by `(seed, stream, index)`, so any sample,
//! scan or image can be regenerated on its own, in any order, with the same
//! values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    LidarRange = 1,
    Gyro = 2,
    Accel = 3,
    GyroBias = 4,
    AccelBias = 5,
    Pixel = 6,
}

/// Words reserved per index; far more than any single scan or image row uses.
const WORDS_PER_INDEX: u128 = 1 << 32;

pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng.set_word_pos(index as u128 * WORDS_PER_INDEX);
    rng
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}
