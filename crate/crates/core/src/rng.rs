//! Counter-addressed random streams.
//!
//! Every replication owns one ChaCha8 stream selected by `(seed, run)`, and
//! each round starts at a fixed word offset inside that stream, so the
//! draws for `(seed, run, round)` never depend on how many draws earlier
//! rounds consumed or on which thread ran the replication.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 32-bit words reserved for each round (256 `u64` draws).
pub const WORDS_PER_ROUND: u128 = 512;

#[derive(Clone, Debug)]
pub struct StreamRng {
    inner: ChaCha8Rng,
}

impl StreamRng {
    pub fn new(seed: u64, stream: u64) -> StreamRng {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        StreamRng { inner }
    }

    /// Positions the stream at the start of `round`'s block.
    pub fn seek_round(&mut self, round: u64) {
        self.inner.set_word_pos(round as u128 * WORDS_PER_ROUND);
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
