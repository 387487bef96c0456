//! Seeded random streams.
//!
//! Every generator in the crate draws from ChaCha8 keyed by a 64-bit seed,
//! with an independent 64-bit stream id per consumer (site index, donor index,
//! ...). Adding a consumer never perturbs the numbers another consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids reserved for crate-internal consumers. Site and partner streams
/// use their index directly, so these sit far above any realistic index.
pub(crate) const STREAM_INIT: u64 = 1 << 40;
pub(crate) const STREAM_SHUFFLE: u64 = (1 << 40) + 1;
pub(crate) const STREAM_VALIDATION: u64 = (1 << 40) + 2;
pub(crate) const STREAM_JITTER: u64 = (1 << 40) + 3;

pub fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}
