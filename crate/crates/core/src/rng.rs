//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by a run
//! seed plus a stream index. ChaCha is counter based, so shard `k` of a job
//! produces the same values no matter which thread runs it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Generator for stream `stream` of run `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// Stream ids.
pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_SHUFFLE: u64 = 2;
pub(crate) const STREAM_SPLIT: u64 = 3;
pub(crate) const STREAM_MODEL_1: u64 = 10;
pub(crate) const STREAM_MODEL_0: u64 = 11;
pub(crate) const STREAM_MC: u64 = 20;
