//! Seeded counter-based random streams.
//!
//! Every replication gets its own ChaCha20 stream, selected by the stream word
//! of the cipher rather than by perturbing the seed, so streams for different
//! replications never overlap regardless of how many draws each consumes.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type StreamRng = ChaCha20Rng;

/// What a stream is used for inside one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Field = 0,
    Init = 1,
    /// Fields drawn at the estimate to measure score variability.
    Sandwich = 2,
}

pub fn substream(seed: u64, replication: u64, purpose: Purpose) -> StreamRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream((replication << 2) | purpose as u64);
    rng
}
