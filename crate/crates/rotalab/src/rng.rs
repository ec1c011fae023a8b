//! Seeded random streams.
//!
//! Every stochastic operation in this crate takes an explicit stream. The
//! generator is ChaCha12, a counter-based stream cipher RNG, so any run
//! replays bit-identically from its seed regardless of platform or of what
//! sibling runs are doing.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// The crate-wide random stream type (ChaCha12, counter based).
pub type RngStream = ChaCha12Rng;

/// Opens a stream from a bare 64-bit seed.
pub fn stream_from_seed(seed: u64) -> RngStream {
    RngStream::seed_from_u64(seed)
}

/// Derives a sub-seed from `(master, tag, index)` via SHA-256.
///
/// The hash is stable across platforms and library versions, so adding new
/// tags or indices never perturbs the streams of existing ones.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update([0xff]);
    hasher.update(tag.as_bytes());
    hasher.update([0xfe]);
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Opens the stream named by `(master, tag, index)`.
pub fn substream(master: u64, tag: &str, index: u64) -> RngStream {
    stream_from_seed(derive_seed(master, tag, index))
}
