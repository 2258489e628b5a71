//! Seeded random streams.
//!
//! Every random draw in the toolkit comes from a ChaCha stream keyed by
//! `SHA-256(seed || label || index)`. Labels are fixed strings, so a stream
//! depends only on the run seed and the purpose it serves, never on the
//! order in which other streams were consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub const INIT: &str = "init";
pub const SHUFFLE: &str = "shuffle";
pub const AUG: &str = "aug";
pub const SPLIT: &str = "split";
pub const SYNTH: &str = "synth";
pub const KMEANS: &str = "kmeans";
pub const SUBSAMPLE: &str = "subsample";

/// Stream for `label` under `seed`.
pub fn stream(seed: u64, label: &str) -> Rng {
    substream(seed, label, 0)
}

/// Indexed child stream, e.g. one per epoch or per class.
pub fn substream(seed: u64, label: &str, index: u64) -> Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    h.update([0u8]);
    h.update(index.to_le_bytes());
    let key: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(key)
}
