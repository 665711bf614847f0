//! Named, reproducible random streams.
//!
//! Every consumer of randomness derives its own ChaCha stream from
//! `(seed, name)` so that adding a draw in one subsystem never shifts the
//! sequence seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64, name: &str) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((name.len() as u64).to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

/// Serializable position of a stream, so a checkpoint can resume it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StreamState {
    pub seed: u64,
    pub word_pos: u128,
}

pub fn capture(seed: u64, rng: &StreamRng) -> StreamState {
    StreamState { seed, word_pos: rng.get_word_pos() }
}

pub fn restore(state: StreamState, name: &str) -> StreamRng {
    let mut rng = stream(state.seed, name);
    rng.set_word_pos(state.word_pos);
    rng
}
