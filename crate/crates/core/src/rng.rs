//! Hierarchical, counter-based random streams.
//!
//! A stream is addressed by a 64-bit seed and a path of integers
//! (replica / trajectory / step, or any other nesting the caller needs).
//! The address is hashed into a ChaCha key; ChaCha itself is a counter-mode
//! generator, so every address owns an independent, reproducible sequence
//! regardless of the order in which streams are instantiated or the number
//! of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Generator handed out by [`RngStream::generator`].
pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    seed: u64,
    path: Vec<u64>,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            path: Vec::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    /// Substream at `self.path ++ [index]`.
    pub fn child(&self, index: u64) -> Self {
        let mut path = Vec::with_capacity(self.path.len() + 1);
        path.extend_from_slice(&self.path);
        path.push(index);
        Self {
            seed: self.seed,
            path,
        }
    }

    /// Substream addressed by a short label, for separating unrelated uses
    /// of one seed (e.g. "negative controls" vs "main battery").
    pub fn named(&self, label: &str) -> Self {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for b in label.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        self.child(h)
    }

    fn key(&self) -> [u8; 32] {
        let mut state = splitmix64(self.seed ^ 0x005E_ED0F_C0A1_F10A_u64);
        for (depth, &p) in self.path.iter().enumerate() {
            let salt = GOLDEN.wrapping_mul(depth as u64 + 1);
            state = splitmix64(state ^ splitmix64(p ^ salt));
        }
        state = splitmix64(state ^ self.path.len() as u64);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        key
    }

    pub fn generator(&self) -> StreamRng {
        ChaCha8Rng::from_seed(self.key())
    }
}
