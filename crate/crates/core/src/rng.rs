//! Counter-based random streams.
//!
//! Every consumer of randomness derives a ChaCha key from the run seed and a
//! component label, and each path (or episode) gets its own ChaCha stream
//! selected by index. Draws for path `p` therefore never depend on how many
//! workers generated the other paths.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// A derived key: run seed + component label + integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(seed: u64, label: &str) -> Self {
        let mut s = seed ^ fnv1a(label.as_bytes());
        StreamKey(splitmix64(&mut s))
    }

    /// Refines the key with an integer coordinate (restart, epoch, ...).
    pub fn with(self, coordinate: u64) -> Self {
        let mut s = self.0 ^ coordinate.wrapping_mul(0xd6e8_feb8_6659_fd93);
        StreamKey(splitmix64(&mut s))
    }

    pub fn child(self, label: &str) -> Self {
        let mut s = self.0 ^ fnv1a(label.as_bytes());
        StreamKey(splitmix64(&mut s))
    }

    pub fn as_u64(self) -> u64 {
        self.0
    }

    /// The generator for stream `index` under this key.
    pub fn stream(self, index: u64) -> ChaCha8Rng {
        let mut s = self.0;
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(index);
        rng
    }
}
