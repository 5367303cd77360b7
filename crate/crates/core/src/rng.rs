//! Seed plumbing: one top-level seed fans out into named, independent streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A top-level run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Seed(pub u64);

impl Seed {
    /// Seed of the named sub-stream (e.g. `"ingest"`, `"inference"`).
    pub fn derive(self, name: &str) -> Seed {
        Seed(splitmix(self.0 ^ fnv1a(name.as_bytes())))
    }

    /// Seed of the `i`-th child (replicates, restarts).
    pub fn child(self, i: u64) -> Seed {
        Seed(splitmix(self.0.wrapping_add(splitmix(i.wrapping_add(0x9e37_79b9_7f4a_7c15)))))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Counter-addressed stream: draw `counter` gets its own ChaCha stream, so
    /// results do not depend on how work is scheduled across threads.
    pub fn stream(self, counter: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(counter);
        rng
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
