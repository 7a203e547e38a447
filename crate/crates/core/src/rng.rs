//! Named random substreams derived from one run seed.
//!
//! Each consumer draws from its own ChaCha stream, so adding draws in one
//! consumer never shifts the values another consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const WORKLOAD: &str = "workload";
pub const FAULTS: &str = "faults";
pub const PLACEMENT: &str = "placement";

#[derive(Debug, Clone, Copy)]
pub struct RngStreams {
    seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, name: &str) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(name.as_bytes()));
        rng
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
