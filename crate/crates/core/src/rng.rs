//! Counter-based random streams.
//!
//! A stream is keyed by `(seed, replicate, purpose)`; ChaCha's 64-bit stream
//! id carries `(replicate, purpose)`, so replicates can be generated in any
//! order or in parallel and still produce identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// What a random stream is used for. Distinct purposes never share numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Design = 1,
    Latent = 2,
    Noise = 3,
    Mcmc = 4,
    TestPoints = 5,
    Subgrid = 6,
    Synthetic = 7,
}

pub fn stream(seed: u64, replicate: u64, purpose: Purpose) -> ChaCha20Rng {
    assert!(replicate < (1 << 56), "replicate id out of range");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream((replicate << 8) | purpose as u64);
    rng
}
