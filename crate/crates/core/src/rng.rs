//! Every random draw in the crate (mask columns, noise, weights, phantom
//! texture) comes from ChaCha8 seeded with a `u64` through `seed_from_u64`.
//! Changing the generator changes every seeded artifact.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Prng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Prng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream for a named sub-component.
pub fn derived(seed: u64, stream: u64) -> Prng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
