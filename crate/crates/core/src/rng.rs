//! The single seeded generator type every stochastic draw goes through.

use rand::SeedableRng;

pub type RunRng = rand_chacha::ChaCha8Rng;

pub fn run_rng(seed: u64) -> RunRng {
    RunRng::seed_from_u64(seed)
}
