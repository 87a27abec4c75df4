//! Deterministic seed streams for rollout sampling.
//!
//! Every random draw in a run is addressed by `(run_seed, step, draw_index)`:
//! a SplitMix64 mix of `(run_seed, step)` keys a ChaCha8 stream, and
//! `draw_index` is the position within that stream. Runs with distinct seeds
//! (or distinct steps) therefore never share state and can execute in
//! parallel, and a fixed seed reproduces the exact same batches on any
//! platform.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream of per-step RNGs for one training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    run_seed: u64,
}

impl SeedStream {
    pub fn new(run_seed: u64) -> Self {
        Self { run_seed }
    }

    pub fn run_seed(&self) -> u64 {
        self.run_seed
    }

    /// RNG for one training step. Draw order within the step is the
    /// `draw_index` of the addressing scheme.
    pub fn step_rng(&self, step: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix(self.run_seed, step))
    }
}

/// SplitMix64 finalizer over the (seed, step) pair.
///
/// The step advances the state by odd multiples of the golden-ratio gamma so
/// consecutive steps land on well-separated points of the SplitMix64 orbit.
fn mix(run_seed: u64, step: u64) -> u64 {
    let mut z = run_seed.wrapping_add(step.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
