//! Shared fixtures for the benchmarks.

use bugsize_core::simulate::{generate_campaign, generator_rng};
use bugsize_core::{ModelConfig, Protocol, TestCampaign};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Default simulation campaign (30 missions x 8 phases, 100 true bugs).
pub fn simulated_campaign(seed: u64) -> TestCampaign {
    generate_campaign(
        &ModelConfig::default(),
        &Protocol::default(),
        &mut generator_rng(seed),
    )
    .expect("default protocol is valid")
    .0
}

/// `chains` iid uniform sequences of length `len`.
pub fn uniform_chains(chains: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..chains)
        .map(|_| (0..len).map(|_| rng.random::<f64>()).collect())
        .collect()
}
