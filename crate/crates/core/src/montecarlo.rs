//! Seeded, reproducible episode simulation.
//!
//! Every episode owns two independent ChaCha streams derived from
//! `(master_seed, episode_index)`: one for the channel draws, one for policy
//! randomness. Estimates aggregate exact integer sums of the per-episode
//! slot counts, so the result is bit-identical for a fixed master seed no
//! matter how many threads rayon runs the episodes on or in what order they
//! finish.

use crate::model::{step_ps, ChannelState, LinkConfig, RealState};
use crate::policies::Policy;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

/// Hard per-episode slot cap; any proper policy on these chains absorbs in
/// expected tens of slots, so hitting this means the policy cannot finish.
pub const SLOT_CAP: u64 = 10_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("episode exceeded {SLOT_CAP} slots; the policy cannot reach absorption")]
    SlotCapExceeded,
    #[error("dynamics rejected the policy's action: {0}")]
    Dynamics(#[from] crate::model::ModelError),
    #[error("episode {episode} failed: {source}")]
    Episode { episode: u64, source: Box<SimError> },
}

/// splitmix64 finalizer; decorrelates consecutive episode indices.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Per-episode randomness: independent channel and policy streams.
#[derive(Debug, Clone)]
pub struct EpisodeRng {
    channel: ChaCha8Rng,
    policy: ChaCha8Rng,
}

impl EpisodeRng {
    pub fn from_master(master_seed: u64, episode_index: u64) -> Self {
        let seed = mix64(master_seed ^ mix64(episode_index));
        let base = ChaCha8Rng::seed_from_u64(seed);
        let mut channel = base.clone();
        channel.set_stream(1);
        let mut policy = base;
        policy.set_stream(2);
        EpisodeRng { channel, policy }
    }
}

/// Runs one episode from `start` until decoding succeeds and returns the
/// number of slots taken.
pub fn run_episode_from(
    start: RealState,
    policy: &dyn Policy,
    cfg: &LinkConfig,
    rng: &mut EpisodeRng,
) -> Result<u64, SimError> {
    let mut state = start;
    let mut slot: u64 = 0;
    while !cfg.is_absorbing_real(state) {
        if slot >= SLOT_CAP {
            return Err(SimError::SlotCapExceeded);
        }
        let channel = ChannelState::draw(&mut rng.channel, cfg.lambda());
        let rho = policy.decide(state, slot, &mut rng.policy);
        state = step_ps(state, rho, channel, cfg)?;
        slot += 1;
    }
    Ok(slot)
}

/// Episode from the canonical empty start `(0, 0)`.
pub fn run_episode(
    policy: &dyn Policy,
    cfg: &LinkConfig,
    rng: &mut EpisodeRng,
) -> Result<u64, SimError> {
    run_episode_from(RealState::ORIGIN, policy, cfg, rng)
}

/// Sample-mean estimate with its statistical qualification.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub mean: f64,
    pub stderr: f64,
    pub ci95: (f64, f64),
    pub n_episodes: u64,
    pub master_seed: u64,
    pub policy_spec: String,
}

/// Monte Carlo estimate of the expected number of re-transmissions from
/// `start` under `policy`. Episodes run in parallel; the aggregation is
/// order-insensitive by construction (exact integer sums).
pub fn estimate_from(
    start: RealState,
    policy: &dyn Policy,
    cfg: &LinkConfig,
    n_episodes: u64,
    master_seed: u64,
) -> Result<EstimateResult, SimError> {
    assert!(n_episodes >= 1, "need at least one episode");
    let (sum, sum_sq) = (0..n_episodes as usize)
        .into_par_iter()
        .with_min_len(512)
        .map(|i| {
            let i = i as u64;
            let mut rng = EpisodeRng::from_master(master_seed, i);
            match run_episode_from(start, policy, cfg, &mut rng) {
                Ok(count) => Ok((u128::from(count), u128::from(count) * u128::from(count))),
                Err(e) => Err(SimError::Episode {
                    episode: i,
                    source: Box::new(e),
                }),
            }
        })
        .try_reduce(|| (0u128, 0u128), |a, b| Ok((a.0 + b.0, a.1 + b.1)))?;

    let n = n_episodes as f64;
    let mean = sum as f64 / n;
    let stderr = if n_episodes > 1 {
        let var = ((sum_sq as f64) - n * mean * mean) / (n - 1.0);
        (var.max(0.0) / n).sqrt()
    } else {
        0.0
    };
    Ok(EstimateResult {
        mean,
        stderr,
        ci95: (mean - 1.96 * stderr, mean + 1.96 * stderr),
        n_episodes,
        master_seed,
        policy_spec: policy.spec_string(),
    })
}

/// [`estimate_from`] starting at `(0, 0)`.
pub fn estimate(
    policy: &dyn Policy,
    cfg: &LinkConfig,
    n_episodes: u64,
    master_seed: u64,
) -> Result<EstimateResult, SimError> {
    estimate_from(RealState::ORIGIN, policy, cfg, n_episodes, master_seed)
}
