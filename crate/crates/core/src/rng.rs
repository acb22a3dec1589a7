//! Keyed random streams.
//!
//! Every stochastic draw in a run comes from a stream identified by
//! `(global_seed, run_id, episode, slot, agent, purpose)`. Two runs with the
//! same keys see the same numbers no matter how work is scheduled across
//! threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Physics = 1,
    Detection = 2,
    Policy = 3,
    Init = 4,
    Shuffle = 5,
    Types = 6,
    Economy = 7,
    MonteCarlo = 8,
}

/// Wildcard for keys that are not per-agent.
pub const ALL_AGENTS: u64 = u64::MAX;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold an ordered list of key components into one 64-bit seed.
pub fn mix(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5EED_0FC0_FFEE_u64, |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Stream factory for one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    pub global_seed: u64,
    pub run_id: u64,
}

impl Streams {
    pub fn new(global_seed: u64, run_id: u64) -> Self {
        Self {
            global_seed,
            run_id,
        }
    }

    pub fn rng(&self, episode: u64, slot: u64, agent: u64, purpose: Purpose) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix(&[
            self.global_seed,
            self.run_id,
            episode,
            slot,
            agent,
            purpose as u64,
        ]))
    }
}

/// A standalone stream, for code paths that are not part of an episode.
pub fn stream(seed: u64, purpose: Purpose) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(&[seed, purpose as u64]))
}
