//! Multi-agent PPO over Gaussian bid policies, written against plain `f64`
//! vectors.

pub mod mlp;
pub mod policy;
pub mod ppo;

pub use mlp::{Mlp, ParamBlock};
pub use policy::{
    mean_action, policy_forward, sample_action, ActionMap, ObsNormalizer, PolicyCheckpoint,
    PolicyOutput, PolicySet, SampledAction, Sharing, Squash,
};
pub use ppo::{compute_gae, ppo_update, LossStats, PpoConfig, Transition};
