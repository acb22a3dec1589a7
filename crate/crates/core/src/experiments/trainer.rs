//! PPO training runs in the grid environment and frozen-policy evaluation.

use serde::{Deserialize, Serialize};

use super::metrics::{convergence_episode, metric_truth_frac, metrics, CurvePoint, MetricsRecord};
use crate::enforcement::MechanismConfig;
use crate::error::{Error, Result};
use crate::grid::{BidAction, BidBounds, GridEnv, PhysicalParams, ProsumerConfig, SlotRecord};
use crate::learning::policy::{mean_action, sample_action, ActionMap, ObsNormalizer, PolicyCheckpoint, PolicySet};
use crate::learning::ppo::{ppo_update, PpoConfig, Transition};
use crate::rng::{Purpose, Streams, ALL_AGENTS};

/// Evaluation episodes use indices from here on so they never share
/// streams with training episodes.
pub const EVAL_EPISODE_BASE: u64 = 1 << 40;

/// Convergence: TruthFrac at or above this level ...
pub const CONVERGENCE_LEVEL: f64 = 0.9;
/// ... for this many consecutive checkpoints.
pub const CONVERGENCE_SUSTAIN: usize = 20;

/// Everything needed to build a grid environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub physical: PhysicalParams,
    pub bounds: BidBounds,
    pub prosumers: ProsumerConfig,
    pub mech: MechanismConfig,
}

impl EnvConfig {
    pub fn build(&self, seed: u64, run_id: u64) -> Result<GridEnv> {
        GridEnv::new(
            self.physical.clone(),
            self.bounds,
            self.mech,
            self.prosumers.clone(),
            Streams::new(seed, run_id),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub episodes_train: usize,
    /// Training episodes between curve checkpoints.
    pub eval_every: usize,
    pub episodes_eval: usize,
    pub seed: u64,
    pub run_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub run_id: u64,
    pub metrics: MetricsRecord,
    pub curve: Vec<CurvePoint>,
    /// Set when an update hit a non-finite loss; training stopped there.
    pub diverged: Option<String>,
}

/// Play one episode with an arbitrary bidder and return its trace.
pub fn run_episode_with<F>(env: &mut GridEnv, episode: u64, mut bidder: F) -> Result<Vec<SlotRecord>>
where
    F: FnMut(&GridEnv) -> Result<Vec<BidAction>>,
{
    env.reset(episode);
    let mut trace = Vec::with_capacity(env.params.slots_per_episode);
    while !env.done() {
        let bids = bidder(env)?;
        trace.push(env.step(&bids)?.1);
    }
    Ok(trace)
}

/// Mean-action bids of a frozen policy for the current slot.
pub fn policy_bids(policy: &PolicySet, norms: &[ObsNormalizer], map: &ActionMap, env: &GridEnv) -> Result<Vec<BidAction>> {
    if norms.len() != env.n_agents() || policy.n_agents != env.n_agents() {
        return Err(Error::Dimension { expected: env.n_agents(), got: norms.len().min(policy.n_agents) });
    }
    env.observations()
        .iter()
        .enumerate()
        .map(|(k, o)| mean_action(policy, k, &norms[k].normalize(&o.to_vec()), map))
        .collect()
}

/// Deterministic mean-action play with frozen observation statistics.
pub fn evaluate(
    env: &mut GridEnv,
    policy: &PolicySet,
    norms: &[ObsNormalizer],
    map: &ActionMap,
    episodes: usize,
) -> Result<Vec<SlotRecord>> {
    let mut traces = Vec::new();
    for i in 0..episodes {
        let t = run_episode_with(env, EVAL_EPISODE_BASE + i as u64, |env| policy_bids(policy, norms, map, env))?;
        traces.extend(t);
    }
    Ok(traces)
}

/// Train a population from scratch, recording a TruthFrac curve, then
/// evaluate the frozen policies.
pub fn train_and_evaluate(spec: &RunSpec, manifest_hash: &str) -> Result<(RunResult, PolicyCheckpoint)> {
    spec.ppo.validate()?;
    let mut env = spec.env.build(spec.seed, spec.run_id)?;
    let n = env.n_agents();
    let streams = Streams::new(spec.seed, spec.run_id);
    let map = ActionMap { bounds: spec.env.bounds, squash: spec.ppo.squash };
    let mut policy = PolicySet::new(
        n,
        env.obs_dim(),
        spec.ppo.hidden,
        spec.ppo.sharing,
        spec.ppo.init_log_std,
        &mut streams.rng(0, 0, ALL_AGENTS, Purpose::Init),
    );
    let mut norms = vec![ObsNormalizer::new(env.obs_dim()); n];
    let eps = spec.env.mech.epsilon;
    let mut batch: Vec<Transition> = Vec::with_capacity(spec.ppo.batch_size + n * 32);
    let mut curve = Vec::new();
    let mut diverged = None;
    let mut updates = 0u64;

    for ep in 0..spec.episodes_train {
        let mut rng = streams.rng(ep as u64, 0, ALL_AGENTS, Purpose::Policy);
        env.reset(ep as u64);
        while !env.done() {
            let obs = env.observations();
            let mut step = Vec::with_capacity(n);
            for (k, o) in obs.iter().enumerate() {
                let raw = o.to_vec();
                norms[k].update(&raw);
                let x = norms[k].normalize(&raw);
                let a = sample_action(&policy, k, &x, &map, &mut rng)?;
                step.push((x, a));
            }
            let bids: Vec<BidAction> = step.iter().map(|(_, a)| a.bid).collect();
            let (res, _) = env.step(&bids)?;
            let done = env.done();
            for (k, (x, a)) in step.into_iter().enumerate() {
                batch.push(Transition {
                    agent: k,
                    obs: x,
                    u: a.u,
                    log_prob: a.log_prob,
                    value: a.value,
                    reward: res.rewards[k],
                    done,
                });
            }
        }
        if batch.len() >= spec.ppo.batch_size {
            let mut shuffle = streams.rng(updates, 0, ALL_AGENTS, Purpose::Shuffle);
            updates += 1;
            match ppo_update(&mut policy, &batch, &spec.ppo, &mut shuffle) {
                Ok(_) => {}
                Err(Error::NonFiniteLoss(msg)) => {
                    diverged = Some(format!("episode {ep}: {msg}"));
                    break;
                }
                Err(e) => return Err(e),
            }
            batch.clear();
        }
        if spec.eval_every > 0 && (ep + 1) % spec.eval_every == 0 {
            let frozen: Vec<ObsNormalizer> = norms.iter().cloned().map(|mut z| { z.frozen = true; z }).collect();
            let t = evaluate(&mut env, &policy, &frozen, &map, 1)?;
            curve.push(CurvePoint { episode: ep + 1, truth_frac: metric_truth_frac(&t, eps)? });
        }
    }

    norms.iter_mut().for_each(|z| z.frozen = true);
    let traces = evaluate(&mut env, &policy, &norms, &map, spec.episodes_eval.max(1))?;
    let conv = convergence_episode(&curve, CONVERGENCE_LEVEL, CONVERGENCE_SUSTAIN);
    let result = RunResult {
        seed: spec.seed,
        run_id: spec.run_id,
        metrics: metrics(&traces, eps, conv)?,
        curve,
        diverged,
    };
    Ok((result, PolicyCheckpoint::new(policy, norms, manifest_hash, spec.seed)))
}
