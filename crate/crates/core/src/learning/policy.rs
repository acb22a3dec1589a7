//! Gaussian bid policies with value heads.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpCache, ParamBlock};
use crate::error::{Error, Result};
use crate::grid::{BidAction, BidBounds};

pub const POLICY_SCHEMA: &str = "policy.v1";
pub const ACTION_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sharing {
    /// One actor body and one critic body, per-agent heads.
    Shared,
    #[default]
    Independent,
}

/// How a raw Gaussian sample is mapped into the bid box. The log-density is
/// always the pre-squash one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Squash {
    #[default]
    Clamp,
    Tanh,
}

/// Maps normalized actions `u ∈ [-1, 1]²` to bids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionMap {
    pub bounds: BidBounds,
    pub squash: Squash,
}

impl ActionMap {
    pub fn to_bid(&self, u: [f64; 2]) -> BidAction {
        let s = |x: f64| match self.squash {
            Squash::Clamp => x.clamp(-1.0, 1.0),
            Squash::Tanh => x.tanh(),
        };
        let mid = 0.5 * (self.bounds.p_min + self.bounds.p_max);
        let half = 0.5 * (self.bounds.p_max - self.bounds.p_min);
        BidAction::new(mid + half * s(u[0]), self.bounds.q_max * s(u[1]))
    }

    /// Inverse of [`ActionMap::to_bid`] on the interior of the box.
    pub fn to_normalized(&self, bid: BidAction) -> [f64; 2] {
        let mid = 0.5 * (self.bounds.p_min + self.bounds.p_max);
        let half = 0.5 * (self.bounds.p_max - self.bounds.p_min);
        let raw = [(bid.price - mid) / half, bid.quantity / self.bounds.q_max];
        match self.squash {
            Squash::Clamp => raw,
            Squash::Tanh => raw.map(|x| x.clamp(-1.0 + 1e-9, 1.0 - 1e-9).atanh()),
        }
    }
}

/// Running per-dimension mean and variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    pub count: f64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
    pub frozen: bool,
}

impl ObsNormalizer {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            frozen: false,
        }
    }

    pub fn update(&mut self, x: &[f64]) {
        if self.frozen {
            return;
        }
        self.count += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / self.count;
            *s += d * (v - *m);
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| {
                let var = if self.count > 1.0 { self.m2[i] / self.count } else { 1.0 };
                ((v - self.mean[i]) / (var + 1e-8).sqrt()).clamp(-10.0, 10.0)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOutput {
    pub mean: [f64; 2],
    pub log_std: [f64; 2],
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    agent: usize,
    actor_body: MlpCache,
    actor_head: MlpCache,
    critic_body: MlpCache,
    critic_head: MlpCache,
}

/// Actor and critic networks for a population of agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySet {
    pub sharing: Sharing,
    pub obs_dim: usize,
    pub hidden: usize,
    pub n_agents: usize,
    pub actor_bodies: Vec<Mlp>,
    pub critic_bodies: Vec<Mlp>,
    pub actor_heads: Vec<Mlp>,
    pub critic_heads: Vec<Mlp>,
    pub log_std: Vec<ParamBlock>,
    #[serde(default)]
    pub adam_steps: u64,
}

impl PolicySet {
    pub fn new<R: Rng + ?Sized>(
        n_agents: usize,
        obs_dim: usize,
        hidden: usize,
        sharing: Sharing,
        init_log_std: f64,
        rng: &mut R,
    ) -> Self {
        let bodies = match sharing {
            Sharing::Shared => 1,
            Sharing::Independent => n_agents,
        };
        let mut actor_bodies = Vec::new();
        let mut critic_bodies = Vec::new();
        for _ in 0..bodies {
            actor_bodies.push(Mlp::new(&[obs_dim, hidden, hidden], true, 2f64.sqrt(), rng));
            critic_bodies.push(Mlp::new(&[obs_dim, hidden, hidden], true, 2f64.sqrt(), rng));
        }
        let actor_heads = (0..n_agents)
            .map(|_| Mlp::new(&[hidden, ACTION_DIM], false, 0.01, rng))
            .collect();
        let critic_heads = (0..n_agents)
            .map(|_| Mlp::new(&[hidden, 1], false, 1.0, rng))
            .collect();
        Self {
            sharing,
            obs_dim,
            hidden,
            n_agents,
            actor_bodies,
            critic_bodies,
            actor_heads,
            critic_heads,
            log_std: vec![ParamBlock::new(vec![init_log_std; ACTION_DIM]); n_agents],
            adam_steps: 0,
        }
    }

    fn body(&self, k: usize) -> usize {
        match self.sharing {
            Sharing::Shared => 0,
            Sharing::Independent => k,
        }
    }

    pub fn forward(&self, k: usize, obs: &[f64]) -> Result<(PolicyOutput, ForwardCache)> {
        if k >= self.n_agents {
            return Err(Error::IndexOutOfRange { index: k, len: self.n_agents });
        }
        if obs.len() != self.obs_dim {
            return Err(Error::Dimension { expected: self.obs_dim, got: obs.len() });
        }
        let b = self.body(k);
        let actor_body = self.actor_bodies[b].forward(obs);
        let actor_head = self.actor_heads[k].forward(actor_body.output());
        let critic_body = self.critic_bodies[b].forward(obs);
        let critic_head = self.critic_heads[k].forward(critic_body.output());
        let m = actor_head.output();
        let ls = &self.log_std[k].w;
        let out = PolicyOutput {
            mean: [m[0], m[1]],
            log_std: [ls[0], ls[1]],
            value: critic_head.output()[0],
        };
        Ok((
            out,
            ForwardCache {
                agent: k,
                actor_body,
                actor_head,
                critic_body,
                critic_head,
            },
        ))
    }

    /// Accumulate gradients of a scalar loss given its partials with respect
    /// to the policy outputs.
    pub fn backward(&mut self, cache: &ForwardCache, d_mean: [f64; 2], d_log_std: [f64; 2], d_value: f64) {
        let k = cache.agent;
        let b = self.body(k);
        let d_body = self.actor_heads[k].backward(&cache.actor_head, &d_mean);
        self.actor_bodies[b].backward(&cache.actor_body, &d_body);
        let d_body = self.critic_heads[k].backward(&cache.critic_head, &[d_value]);
        self.critic_bodies[b].backward(&cache.critic_body, &d_body);
        self.log_std[k].g[0] += d_log_std[0];
        self.log_std[k].g[1] += d_log_std[1];
    }

    pub fn blocks(&self) -> Vec<&ParamBlock> {
        self.actor_bodies
            .iter()
            .chain(&self.critic_bodies)
            .chain(&self.actor_heads)
            .chain(&self.critic_heads)
            .map(|m| &m.params)
            .chain(&self.log_std)
            .collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut ParamBlock> {
        self.actor_bodies
            .iter_mut()
            .chain(&mut self.critic_bodies)
            .chain(&mut self.actor_heads)
            .chain(&mut self.critic_heads)
            .map(|m| &mut m.params)
            .chain(&mut self.log_std)
            .collect()
    }

    pub fn zero_grad(&mut self) {
        self.blocks_mut().into_iter().for_each(ParamBlock::zero_grad);
    }

    pub fn n_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|b| b.w.iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|b| b.g.iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Dimension { expected: self.n_params(), got: flat.len() });
        }
        let mut off = 0;
        for b in self.blocks_mut() {
            let n = b.len();
            b.w.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.w.iter().all(|w| w.is_finite()))
    }
}

/// Deterministic forward pass for agent `k`.
pub fn policy_forward(set: &PolicySet, k: usize, obs: &[f64]) -> Result<PolicyOutput> {
    Ok(set.forward(k, obs)?.0)
}

/// Log-density of a diagonal Gaussian.
pub fn gaussian_log_prob(u: [f64; 2], mean: [f64; 2], log_std: [f64; 2]) -> f64 {
    (0..ACTION_DIM)
        .map(|d| {
            let z = (u[d] - mean[d]) / log_std[d].exp();
            -0.5 * z * z - log_std[d] - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

pub fn gaussian_entropy(log_std: [f64; 2]) -> f64 {
    log_std.iter().map(|l| l + 0.5 * (2.0 * PI * std::f64::consts::E).ln()).sum()
}

/// A sampled action: the raw Gaussian draw, its log-density, the bid it maps
/// to, and the value estimate from the same forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledAction {
    pub u: [f64; 2],
    pub log_prob: f64,
    pub bid: BidAction,
    pub value: f64,
}

pub fn sample_action<R: Rng + ?Sized>(
    set: &PolicySet,
    k: usize,
    obs: &[f64],
    map: &ActionMap,
    rng: &mut R,
) -> Result<SampledAction> {
    let out = policy_forward(set, k, obs)?;
    let mut u = [0.0; 2];
    for d in 0..ACTION_DIM {
        let z: f64 = StandardNormal.sample(rng);
        u[d] = out.mean[d] + out.log_std[d].exp() * z;
    }
    Ok(SampledAction {
        u,
        log_prob: gaussian_log_prob(u, out.mean, out.log_std),
        bid: map.to_bid(u),
        value: out.value,
    })
}

/// The bid of the distribution mean, used in evaluation.
pub fn mean_action(set: &PolicySet, k: usize, obs: &[f64], map: &ActionMap) -> Result<BidAction> {
    Ok(map.to_bid(policy_forward(set, k, obs)?.mean))
}

/// `policy.v1` checkpoint: networks plus the frozen observation statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyCheckpoint {
    pub schema: String,
    pub manifest_hash: String,
    pub seed: u64,
    pub policy: PolicySet,
    pub normalizers: Vec<ObsNormalizer>,
}

impl PolicyCheckpoint {
    pub fn new(policy: PolicySet, normalizers: Vec<ObsNormalizer>, manifest_hash: &str, seed: u64) -> Self {
        Self {
            schema: POLICY_SCHEMA.into(),
            manifest_hash: manifest_hash.into(),
            seed,
            policy,
            normalizers,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut ck: Self = serde_json::from_str(s)?;
        if ck.schema != POLICY_SCHEMA {
            return Err(Error::Schema { expected: POLICY_SCHEMA.into(), found: ck.schema });
        }
        ck.policy.blocks_mut().into_iter().for_each(ParamBlock::ensure_buffers);
        ck.normalizers.iter_mut().for_each(|n| n.frozen = true);
        Ok(ck)
    }
}
