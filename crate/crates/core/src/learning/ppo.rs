//! Clipped-surrogate PPO with GAE and Adam.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::policy::{gaussian_entropy, gaussian_log_prob, PolicySet, Sharing, Squash};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub lr: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_ratio: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Transitions collected (over all agents) before each update.
    pub batch_size: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub max_grad_norm: f64,
    /// Rewards are divided by this before entering the learner.
    pub reward_scale: f64,
    pub hidden: usize,
    pub sharing: Sharing,
    pub init_log_std: f64,
    pub squash: Squash,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            gamma: 0.95,
            gae_lambda: 0.95,
            clip_ratio: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            batch_size: 1024,
            epochs: 4,
            minibatches: 4,
            max_grad_norm: 0.5,
            reward_scale: 1.0,
            hidden: 64,
            sharing: Sharing::Independent,
            init_log_std: -0.5,
            squash: Squash::Clamp,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.lr > 0.0) || !(self.clip_ratio > 0.0) {
            return bad("lr and clip_ratio must be > 0");
        }
        if self.minibatches == 0 || self.epochs == 0 || self.batch_size < self.minibatches {
            return bad("need epochs >= 1 and batch_size >= minibatches >= 1");
        }
        if !(self.entropy_coef >= 0.0 && self.value_coef >= 0.0 && self.reward_scale > 0.0) {
            return bad("entropy_coef, value_coef must be >= 0 and reward_scale > 0");
        }
        if self.hidden == 0 {
            return bad("hidden must be >= 1");
        }
        Ok(())
    }
}

/// One agent-step as collected during a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub agent: usize,
    /// Normalized observation fed to the networks.
    pub obs: Vec<f64>,
    pub u: [f64; 2],
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    /// The episode ends after this step.
    pub done: bool,
}

/// GAE over one agent's trajectory. `last_value` bootstraps the step after
/// the final one unless that step is terminal. Returns (advantages, returns).
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if n == 0 {
        return Err(Error::Empty("trajectory"));
    }
    if values.len() != n || dones.len() != n {
        return Err(Error::Dimension { expected: n, got: values.len().min(dones.len()) });
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if dones[t] {
            0.0
        } else if t + 1 < n {
            values[t + 1]
        } else {
            last_value
        };
        if dones[t] {
            running = 0.0;
        }
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Shift to mean 0 and scale to standard deviation 1.
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    xs.iter_mut().for_each(|x| *x = (*x - mean) / (std + 1e-8));
}

/// A training sample with its advantage and return target.
#[derive(Debug, Clone)]
pub struct Sample<'a> {
    pub t: &'a Transition,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
    pub clip_fraction: f64,
}

/// PPO loss on a minibatch: each agent contributes the mean over its own
/// samples and the per-agent terms are summed. Gradients accumulate into
/// the policy set.
pub fn loss_and_grad(set: &mut PolicySet, samples: &[Sample<'_>], cfg: &PpoConfig) -> Result<LossStats> {
    let mut counts = vec![0usize; set.n_agents];
    for s in samples {
        counts[s.t.agent] += 1;
    }
    let mut stats = LossStats::default();
    let mut clipped = 0usize;
    for s in samples {
        let k = s.t.agent;
        let w = 1.0 / counts[k] as f64;
        let (out, cache) = set.forward(k, &s.t.obs)?;
        let logp = gaussian_log_prob(s.t.u, out.mean, out.log_std);
        let ratio = (logp - s.t.log_prob).exp();
        let a = s.advantage;
        let unclipped = ratio * a;
        let clipped_ratio = ratio.clamp(1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio);
        let surrogate = unclipped.min(clipped_ratio * a);
        // d(-surrogate)/d logp is -A·r on the unclipped branch, 0 otherwise.
        let d_logp = if unclipped <= clipped_ratio * a {
            -a * ratio
        } else {
            clipped += 1;
            0.0
        };
        let entropy = gaussian_entropy(out.log_std);
        let verr = out.value - s.ret;
        stats.policy_loss -= w * surrogate;
        stats.value_loss += w * verr * verr;
        stats.entropy += w * entropy;

        let mut d_mean = [0.0; 2];
        let mut d_log_std = [0.0; 2];
        for d in 0..2 {
            let inv_var = (-2.0 * out.log_std[d]).exp();
            let diff = s.t.u[d] - out.mean[d];
            d_mean[d] = w * d_logp * diff * inv_var;
            d_log_std[d] = w * (d_logp * (diff * diff * inv_var - 1.0) - cfg.entropy_coef);
        }
        let d_value = w * cfg.value_coef * 2.0 * verr;
        set.backward(&cache, d_mean, d_log_std, d_value);
    }
    stats.total = stats.policy_loss + cfg.value_coef * stats.value_loss - cfg.entropy_coef * stats.entropy;
    stats.clip_fraction = clipped as f64 / samples.len().max(1) as f64;
    if !stats.total.is_finite() {
        return Err(Error::NonFiniteLoss(format!("loss {}", stats.total)));
    }
    Ok(stats)
}

/// Scale all gradients so their global norm is at most `max_norm`, then take
/// one Adam step.
pub fn adam_step(set: &mut PolicySet, lr: f64, max_norm: f64) -> Result<()> {
    let norm = set
        .blocks()
        .iter()
        .flat_map(|b| b.g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFiniteLoss(format!("gradient norm {norm}")));
    }
    let scale = if max_norm > 0.0 && norm > max_norm { max_norm / norm } else { 1.0 };
    set.adam_steps += 1;
    let t = set.adam_steps as i32;
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for block in set.blocks_mut() {
        for i in 0..block.w.len() {
            let g = block.g[i] * scale;
            block.m[i] = b1 * block.m[i] + (1.0 - b1) * g;
            block.v[i] = b2 * block.v[i] + (1.0 - b2) * g * g;
            block.w[i] -= lr * (block.m[i] / c1) / ((block.v[i] / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Advantages and returns for a batch holding whole trajectories of several
/// agents in collection order.
pub fn batch_targets(batch: &[Transition], n_agents: usize, cfg: &PpoConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut adv = vec![0.0; batch.len()];
    let mut ret = vec![0.0; batch.len()];
    for k in 0..n_agents {
        let idx: Vec<usize> = (0..batch.len()).filter(|&i| batch[i].agent == k).collect();
        if idx.is_empty() {
            continue;
        }
        let r: Vec<f64> = idx.iter().map(|&i| batch[i].reward / cfg.reward_scale).collect();
        let v: Vec<f64> = idx.iter().map(|&i| batch[i].value).collect();
        let d: Vec<bool> = idx.iter().map(|&i| batch[i].done).collect();
        let last = *v.last().expect("non-empty");
        let (a, rt) = compute_gae(&r, &v, &d, last, cfg.gamma, cfg.gae_lambda)?;
        for (j, &i) in idx.iter().enumerate() {
            adv[i] = a[j];
            ret[i] = rt[j];
        }
    }
    normalize(&mut adv);
    Ok((adv, ret))
}

/// Several epochs of minibatch PPO on one batch. On a non-finite loss the
/// parameters are restored and the error is returned.
pub fn ppo_update<R: Rng + ?Sized>(
    set: &mut PolicySet,
    batch: &[Transition],
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<LossStats> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let (adv, ret) = batch_targets(batch, set.n_agents, cfg)?;
    let backup = set.clone();
    let mut last = LossStats::default();
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let chunk = batch.len().div_ceil(cfg.minibatches);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for mb in order.chunks(chunk) {
            let samples: Vec<Sample<'_>> = mb
                .iter()
                .map(|&i| Sample { t: &batch[i], advantage: adv[i], ret: ret[i] })
                .collect();
            set.zero_grad();
            let step = loss_and_grad(set, &samples, cfg).and_then(|s| {
                adam_step(set, cfg.lr, cfg.max_grad_norm)?;
                Ok(s)
            });
            match step {
                Ok(s) => last = s,
                Err(e) => {
                    *set = backup;
                    return Err(e);
                }
            }
        }
    }
    if !set.is_finite() {
        *set = backup;
        return Err(Error::NonFiniteLoss("parameters after update".into()));
    }
    Ok(last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::policy::{policy_forward, ActionMap};
    use crate::grid::BidBounds;
    use crate::rng::{stream, Purpose};
    use rand::Rng;

    #[test]
    fn gae_limits() {
        let r = [1.0, 2.0, 3.0];
        let v = [0.5, 0.25, 1.0];
        let d = [false, false, true];
        let (a, ret) = compute_gae(&r, &v, &d, 9.0, 0.0, 0.7).unwrap();
        assert_eq!(a, vec![0.5, 1.75, 2.0]);
        assert_eq!(ret, vec![1.0, 2.0, 3.0]);
        let (a, _) = compute_gae(&r, &v, &d, 9.0, 0.9, 0.0).unwrap();
        assert!((a[0] - (1.0 + 0.9 * 0.25 - 0.5)).abs() < 1e-12);
        assert!((a[2] - (3.0 - 1.0)).abs() < 1e-12);
        assert!(compute_gae(&[], &[], &[], 0.0, 0.9, 0.9).is_err());
    }

    #[test]
    fn gae_matches_direct_sum() {
        let mut rng = stream(9, Purpose::Init);
        let (g, l) = (0.93, 0.81);
        let r: Vec<f64> = (0..5).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let v: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
        let last = 0.37;
        let (a, _) = compute_gae(&r, &v, &[false; 5], last, g, l).unwrap();
        let vnext = |t: usize| if t + 1 < 5 { v[t + 1] } else { last };
        for t in 0..5 {
            let want: f64 = (t..5)
                .map(|j| (g * l).powi((j - t) as i32) * (r[j] + g * vnext(j) - v[j]))
                .sum();
            assert!((a[t] - want).abs() < 1e-10);
        }
    }

    fn random_batch(set: &PolicySet, n: usize, seed: u64) -> Vec<Transition> {
        let mut rng = stream(seed, Purpose::Policy);
        (0..n)
            .map(|i| {
                let agent = i % set.n_agents;
                let obs: Vec<f64> = (0..set.obs_dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                let out = policy_forward(set, agent, &obs).unwrap();
                let u = [out.mean[0] + rng.random::<f64>() - 0.5, out.mean[1] + rng.random::<f64>() - 0.5];
                Transition {
                    agent,
                    log_prob: gaussian_log_prob(u, out.mean, out.log_std) - 0.1 + 0.2 * rng.random::<f64>(),
                    obs,
                    u,
                    value: out.value,
                    reward: rng.random::<f64>(),
                    done: i + set.n_agents >= n,
                }
            })
            .collect()
    }

    fn total_loss(set: &PolicySet, samples: &[Sample<'_>], cfg: &PpoConfig) -> f64 {
        let mut c = set.clone();
        loss_and_grad(&mut c, samples, cfg).unwrap().total
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        for sharing in [Sharing::Shared, Sharing::Independent] {
            let mut set = PolicySet::new(2, 3, 4, sharing, -0.3, &mut stream(21, Purpose::Init));
            // Lift the tiny head so every parameter carries signal, and move
            // biases off zero so no ReLU sits exactly on its kink.
            for h in &mut set.actor_heads {
                h.params.w.iter_mut().for_each(|w| *w *= 50.0);
            }
            let mut jitter = stream(23, Purpose::Init);
            let p: Vec<f64> = set.flat_params().iter().map(|w| w + 0.2 * (jitter.random::<f64>() - 0.5)).collect();
            set.set_flat_params(&p).unwrap();
            let batch = random_batch(&set, 12, 22);
            let cfg = PpoConfig { entropy_coef: 0.01, ..PpoConfig::default() };
            let samples: Vec<Sample<'_>> = batch
                .iter()
                .enumerate()
                .map(|(i, t)| Sample { t, advantage: (i as f64 - 5.5) / 4.0, ret: 0.3 * i as f64 })
                .collect();
            set.zero_grad();
            loss_and_grad(&mut set, &samples, &cfg).unwrap();
            let grad = set.flat_grads();
            let base = set.flat_params();
            let h = 1e-5;
            let mut worst: f64 = 0.0;
            for i in 0..base.len() {
                let mut p = base.clone();
                p[i] += h;
                set.set_flat_params(&p).unwrap();
                let up = total_loss(&set, &samples, &cfg);
                p[i] -= 2.0 * h;
                set.set_flat_params(&p).unwrap();
                let down = total_loss(&set, &samples, &cfg);
                let num = (up - down) / (2.0 * h);
                let err = (num - grad[i]).abs() / num.abs().max(grad[i].abs()).max(1e-6);
                worst = worst.max(err);
            }
            set.set_flat_params(&base).unwrap();
            assert!(worst < 1e-4, "{sharing:?}: {worst}");
        }
    }

    #[test]
    fn unclipped_gradient_is_the_policy_gradient() {
        // One-step bandit: fresh samples, old log-prob equal to the current one.
        let mut set = PolicySet::new(1, 2, 6, Sharing::Independent, -0.2, &mut stream(31, Purpose::Init));
        for h in &mut set.actor_heads {
            h.params.w.iter_mut().for_each(|w| *w *= 30.0);
        }
        let mut rng = stream(32, Purpose::Policy);
        let obs = vec![0.4, -0.8];
        let out = policy_forward(&set, 0, &obs).unwrap();
        let batch: Vec<Transition> = (0..16)
            .map(|_| {
                let u = [out.mean[0] + rng.random::<f64>() - 0.5, out.mean[1] + rng.random::<f64>() - 0.5];
                Transition {
                    agent: 0,
                    obs: obs.clone(),
                    u,
                    log_prob: gaussian_log_prob(u, out.mean, out.log_std),
                    value: 0.0,
                    reward: 0.0,
                    done: true,
                }
            })
            .collect();
        let adv: Vec<f64> = batch.iter().map(|t| if t.u[0] > out.mean[0] { 1.0 } else { -1.0 }).collect();
        let cfg = PpoConfig { clip_ratio: f64::INFINITY, entropy_coef: 0.0, value_coef: 0.0, ..PpoConfig::default() };
        let samples: Vec<Sample<'_>> = batch
            .iter()
            .zip(&adv)
            .map(|(t, &a)| Sample { t, advantage: a, ret: 0.0 })
            .collect();
        set.zero_grad();
        loss_and_grad(&mut set, &samples, &cfg).unwrap();
        let g = set.flat_grads();

        // Vanilla estimator -mean(A · ∇ log π(u)) by central differences.
        let objective = |s: &PolicySet| -> f64 {
            let o = policy_forward(s, 0, &obs).unwrap();
            -batch
                .iter()
                .zip(&adv)
                .map(|(t, a)| a * gaussian_log_prob(t.u, o.mean, o.log_std))
                .sum::<f64>()
                / batch.len() as f64
        };
        let base = set.flat_params();
        let mut probe = set.clone();
        let oracle: Vec<f64> = (0..base.len())
            .map(|i| {
                let mut p = base.clone();
                p[i] += 1e-6;
                probe.set_flat_params(&p).unwrap();
                let up = objective(&probe);
                p[i] -= 2e-6;
                probe.set_flat_params(&p).unwrap();
                (up - objective(&probe)) / 2e-6
            })
            .collect();
        let dot: f64 = g.iter().zip(&oracle).map(|(a, b)| a * b).sum();
        let na = g.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nb = oracle.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(1.0 - dot / (na * nb) < 1e-6);
    }

    #[test]
    fn zero_advantages_move_only_log_std() {
        let mut set = PolicySet::new(1, 2, 4, Sharing::Independent, -0.5, &mut stream(41, Purpose::Init));
        let mut batch = random_batch(&set, 8, 42);
        batch.iter_mut().for_each(|t| t.reward = 0.0);
        let cfg = PpoConfig { value_coef: 0.0, entropy_coef: 0.01, ..PpoConfig::default() };
        let samples: Vec<Sample<'_>> = batch.iter().map(|t| Sample { t, advantage: 0.0, ret: 0.0 }).collect();
        set.zero_grad();
        loss_and_grad(&mut set, &samples, &cfg).unwrap();
        assert!(set.actor_heads[0].params.g.iter().all(|&g| g == 0.0));
        assert!(set.actor_bodies[0].params.g.iter().all(|&g| g == 0.0));
        // Entropy bonus pushes log-std up.
        assert!(set.log_std[0].g.iter().all(|&g| g < 0.0));
    }

    #[test]
    fn entropy_bonus_lowers_the_loss() {
        let mut set = PolicySet::new(1, 2, 4, Sharing::Independent, -0.5, &mut stream(43, Purpose::Init));
        let batch = random_batch(&set, 8, 44);
        let samples: Vec<Sample<'_>> = batch.iter().map(|t| Sample { t, advantage: 0.3, ret: 0.0 }).collect();
        let without = loss_and_grad(&mut set, &samples, &PpoConfig { entropy_coef: 0.0, ..PpoConfig::default() }).unwrap();
        let with = loss_and_grad(&mut set, &samples, &PpoConfig { entropy_coef: 0.02, ..PpoConfig::default() }).unwrap();
        assert!(with.entropy >= 0.0);
        assert!(with.total < without.total);
    }

    #[test]
    fn bandit_converges() {
        // Context x ∈ [-1, 1], reward 1 − (u₀ − 0.5x)² − u₁², optimum 1.
        let cfg = PpoConfig {
            lr: 3e-3,
            batch_size: 256,
            minibatches: 4,
            epochs: 4,
            hidden: 16,
            gamma: 0.9,
            ..PpoConfig::default()
        };
        let mut set = PolicySet::new(1, 1, cfg.hidden, Sharing::Independent, -0.5, &mut stream(51, Purpose::Init));
        let map = ActionMap { bounds: BidBounds::default(), squash: Squash::Clamp };
        let mut rng = stream(52, Purpose::Policy);
        let reward = |x: f64, u: [f64; 2]| 1.0 - (u[0] - 0.5 * x).powi(2) - u[1].powi(2);
        let eval = |set: &PolicySet| -> f64 {
            (0..21)
                .map(|i| {
                    let x = -1.0 + 0.1 * i as f64;
                    let m = policy_forward(set, 0, &[x]).unwrap().mean;
                    reward(x, m)
                })
                .sum::<f64>()
                / 21.0
        };
        let mut updates = 0;
        while eval(&set) < 0.95 && updates < 2000 {
            let batch: Vec<Transition> = (0..cfg.batch_size)
                .map(|_| {
                    let x: f64 = rng.random::<f64>() * 2.0 - 1.0;
                    let a = crate::learning::policy::sample_action(&set, 0, &[x], &map, &mut rng).unwrap();
                    Transition {
                        agent: 0,
                        obs: vec![x],
                        u: a.u,
                        log_prob: a.log_prob,
                        value: a.value,
                        reward: reward(x, a.u),
                        done: true,
                    }
                })
                .collect();
            ppo_update(&mut set, &batch, &cfg, &mut rng).unwrap();
            updates += 1;
        }
        assert!(eval(&set) >= 0.95, "after {updates} updates: {}", eval(&set));
    }

    #[test]
    fn non_finite_loss_restores_parameters() {
        let mut set = PolicySet::new(1, 2, 4, Sharing::Independent, -0.5, &mut stream(61, Purpose::Init));
        let mut batch = random_batch(&set, 8, 62);
        batch[3].reward = f64::NAN;
        let before = set.flat_params();
        let err = ppo_update(&mut set, &batch, &PpoConfig { minibatches: 2, ..PpoConfig::default() }, &mut stream(63, Purpose::Shuffle));
        assert!(matches!(err, Err(Error::NonFiniteLoss(_))));
        assert_eq!(set.flat_params(), before);
    }

    #[test]
    fn config_validation() {
        assert!(PpoConfig::default().validate().is_ok());
        assert!(PpoConfig { gamma: 1.0, ..PpoConfig::default() }.validate().is_err());
        assert!(PpoConfig { batch_size: 2, minibatches: 4, ..PpoConfig::default() }.validate().is_err());
    }
}
