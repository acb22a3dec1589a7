use proptest::prelude::*;

use pvl_core::enforcement::MechanismConfig;
use pvl_core::experiments::scripted::ScriptedPolicy;
use pvl_core::experiments::trainer::{run_episode_with, EnvConfig};
use pvl_core::grid::{BidAction, BidBounds, PhysicalParams, ProsumerConfig};
use pvl_core::rng::{Streams, Purpose};
use rand::Rng;

fn config(n: usize, alpha: f64, penalty: f64) -> EnvConfig {
    EnvConfig {
        physical: PhysicalParams::uniform(n),
        bounds: BidBounds::default(),
        prosumers: ProsumerConfig::default(),
        mech: MechanismConfig { alpha, penalty, ..Default::default() },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_bids_keep_soc_and_balance(n in 2usize..7, alpha in 0.5f64..=1.0, seed in 0u64..1000) {
        let cfg = config(n, alpha, 1.0);
        let mut env = cfg.build(seed, 0).unwrap();
        let b = env.bounds;
        let draws = Streams::new(seed, 99);
        let trace = run_episode_with(&mut env, 0, |env| {
            let mut rng = draws.rng(0, env.state().slot as u64, 0, Purpose::MonteCarlo);
            Ok((0..env.n_agents())
                .map(|_| BidAction::new(rng.random_range(b.p_min..=b.p_max), rng.random_range(-b.q_max..=b.q_max)))
                .collect())
        })
        .unwrap();
        let cap = cfg.physical.soc_capacity.clone();
        for slot in &trace {
            for (s, c) in slot.soc.iter().zip(&cap) {
                prop_assert!(*s >= 0.0 && s <= c);
            }
            let bought: f64 = slot.quantities.iter().filter(|q| **q > 0.0).sum();
            let sold: f64 = slot.quantities.iter().filter(|q| **q < 0.0).map(|q| -q).sum();
            prop_assert_eq!(bought, sold);
            prop_assert!(slot.welfare_true <= slot.welfare_star + 1e-6 * slot.welfare_star.abs().max(1.0));
        }
    }

    #[test]
    fn replay_is_deterministic(seed in 0u64..1000, episode in 0u64..50, offset in -3.0f64..3.0) {
        let cfg = config(3, 0.8, 2.0);
        let play = || {
            let mut env = cfg.build(seed, 0).unwrap();
            let p = vec![ScriptedPolicy::Offset(offset); env.n_agents()];
            run_episode_with(&mut env, episode, |env| Ok(ScriptedPolicy::bids(&p, env))).unwrap()
        };
        prop_assert_eq!(play(), play());
    }

    #[test]
    fn penalties_only_hit_flagged_bids(seed in 0u64..1000, offset in 0.0f64..4.0) {
        let cfg = config(4, 0.9, 5.0);
        let mut env = cfg.build(seed, 0).unwrap();
        let p = vec![ScriptedPolicy::Offset(offset); env.n_agents()];
        let trace = run_episode_with(&mut env, 0, |env| Ok(ScriptedPolicy::bids(&p, env))).unwrap();
        for slot in &trace {
            for (k, d) in slot.detections.iter().enumerate() {
                let expect = slot.utilities[k] - if d.detected { 5.0 } else { 0.0 };
                prop_assert!((slot.rewards[k] - expect).abs() < 1e-9);
                prop_assert!(!d.detected || d.deviated);
            }
        }
    }
}

#[test]
fn truthful_population_is_never_flagged() {
    let cfg = config(5, 0.7, 100.0);
    let mut env = cfg.build(2, 0).unwrap();
    let p = vec![ScriptedPolicy::Truthful; env.n_agents()];
    let trace = run_episode_with(&mut env, 1, |env| Ok(ScriptedPolicy::bids(&p, env))).unwrap();
    assert!(trace.iter().flat_map(|s| &s.detections).all(|d| !d.detected));
    for s in &trace {
        assert_eq!(s.rewards, s.utilities);
    }
}
