//! Deviation detection and the one-shot penalty.
//!
//! A bid deviates when its price is more than `ε` away from the agent's true
//! marginal value (or cost) at the bid quantity. Detection is either a direct
//! Bernoulli(ρ) draw on true deviations, or emerges from Gaussian noise on the
//! monitored price. A detected agent loses `Π` from the same round's utility;
//! nothing carries over to later rounds.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::allocator::ApproxParams;
use crate::error::{Error, Result};
use crate::market::{AgentType, Role};
use crate::mechanism::PivotRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectionMode {
    #[default]
    DirectRho,
    NoiseInduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MechanismConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub rho: f64,
    pub penalty: f64,
    pub monitor_noise_sigma: f64,
    pub detection_mode: DetectionMode,
    pub pivot: PivotRule,
}

impl Default for MechanismConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            epsilon: 1.0,
            rho: 1.0,
            penalty: 0.0,
            monitor_noise_sigma: 0.0,
            detection_mode: DetectionMode::DirectRho,
            pivot: PivotRule::Approx,
        }
    }
}

impl MechanismConfig {
    pub fn validate(&self) -> Result<()> {
        self.approx().validate()?;
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1], got {}", self.rho)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.penalty >= 0.0) || !self.penalty.is_finite() {
            return Err(Error::Config(format!("penalty must be >= 0, got {}", self.penalty)));
        }
        if !(self.monitor_noise_sigma >= 0.0) {
            return Err(Error::Config("monitor_noise_sigma must be >= 0".into()));
        }
        Ok(())
    }

    pub fn approx(&self) -> ApproxParams {
        ApproxParams::with_alpha(self.alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub agent: usize,
    pub true_marginal: f64,
    pub bid_price: f64,
    pub observed_price: f64,
    pub deviated: bool,
    pub detected: bool,
}

/// Marginal value (buyers, `q > 0`) or marginal cost (sellers, `q < 0`) of the
/// true type at the bid quantity, with `|q|` clamped to the relevant cap. At
/// `q = 0` the side follows the agent's role (prosumers count as buyers).
pub fn true_marginal(agent: &AgentType, q_bid: f64) -> f64 {
    let as_seller = q_bid < 0.0 || (q_bid == 0.0 && agent.role_hint == Role::Seller);
    if as_seller {
        let q = q_bid.abs().min(agent.cap_supply);
        agent.c + agent.e * q
    } else {
        let q = q_bid.abs().min(agent.cap_demand);
        (agent.a - agent.b * q).max(0.0)
    }
}

/// Decide whether one bid is flagged.
pub fn detect<R: Rng + ?Sized>(
    cfg: &MechanismConfig,
    agent: usize,
    bid_price: f64,
    v_prime: f64,
    rng: &mut R,
) -> DetectionRecord {
    let deviated = (bid_price - v_prime).abs() > cfg.epsilon;
    let (observed_price, detected) = match cfg.detection_mode {
        DetectionMode::DirectRho => {
            // Always consume one draw so streams stay aligned across bids.
            let u: f64 = rng.random();
            (bid_price, deviated && u < cfg.rho)
        }
        DetectionMode::NoiseInduced => {
            let noise = if cfg.monitor_noise_sigma > 0.0 {
                Normal::new(0.0, cfg.monitor_noise_sigma)
                    .expect("sigma validated")
                    .sample(rng)
            } else {
                0.0
            };
            let observed = bid_price + noise;
            (observed, (observed - v_prime).abs() > cfg.epsilon)
        }
    };
    DetectionRecord {
        agent,
        true_marginal: v_prime,
        bid_price,
        observed_price,
        deviated,
        detected,
    }
}

/// `u − D·Π`; also the per-slot learning reward.
pub fn penalized_utility(u: f64, rec: &DetectionRecord, cfg: &MechanismConfig) -> f64 {
    if rec.detected {
        u - cfg.penalty
    } else {
        u
    }
}

/// Strict lower bound `(1 − α)·C/ρ` on a penalty that makes truthful
/// reporting an equilibrium.
pub fn penalty_threshold(alpha: f64, c: f64, rho: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if !(c >= 0.0) {
        return Err(Error::Config(format!("C must be >= 0, got {c}")));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Config(format!("rho must lie in (0, 1], got {rho}")));
    }
    Ok((1.0 - alpha) * c / rho)
}

/// Monte-Carlo detection frequency of a fixed deviation under monitoring
/// noise.
pub fn effective_rho<R: Rng + ?Sized>(
    cfg: &MechanismConfig,
    deviation_magnitude: f64,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::Empty("effective_rho needs at least one sample"));
    }
    let noisy = MechanismConfig {
        detection_mode: DetectionMode::NoiseInduced,
        ..*cfg
    };
    let hits = (0..samples)
        .filter(|_| detect(&noisy, 0, deviation_magnitude, 0.0, rng).detected)
        .count();
    Ok(hits as f64 / samples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use statrs::distribution::{ContinuousCDF, Normal as OracleNormal};

    fn cfg(eps: f64, rho: f64, penalty: f64) -> MechanismConfig {
        MechanismConfig {
            epsilon: eps,
            rho,
            penalty,
            ..MechanismConfig::default()
        }
    }

    #[test]
    fn marginals() {
        let buyer = AgentType::buyer(0, 10.0, 1.0, 5.0);
        // d/dq (10q − q²/2) = 10 − q
        assert_eq!(true_marginal(&buyer, 4.0), 6.0);
        assert_eq!(true_marginal(&buyer, 0.0), 10.0);
        let seller = AgentType::seller(1, 2.0, 1.0, 5.0);
        // d/dq (2q + q²/2) = 2 + q
        assert_eq!(true_marginal(&seller, -4.0), 6.0);
        assert_eq!(true_marginal(&seller, 0.0), 2.0);
        // clamped at cap
        assert_eq!(true_marginal(&buyer, 9.0), 5.0);
    }

    #[test]
    fn truthful_bid_never_flagged() {
        let mut rng = stream(1, Purpose::Detection);
        let c = cfg(1.0, 1.0, 5.0);
        for _ in 0..1000 {
            let r = detect(&c, 0, 6.0, 6.0, &mut rng);
            assert!(!r.deviated && !r.detected);
        }
    }

    #[test]
    fn certain_detection_at_rho_one() {
        let mut rng = stream(2, Purpose::Detection);
        let c = cfg(1.0, 1.0, 5.0);
        for _ in 0..1000 {
            assert!(detect(&c, 0, 8.0, 6.0, &mut rng).detected);
        }
    }

    #[test]
    fn detection_frequency_matches_rho() {
        let mut rng = stream(3, Purpose::Detection);
        let c = cfg(1.0, 0.5, 5.0);
        let hits = (0..10_000)
            .filter(|_| detect(&c, 0, 8.0, 6.0, &mut rng).detected)
            .count();
        let f = hits as f64 / 10_000.0;
        assert!((f - 0.5).abs() <= 0.02, "{f}");
    }

    #[test]
    fn penalized_utility_examples() {
        let c = cfg(1.0, 1.0, 3.0);
        let mut rec = detect(&c, 0, 6.0, 6.0, &mut stream(0, Purpose::Detection));
        assert_eq!(penalized_utility(5.0, &rec, &c), 5.0);
        rec.detected = true;
        assert_eq!(penalized_utility(5.0, &rec, &c), 2.0);
        assert_eq!(penalized_utility(0.0, &rec, &c), -3.0);
        // monotone non-increasing in Π
        let mut prev = f64::INFINITY;
        for pi in [0.0, 1.0, 2.5, 10.0] {
            let u = penalized_utility(5.0, &rec, &cfg(1.0, 1.0, pi));
            assert!(u <= prev);
            prev = u;
        }
    }

    #[test]
    fn thresholds() {
        assert_eq!(penalty_threshold(1.0, 123.0, 1.0).unwrap(), 0.0);
        assert!((penalty_threshold(0.8, 16.0, 0.5).unwrap() - 6.4).abs() < 1e-12);
        assert!((penalty_threshold(0.7, 10.0, 1.0).unwrap() - 3.0).abs() < 1e-12);
        assert!(penalty_threshold(0.7, 10.0, 0.0).is_err());
    }

    #[test]
    fn effective_rho_noiseless_and_gaussian() {
        let mut rng = stream(4, Purpose::MonteCarlo);
        let c = cfg(1.0, 1.0, 0.0);
        assert_eq!(effective_rho(&c, 1.5, 1000, &mut rng).unwrap(), 1.0);
        assert_eq!(effective_rho(&c, 0.5, 1000, &mut rng).unwrap(), 0.0);
        assert!(effective_rho(&c, 1.5, 0, &mut rng).is_err());

        let noisy = MechanismConfig {
            monitor_noise_sigma: 0.5,
            ..c
        };
        let mc = effective_rho(&noisy, 1.5, 20_000, &mut rng).unwrap();
        // |1.5 + ξ| > 1 with ξ ~ N(0, 0.5²): both tails.
        let n = OracleNormal::new(0.0, 0.5).unwrap();
        let oracle = (1.0 - n.cdf(1.0 - 1.5)) + n.cdf(-1.0 - 1.5);
        assert!((mc - oracle).abs() < 0.015, "{mc} vs {oracle}");
    }

    #[test]
    fn noise_false_positive_rate_is_gaussian_tail() {
        let mut rng = stream(5, Purpose::MonteCarlo);
        let noisy = MechanismConfig {
            monitor_noise_sigma: 0.8,
            detection_mode: DetectionMode::NoiseInduced,
            ..cfg(1.0, 1.0, 0.0)
        };
        let hits = (0..10_000)
            .filter(|_| detect(&noisy, 0, 5.0, 5.0, &mut rng).detected)
            .count();
        let n = OracleNormal::new(0.0, 0.8).unwrap();
        let oracle = 2.0 * n.cdf(-1.0);
        assert!((hits as f64 / 1e4 - oracle).abs() <= 0.02);
    }

    #[test]
    fn expected_penalized_gain_matches_closed_form() {
        // mean(u'_dev) − u_truth → g − ρΠ
        let (g, pi, rho) = (2.0, 3.0, 0.6);
        let c = cfg(0.5, rho, pi);
        let mut rng = stream(6, Purpose::MonteCarlo);
        let n = 20_000;
        let mean: f64 = (0..n)
            .map(|_| {
                let rec = detect(&c, 0, 7.0, 6.0, &mut rng);
                penalized_utility(10.0 + g, &rec, &c) - 10.0
            })
            .sum::<f64>()
            / n as f64;
        let se = pi * (rho * (1.0 - rho) / n as f64).sqrt();
        assert!((mean - (g - rho * pi)).abs() < 4.0 * se, "{mean}");
    }

    #[test]
    fn config_validation() {
        assert!(cfg(1.0, 0.0, 1.0).validate().is_err());
        assert!(cfg(0.0, 1.0, 1.0).validate().is_err());
        assert!(cfg(1.0, 1.0, -1.0).validate().is_err());
        assert!(cfg(1.0, 1.0, 1.0).validate().is_ok());
    }
}
