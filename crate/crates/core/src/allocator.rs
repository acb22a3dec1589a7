//! Welfare-maximizing clearing and the α-approximate allocator.
//!
//! The exact oracle finds the competitive price `λ` by bisection on excess
//! demand. At `λ` every buyer takes `argmax v(q) − λq` and every seller takes
//! `argmax λq − c(q)`; with concave values and convex costs this is the
//! welfare optimum. Flat segments (zero curvature) give an interval of
//! optimal quantities at the tie price and are rationed in proportion to the
//! slack each tied agent has.
//!
//! The α-approximate allocator scales the optimum toward zero. Welfare along
//! `s·x̃` is concave with its maximum at `s = 1`, so it is non-decreasing on
//! `[0, 1]` and a second bisection finds the smallest tested `s` reaching
//! `α·W*`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{welfare_of_totals, AgentType, Allocation, EconomyInstance, Side};

/// Absolute tolerance on excess demand.
pub const EXCESS_TOL: f64 = 1e-12;
/// Prices within this distance of a flat segment count as tied.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApproxParams {
    pub alpha: f64,
    /// Relative welfare tolerance of the scale search.
    pub scale_tolerance: f64,
    pub max_bisect_iters: usize,
}

impl Default for ApproxParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            scale_tolerance: 1e-6,
            max_bisect_iters: 200,
        }
    }
}

impl ApproxParams {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.scale_tolerance > 0.0) {
            return Err(Error::Config("scale_tolerance must be > 0".into()));
        }
        if self.max_bisect_iters == 0 {
            return Err(Error::Config("max_bisect_iters must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClearingResult {
    pub allocation: Allocation,
    /// Multiplier of the balance constraint (the clearing price).
    pub shadow_price: f64,
    /// Welfare of `allocation`.
    pub welfare_star: f64,
    pub iterations: usize,
}

/// Range of optimal demand at price `p`.
fn demand_range(agent: &AgentType, p: f64) -> (f64, f64) {
    let d = agent.cap_demand;
    if agent.b > 0.0 {
        // Value is flat beyond a/b, so at a zero price any quantity past the
        // saturation point is optimal.
        let sat = (agent.a / agent.b).min(d);
        if p <= TIE_TOL {
            (sat, d)
        } else {
            let q = ((agent.a - p) / agent.b).clamp(0.0, sat);
            (q, q)
        }
    } else if p < agent.a - TIE_TOL {
        (d, d)
    } else if p > agent.a + TIE_TOL {
        (0.0, 0.0)
    } else {
        (0.0, d)
    }
}

/// Range of optimal supply at price `p`.
fn supply_range(agent: &AgentType, p: f64) -> (f64, f64) {
    let s = agent.cap_supply;
    if agent.e > 0.0 {
        let q = ((p - agent.c) / agent.e).clamp(0.0, s);
        (q, q)
    } else if p > agent.c + TIE_TOL {
        (s, s)
    } else if p < agent.c - TIE_TOL {
        (0.0, 0.0)
    } else {
        (0.0, s)
    }
}

/// Split `target` across one side: agents above their lower bound share the
/// slack in proportion to it.
fn ration(ranges: &[(f64, f64)], target: f64) -> Vec<f64> {
    let lo: f64 = ranges.iter().map(|r| r.0).sum();
    let hi: f64 = ranges.iter().map(|r| r.1).sum();
    if target <= lo {
        if lo <= 0.0 {
            return vec![0.0; ranges.len()];
        }
        let f = target / lo;
        ranges.iter().map(|r| r.0 * f).collect()
    } else {
        let slack = hi - lo;
        let theta = if slack > 0.0 {
            ((target - lo) / slack).clamp(0.0, 1.0)
        } else {
            0.0
        };
        ranges.iter().map(|r| r.0 + theta * (r.1 - r.0)).collect()
    }
}

/// Spread per-agent totals over seller→buyer pairs in proportion to each
/// side's quantity. Welfare depends only on the totals.
fn spread(econ: &EconomyInstance, seller_q: &[f64], buyer_q: &[f64], total: f64) -> Allocation {
    let mut alloc = Allocation::zeros(econ);
    if total > 0.0 {
        for (i, &sq) in seller_q.iter().enumerate() {
            for (j, &bq) in buyer_q.iter().enumerate() {
                alloc.x[i][j] = sq * bq / total;
            }
        }
    }
    alloc.quantized()
}

/// Welfare-maximizing allocation of the (reported) economy.
pub fn clear_exact(econ: &EconomyInstance) -> ClearingResult {
    let buyers = econ.buyers();
    let sellers = econ.sellers();
    let agents = econ.agents();
    if buyers.is_empty() || sellers.is_empty() {
        return ClearingResult {
            allocation: Allocation::zeros(econ),
            shadow_price: 0.0,
            welfare_star: 0.0,
            iterations: 0,
        };
    }

    let ranges_at = |p: f64| {
        let d: Vec<(f64, f64)> = buyers.iter().map(|&k| demand_range(&agents[k], p)).collect();
        let s: Vec<(f64, f64)> = sellers.iter().map(|&k| supply_range(&agents[k], p)).collect();
        (d, s)
    };
    let sum = |r: &[(f64, f64)]| -> (f64, f64) {
        r.iter().fold((0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1))
    };

    let upper = buyers
        .iter()
        .map(|&k| agents[k].a)
        .chain(sellers.iter().map(|&k| agents[k].c))
        .fold(0.0f64, f64::max)
        + 1.0;
    let (mut lo, mut hi) = (0.0f64, upper);
    // Price 0 is probed first: saturated buyers may clear there.
    let mut price = 0.0;
    let mut iterations = 0;
    while iterations < 400 {
        iterations += 1;
        let (d, s) = ranges_at(price);
        let (dl, dh) = sum(&d);
        let (sl, sh) = sum(&s);
        if dl - sh > EXCESS_TOL {
            lo = price;
        } else if dh - sl < -EXCESS_TOL {
            hi = price;
        } else {
            break;
        }
        if hi - lo <= f64::EPSILON * upper {
            break;
        }
        price = 0.5 * (lo + hi);
    }

    let (d, s) = ranges_at(price);
    let (_, dh) = sum(&d);
    let (_, sh) = sum(&s);
    let total = dh.min(sh);
    let buyer_q = ration(&d, total);
    let seller_q = ration(&s, total);
    let allocation = spread(econ, &seller_q, &buyer_q, total);
    let welfare_star = welfare_of_totals(econ, &allocation.agent_totals(econ.len()));
    ClearingResult {
        allocation,
        shadow_price: price,
        welfare_star,
        iterations,
    }
}

/// α-approximate allocation by scaling the exact optimum.
pub fn clear_alpha(econ: &EconomyInstance, params: &ApproxParams) -> Result<ClearingResult> {
    params.validate()?;
    let exact = clear_exact(econ);
    if params.alpha == 1.0 {
        return Ok(exact);
    }
    if exact.welfare_star <= 0.0 {
        return Ok(ClearingResult {
            allocation: Allocation::zeros(econ),
            shadow_price: exact.shadow_price,
            welfare_star: 0.0,
            iterations: exact.iterations,
        });
    }

    let totals = exact.allocation.agent_totals(econ.len());
    let scaled_welfare = |s: f64| {
        let t: Vec<f64> = totals.iter().map(|q| q * s).collect();
        welfare_of_totals(econ, &t)
    };
    let target = params.alpha * exact.welfare_star;
    let tol = params.scale_tolerance * exact.welfare_star;
    // Invariant: W(lo) < target <= W(hi).
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut iterations = exact.iterations;
    for _ in 0..params.max_bisect_iters {
        iterations += 1;
        if scaled_welfare(hi) - target <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if scaled_welfare(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let allocation = exact.allocation.scaled(hi).quantized();
    let welfare_star = welfare_of_totals(econ, &allocation.agent_totals(econ.len()));
    Ok(ClearingResult {
        allocation,
        shadow_price: exact.shadow_price,
        welfare_star,
        iterations,
    })
}

/// α-approximate clearing of the economy with agent `excluded` removed.
pub fn allocation_without(
    econ: &EconomyInstance,
    excluded: usize,
    params: &ApproxParams,
) -> Result<ClearingResult> {
    let reduced = econ.without(excluded)?;
    clear_alpha(&reduced, params)
}

/// Whether an agent index participates in a clearing.
pub fn is_active(econ: &EconomyInstance, k: usize) -> bool {
    econ.side(k) != Side::Null
}
