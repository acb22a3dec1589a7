//! Evaluation metrics over frozen-policy traces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SlotRecord;

/// W* below this counts as a no-trade slot and is left out of distortions.
pub const WELFARE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub truth_frac_eps: f64,
    pub misreport_rate: f64,
    pub welfare_distortion: Option<f64>,
    pub price_distortion: Option<f64>,
    pub mean_reward: f64,
    pub convergence_episode: Option<usize>,
}

fn deviations(traces: &[SlotRecord]) -> impl Iterator<Item = (f64, f64)> + '_ {
    traces.iter().flat_map(|r| {
        r.bids
            .iter()
            .zip(&r.true_marginals)
            .zip(&r.quantities)
            .map(|((b, v), q)| ((b.price - v).abs(), *q))
    })
}

/// Share of (agent, slot) bids priced within ε of the true marginal.
pub fn metric_truth_frac(traces: &[SlotRecord], eps: f64) -> Result<f64> {
    let (mut ok, mut n) = (0usize, 0usize);
    for (dev, _) in deviations(traces) {
        n += 1;
        if dev <= eps {
            ok += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("evaluation traces"));
    }
    Ok(ok as f64 / n as f64)
}

/// Share of bids that cleared a positive quantity while deviating by more
/// than ε. Zero when nothing trades.
pub fn metric_misreport_rate(traces: &[SlotRecord], eps: f64) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::Empty("evaluation traces"));
    }
    let (mut bad, mut n) = (0usize, 0usize);
    for (dev, q) in deviations(traces) {
        if q.abs() > 0.0 {
            n += 1;
            if dev > eps {
                bad += 1;
            }
        }
    }
    Ok(if n == 0 { 0.0 } else { bad as f64 / n as f64 })
}

/// Mean of `(W* − W)/W*` over slots with gains from trade, clamped to
/// [0, 1]. `None` if no slot had any.
pub fn metric_welfare_distortion(traces: &[SlotRecord]) -> Option<f64> {
    let vals: Vec<f64> = traces
        .iter()
        .filter(|r| r.welfare_star > WELFARE_FLOOR)
        .map(|r| ((r.welfare_star - r.welfare_true) / r.welfare_star).clamp(0.0, 1.0))
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Mean of `|λ − λ*|/λ*` over slots with gains from trade, clamped to [0, 1].
pub fn metric_price_distortion(traces: &[SlotRecord]) -> Option<f64> {
    let vals: Vec<f64> = traces
        .iter()
        .filter(|r| r.welfare_star > WELFARE_FLOOR && r.price_star > WELFARE_FLOOR)
        .map(|r| ((r.clearing_price - r.price_star).abs() / r.price_star).clamp(0.0, 1.0))
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

pub fn mean_reward(traces: &[SlotRecord]) -> f64 {
    let n: usize = traces.iter().map(|r| r.rewards.len()).sum();
    if n == 0 {
        return 0.0;
    }
    traces.iter().flat_map(|r| r.rewards.iter()).sum::<f64>() / n as f64
}

/// A point of a training curve: TruthFrac of a frozen snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub truth_frac: f64,
}

/// First episode from which TruthFrac stays at or above `level` for
/// `sustain` consecutive checkpoints.
pub fn convergence_episode(curve: &[CurvePoint], level: f64, sustain: usize) -> Option<usize> {
    let mut run = 0;
    for (i, p) in curve.iter().enumerate() {
        if p.truth_frac >= level {
            run += 1;
            if run >= sustain {
                return Some(curve[i + 1 - sustain].episode);
            }
        } else {
            run = 0;
        }
    }
    None
}

pub fn metrics(traces: &[SlotRecord], eps: f64, convergence: Option<usize>) -> Result<MetricsRecord> {
    Ok(MetricsRecord {
        truth_frac_eps: metric_truth_frac(traces, eps)?,
        misreport_rate: metric_misreport_rate(traces, eps)?,
        welfare_distortion: metric_welfare_distortion(traces),
        price_distortion: metric_price_distortion(traces),
        mean_reward: mean_reward(traces),
        convergence_episode: convergence,
    })
}
