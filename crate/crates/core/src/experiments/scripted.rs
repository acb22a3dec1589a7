//! Hand-written bidders for metric checks and baselines.

use serde::{Deserialize, Serialize};

use crate::enforcement::true_marginal;
use crate::grid::{BidAction, GridEnv};
use crate::market::Side;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScriptedPolicy {
    /// Full quantity on the natural side at the true marginal.
    Truthful,
    /// As `Truthful` with the price shifted by a constant.
    Offset(f64),
    /// Never trades.
    Silent,
}

impl ScriptedPolicy {
    pub fn bids(policies: &[ScriptedPolicy], env: &GridEnv) -> Vec<BidAction> {
        let types = env.true_types();
        let sides = env.natural_sides();
        let q_max = env.bounds.q_max;
        policies
            .iter()
            .zip(types.iter().zip(&sides))
            .map(|(p, (t, side))| {
                let q = match side {
                    Side::Seller => -q_max,
                    _ => q_max,
                };
                let v = true_marginal(t, q);
                match p {
                    ScriptedPolicy::Truthful => BidAction::new(v, q),
                    ScriptedPolicy::Offset(d) => BidAction::new(v + d, q),
                    ScriptedPolicy::Silent => BidAction::new(true_marginal(t, 0.0), 0.0),
                }
            })
            .collect()
    }
}
