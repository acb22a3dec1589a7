//! Clarke-pivot payments on top of the approximate allocator.
//!
//! A buyer pays `W₋ⱼ − (W(x) − vⱼ(xⱼ))` and a seller receives
//! `(W(x) + cᵢ(xᵢ)) − W₋ᵢ`, every term evaluated at reported types. The pivot
//! welfare `W₋ₖ` comes from the same approximate allocator by default.

use serde::{Deserialize, Serialize};

use crate::allocator::{allocation_without, clear_alpha, clear_exact, ApproxParams};
use crate::error::{Error, Result};
use crate::market::{EconomyInstance, MarketOutcome, Side};

pub const OUTCOME_SCHEMA: &str = "outcome.v1";

/// Which allocator computes the pivot welfare `W₋ₖ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PivotRule {
    #[default]
    Approx,
    Exact,
}

/// Payments plus the recorded (never redistributed) budget imbalance.
#[derive(Debug, Clone, PartialEq)]
pub struct PaymentVector {
    pub p: Vec<f64>,
    pub budget_imbalance: f64,
}

fn pivot_welfare(
    econ: &EconomyInstance,
    k: usize,
    params: &ApproxParams,
    pivot: PivotRule,
) -> Result<f64> {
    Ok(match pivot {
        PivotRule::Approx => allocation_without(econ, k, params)?.welfare_star,
        PivotRule::Exact => clear_exact(&econ.without(k)?).welfare_star,
    })
}

/// Clear a reported economy and settle payments with the default pivot.
pub fn settle(econ_reported: &EconomyInstance, params: &ApproxParams) -> Result<MarketOutcome> {
    settle_with(econ_reported, params, PivotRule::Approx)
}

pub fn settle_with(
    econ: &EconomyInstance,
    params: &ApproxParams,
    pivot: PivotRule,
) -> Result<MarketOutcome> {
    let cleared = clear_alpha(econ, params)?;
    let n = econ.len();
    let quantities = cleared.allocation.agent_totals(n);
    let w = cleared.welfare_star;

    let mut payments = vec![0.0; n];
    let mut utilities = vec![0.0; n];
    for k in 0..n {
        let agent = &econ.agents()[k];
        match econ.side(k) {
            Side::Null => {}
            Side::Buyer => {
                let value = agent.value_at(quantities[k]);
                let p = pivot_welfare(econ, k, params, pivot)? - (w - value);
                payments[k] = p;
                utilities[k] = value - p;
            }
            Side::Seller => {
                let c = agent.cost_at(quantities[k]);
                let p = (w + c) - pivot_welfare(econ, k, params, pivot)?;
                payments[k] = p;
                utilities[k] = p - c;
            }
        }
    }
    let budget_imbalance = (0..n)
        .map(|k| match econ.side(k) {
            Side::Buyer => payments[k],
            Side::Seller => -payments[k],
            Side::Null => 0.0,
        })
        .sum();

    Ok(MarketOutcome {
        allocation: cleared.allocation,
        sides: econ.sides().to_vec(),
        quantities,
        payments,
        welfare: w,
        utilities,
        clearing_price: cleared.shadow_price,
        budget_imbalance,
    })
}

impl MarketOutcome {
    pub fn payment_vector(&self) -> PaymentVector {
        PaymentVector {
            p: self.payments.clone(),
            budget_imbalance: self.budget_imbalance,
        }
    }

    /// Signed traded quantity per agent: bought energy is positive.
    pub fn net_quantities(&self) -> Vec<f64> {
        self.quantities
            .iter()
            .zip(&self.sides)
            .map(|(&q, side)| match side {
                Side::Buyer => q,
                Side::Seller => -q,
                Side::Null => 0.0,
            })
            .collect()
    }

    pub fn record(&self) -> OutcomeRecord {
        OutcomeRecord {
            schema: OUTCOME_SCHEMA.to_string(),
            sides: self.sides.clone(),
            quantities: self.quantities.clone(),
            payments: self.payments.clone(),
            utilities: self.utilities.clone(),
            welfare: self.welfare,
            clearing_price: self.clearing_price,
            budget_imbalance: self.budget_imbalance,
        }
    }
}

/// Serialized form of a [`MarketOutcome`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeRecord {
    pub schema: String,
    pub sides: Vec<Side>,
    pub quantities: Vec<f64>,
    pub payments: Vec<f64>,
    pub utilities: Vec<f64>,
    pub welfare: f64,
    pub clearing_price: f64,
    pub budget_imbalance: f64,
}

/// Utility of agent `k` under its true type for an outcome cleared on
/// (possibly misreported) bids. The side is the one the agent bid on.
pub fn utility_at_truth(
    econ_true: &EconomyInstance,
    outcome: &MarketOutcome,
    k: usize,
) -> Result<f64> {
    let truth = econ_true.agent(k)?;
    truth_utility_of(truth, outcome, k)
}

/// [`utility_at_truth`] for a bare true type, e.g. a prosumer whose side is
/// only fixed by its bid.
pub fn truth_utility_of(
    truth: &crate::market::AgentType,
    outcome: &MarketOutcome,
    k: usize,
) -> Result<f64> {
    let len = outcome.sides.len();
    let side = *outcome
        .sides
        .get(k)
        .ok_or(Error::IndexOutOfRange { index: k, len })?;
    let q = outcome.quantities[k];
    Ok(match side {
        Side::Buyer => truth.value_at(q) - outcome.payments[k],
        Side::Seller => outcome.payments[k] - truth.cost_at(q),
        Side::Null => 0.0,
    })
}
