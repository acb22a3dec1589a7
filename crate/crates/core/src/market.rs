//! The economy: agents, feasible allocations, welfare and quasi-linear utility.
//!
//! Buyers hold a quadratic valuation truncated at its peak,
//! `v(q) = a·m − b·m²/2` with `m = min(q, a/b)`, and sellers hold a convex
//! quadratic cost `c(q) = c·q + e·q²/2`. Welfare of an allocation is total
//! buyer value minus total seller cost, evaluated on per-agent totals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ECONOMY_SCHEMA: &str = "economy.v1";

/// Relative slack allowed on capacity constraints.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Buyer,
    Seller,
    Prosumer,
}

/// Which side of the market an agent takes in one clearing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buyer,
    Seller,
    Null,
}

/// Private type of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentType {
    pub id: usize,
    pub role_hint: Role,
    /// Marginal-value intercept.
    pub a: f64,
    /// Value curvature.
    pub b: f64,
    /// Marginal-cost intercept.
    pub c: f64,
    /// Cost curvature.
    pub e: f64,
    pub cap_demand: f64,
    pub cap_supply: f64,
}

impl AgentType {
    pub fn buyer(id: usize, a: f64, b: f64, cap_demand: f64) -> Self {
        Self {
            id,
            role_hint: Role::Buyer,
            a,
            b,
            c: 0.0,
            e: 0.0,
            cap_demand,
            cap_supply: 0.0,
        }
    }

    pub fn seller(id: usize, c: f64, e: f64, cap_supply: f64) -> Self {
        Self {
            id,
            role_hint: Role::Seller,
            a: 0.0,
            b: 0.0,
            c,
            e,
            cap_demand: 0.0,
            cap_supply,
        }
    }

    /// An agent with no capacity on either side.
    pub fn null(id: usize) -> Self {
        Self {
            id,
            role_hint: Role::Prosumer,
            a: 0.0,
            b: 0.0,
            c: 0.0,
            e: 0.0,
            cap_demand: 0.0,
            cap_supply: 0.0,
        }
    }

    /// Side this agent takes, or `None` for a prosumer with capacity on both
    /// sides (its side is only fixed once it bids).
    pub fn side(&self) -> Option<Side> {
        let buys = self.cap_demand > 0.0;
        let sells = self.cap_supply > 0.0;
        match self.role_hint {
            Role::Buyer if buys => Some(Side::Buyer),
            Role::Seller if sells => Some(Side::Seller),
            Role::Buyer | Role::Seller => Some(Side::Null),
            Role::Prosumer => match (buys, sells) {
                (true, false) => Some(Side::Buyer),
                (false, true) => Some(Side::Seller),
                (false, false) => Some(Side::Null),
                (true, true) => None,
            },
        }
    }

    fn validate(&self) -> Result<()> {
        let fields = [
            ("a", self.a),
            ("b", self.b),
            ("c", self.c),
            ("e", self.e),
            ("cap_demand", self.cap_demand),
            ("cap_supply", self.cap_supply),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidEconomy(format!(
                    "agent {}: {name} must be finite and >= 0, got {v}",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Valuation without the domain check. Callers guarantee `q >= 0`.
    #[inline]
    pub(crate) fn value_at(&self, q: f64) -> f64 {
        if self.b > 0.0 {
            let m = q.min(self.a / self.b);
            self.a * m - 0.5 * self.b * m * m
        } else {
            self.a * q
        }
    }

    #[inline]
    pub(crate) fn cost_at(&self, q: f64) -> f64 {
        self.c * q + 0.5 * self.e * q * q
    }
}

/// Buyer valuation `v(q)`.
pub fn valuation(agent: &AgentType, q: f64) -> Result<f64> {
    if !(q >= 0.0) {
        return Err(Error::Domain(format!("valuation quantity must be >= 0, got {q}")));
    }
    Ok(agent.value_at(q))
}

/// Seller cost `c(q)`.
pub fn cost(agent: &AgentType, q: f64) -> Result<f64> {
    if !(q >= 0.0) {
        return Err(Error::Domain(format!("cost quantity must be >= 0, got {q}")));
    }
    Ok(agent.cost_at(q))
}

/// Private types of every agent for one slot, with each agent's side resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct EconomyInstance {
    agents: Vec<AgentType>,
    sides: Vec<Side>,
    pub slot: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EconomyDoc {
    schema: String,
    slot: usize,
    agents: Vec<AgentType>,
}

impl EconomyInstance {
    pub fn new(agents: Vec<AgentType>, slot: usize) -> Result<Self> {
        let mut ids: Vec<usize> = agents.iter().map(|a| a.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidEconomy("agent ids must be unique".into()));
        }
        let mut sides = Vec::with_capacity(agents.len());
        for agent in &agents {
            agent.validate()?;
            let side = agent.side().ok_or_else(|| {
                Error::InvalidEconomy(format!(
                    "prosumer {} has capacity on both sides; its side must be fixed by a bid",
                    agent.id
                ))
            })?;
            sides.push(side);
        }
        Ok(Self {
            agents,
            sides,
            slot,
        })
    }

    pub fn agents(&self) -> &[AgentType] {
        &self.agents
    }

    pub fn agent(&self, k: usize) -> Result<&AgentType> {
        self.agents.get(k).ok_or(Error::IndexOutOfRange {
            index: k,
            len: self.agents.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn sides(&self) -> &[Side] {
        &self.sides
    }

    pub fn side(&self, k: usize) -> Side {
        self.sides[k]
    }

    pub fn buyers(&self) -> Vec<usize> {
        self.indices_on(Side::Buyer)
    }

    pub fn sellers(&self) -> Vec<usize> {
        self.indices_on(Side::Seller)
    }

    fn indices_on(&self, side: Side) -> Vec<usize> {
        (0..self.agents.len())
            .filter(|&k| self.sides[k] == side)
            .collect()
    }

    /// True when at least one buyer and one seller can trade.
    pub fn has_counterparties(&self) -> bool {
        self.sides.contains(&Side::Buyer) && self.sides.contains(&Side::Seller)
    }

    /// Same economy with agent `k` replaced by a capacity-free agent.
    /// Indexing is preserved so allocations stay comparable.
    pub fn without(&self, k: usize) -> Result<Self> {
        let mut agents = self.agents.clone();
        let id = self.agent(k)?.id;
        agents[k] = AgentType::null(id);
        let mut sides = self.sides.clone();
        sides[k] = Side::Null;
        Ok(Self {
            agents,
            sides,
            slot: self.slot,
        })
    }

    /// Same economy with agent `k`'s type replaced.
    pub fn with_agent(&self, k: usize, agent: AgentType) -> Result<Self> {
        self.agent(k)?;
        let mut agents = self.agents.clone();
        agents[k] = agent;
        Self::new(agents, self.slot)
    }

    /// Capacity of agent `k` on its own side.
    pub fn cap(&self, k: usize) -> f64 {
        match self.sides[k] {
            Side::Buyer => self.agents[k].cap_demand,
            Side::Seller => self.agents[k].cap_supply,
            Side::Null => 0.0,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = EconomyDoc {
            schema: ECONOMY_SCHEMA.to_string(),
            slot: self.slot,
            agents: self.agents.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: EconomyDoc = serde_json::from_str(s)?;
        if doc.schema != ECONOMY_SCHEMA {
            return Err(Error::Schema {
                expected: ECONOMY_SCHEMA.into(),
                found: doc.schema,
            });
        }
        Self::new(doc.agents, doc.slot)
    }
}

/// Clearing floors every traded quantity to a multiple of this. Sums of such
/// numbers below 2¹³ are exact in `f64`, so bought and sold totals agree
/// bit for bit whatever the summation order.
pub const QUANTUM: f64 = 1.0 / (1u64 << 40) as f64;

/// Seller→buyer quantities `x[i][j]`, with the agent index of every row and
/// column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub sellers: Vec<usize>,
    pub buyers: Vec<usize>,
    pub x: Vec<Vec<f64>>,
}

impl Allocation {
    pub fn zeros(econ: &EconomyInstance) -> Self {
        let sellers = econ.sellers();
        let buyers = econ.buyers();
        let x = vec![vec![0.0; buyers.len()]; sellers.len()];
        Self { sellers, buyers, x }
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.x[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> f64 {
        self.x.iter().map(|row| row[j]).sum()
    }

    /// Total traded quantity per agent index (0 for agents not on a side).
    pub fn agent_totals(&self, n_agents: usize) -> Vec<f64> {
        let mut totals = vec![0.0; n_agents];
        for (i, &k) in self.sellers.iter().enumerate() {
            totals[k] = self.row_sum(i);
        }
        for (j, &k) in self.buyers.iter().enumerate() {
            totals[k] = self.col_sum(j);
        }
        totals
    }

    pub fn total_sold(&self) -> f64 {
        (0..self.sellers.len()).map(|i| self.row_sum(i)).sum()
    }

    pub fn total_bought(&self) -> f64 {
        (0..self.buyers.len()).map(|j| self.col_sum(j)).sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            sellers: self.sellers.clone(),
            buyers: self.buyers.clone(),
            x: self
                .x
                .iter()
                .map(|row| row.iter().map(|v| v * s).collect())
                .collect(),
        }
    }

    /// Floor every entry to a multiple of [`QUANTUM`].
    pub fn quantized(mut self) -> Self {
        for v in self.x.iter_mut().flatten() {
            *v = (*v / QUANTUM).floor() * QUANTUM;
        }
        self
    }

    pub fn is_zero(&self) -> bool {
        self.x.iter().flatten().all(|&v| v == 0.0)
    }

    /// Check non-negativity and both capacity constraints.
    pub fn check_feasible(&self, econ: &EconomyInstance) -> Result<()> {
        if self.sellers != econ.sellers() || self.buyers != econ.buyers() {
            return Err(Error::Infeasible(
                "allocation sides do not match the economy".into(),
            ));
        }
        for (i, row) in self.x.iter().enumerate() {
            if row.len() != self.buyers.len() {
                return Err(Error::Infeasible(format!("row {i} has wrong length")));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Infeasible(format!(
                        "x[{i}][{j}] = {v} must be finite and >= 0"
                    )));
                }
            }
        }
        for (i, &k) in self.sellers.iter().enumerate() {
            let cap = econ.agents()[k].cap_supply;
            let sold = self.row_sum(i);
            if sold > cap + FEASIBILITY_TOL * cap.max(1.0) {
                return Err(Error::Infeasible(format!(
                    "supply cap of seller {k}: sold {sold} > s = {cap}"
                )));
            }
        }
        for (j, &k) in self.buyers.iter().enumerate() {
            let cap = econ.agents()[k].cap_demand;
            let bought = self.col_sum(j);
            if bought > cap + FEASIBILITY_TOL * cap.max(1.0) {
                return Err(Error::Infeasible(format!(
                    "demand cap of buyer {k}: bought {bought} > d = {cap}"
                )));
            }
        }
        Ok(())
    }
}

/// Welfare of per-agent totals: buyer value minus seller cost.
pub(crate) fn welfare_of_totals(econ: &EconomyInstance, totals: &[f64]) -> f64 {
    let mut w = 0.0;
    for (k, agent) in econ.agents().iter().enumerate() {
        match econ.side(k) {
            Side::Buyer => w += agent.value_at(totals[k]),
            Side::Seller => w -= agent.cost_at(totals[k]),
            Side::Null => {}
        }
    }
    w
}

/// Social welfare of a feasible allocation.
pub fn welfare(econ: &EconomyInstance, alloc: &Allocation) -> Result<f64> {
    alloc.check_feasible(econ)?;
    Ok(welfare_of_totals(econ, &alloc.agent_totals(econ.len())))
}

/// Allocation, payments and utilities of one clearing.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketOutcome {
    pub allocation: Allocation,
    pub sides: Vec<Side>,
    /// Traded quantity per agent.
    pub quantities: Vec<f64>,
    /// Buyers pay a positive amount, sellers receive a positive amount.
    pub payments: Vec<f64>,
    pub welfare: f64,
    /// Utilities at the reported types.
    pub utilities: Vec<f64>,
    pub clearing_price: f64,
    /// Buyer payments minus seller receipts.
    pub budget_imbalance: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bilateral() -> EconomyInstance {
        EconomyInstance::new(
            vec![AgentType::buyer(0, 10.0, 1.0, 5.0), AgentType::seller(1, 2.0, 1.0, 5.0)],
            0,
        )
        .unwrap()
    }

    fn single(econ: &EconomyInstance, q: f64) -> Allocation {
        let mut x = Allocation::zeros(econ);
        x.x[0][0] = q;
        x
    }

    // Straight-line symbolic evaluations of the quadratics.
    #[test]
    fn valuation_examples() {
        let buyer = AgentType::buyer(0, 10.0, 1.0, 20.0);
        assert_eq!(valuation(&buyer, 4.0).unwrap(), 10.0 * 4.0 - 16.0 / 2.0);
        assert_eq!(valuation(&buyer, 0.0).unwrap(), 0.0);
        // plateau a²/(2b)
        assert_eq!(valuation(&buyer, 20.0).unwrap(), 100.0 / 2.0);
        assert!(valuation(&buyer, -1.0).is_err());
    }

    #[test]
    fn cost_examples() {
        let seller = AgentType::seller(0, 2.0, 1.0, 5.0);
        assert_eq!(cost(&seller, 4.0).unwrap(), 2.0 * 4.0 + 16.0 / 2.0);
        assert_eq!(cost(&seller, 0.0).unwrap(), 0.0);
        let free = AgentType::seller(1, 0.0, 0.0, 9.0);
        assert_eq!(cost(&free, 7.0).unwrap(), 0.0);
        assert!(cost(&seller, -0.5).is_err());
    }

    #[test]
    fn welfare_examples() {
        let econ = bilateral();
        assert_eq!(welfare(&econ, &single(&econ, 4.0)).unwrap(), 16.0);
        assert_eq!(welfare(&econ, &single(&econ, 5.0)).unwrap(), 15.0);
        assert_eq!(welfare(&econ, &Allocation::zeros(&econ)).unwrap(), 0.0);
    }

    #[test]
    fn welfare_matches_grid_oracle() {
        // Grid search over q in {0, 0.01, ..., 5}; W(q) = 10q - q²/2 - 2q - q²/2.
        let econ = bilateral();
        let (mut best_q, mut best_w) = (0.0, f64::NEG_INFINITY);
        for step in 0..=500 {
            let q = step as f64 * 0.01;
            let w = 10.0 * q - q * q / 2.0 - (2.0 * q + q * q / 2.0);
            if w > best_w {
                best_w = w;
                best_q = q;
            }
        }
        assert!((best_q - 4.0).abs() < 1e-9);
        assert!((welfare(&econ, &single(&econ, best_q)).unwrap() - best_w).abs() < 1e-9);
    }

    #[test]
    fn infeasible_allocation_names_constraint() {
        let econ = bilateral();
        let err = welfare(&econ, &single(&econ, 6.0)).unwrap_err().to_string();
        assert!(err.contains("cap"), "{err}");
        let err = welfare(&econ, &single(&econ, -1.0)).unwrap_err().to_string();
        assert!(err.contains(">= 0"), "{err}");
    }

    #[test]
    fn economy_validation() {
        let dup = EconomyInstance::new(
            vec![AgentType::buyer(0, 1.0, 1.0, 1.0), AgentType::seller(0, 1.0, 1.0, 1.0)],
            0,
        );
        assert!(dup.is_err());
        let mut both = AgentType::buyer(0, 1.0, 1.0, 1.0);
        both.role_hint = Role::Prosumer;
        both.cap_supply = 1.0;
        assert!(EconomyInstance::new(vec![both], 0).is_err());
        let neg = AgentType::buyer(0, 1.0, -1.0, 1.0);
        assert!(EconomyInstance::new(vec![neg], 0).is_err());
    }

    #[test]
    fn json_schema_roundtrip_and_rejects_unknown_keys() {
        let econ = bilateral();
        let text = econ.to_json().unwrap();
        assert!(text.contains("\"economy.v1\""));
        assert!(text.contains("\"cap_demand\""));
        assert_eq!(EconomyInstance::from_json(&text).unwrap(), econ);
        let bad = text.replace("\"cap_supply\"", "\"capacity\"");
        assert!(EconomyInstance::from_json(&bad).is_err());
        let wrong = text.replace("economy.v1", "economy.v0");
        assert!(matches!(
            EconomyInstance::from_json(&wrong),
            Err(Error::Schema { .. })
        ));
    }

    fn arb_economy() -> impl Strategy<Value = EconomyInstance> {
        let agent = (0usize..2, 0.0..15.0f64, 0.0..3.0f64, 0.0..5.0f64);
        proptest::collection::vec(agent, 2..5).prop_map(|raw| {
            let agents = raw
                .into_iter()
                .enumerate()
                .map(|(id, (kind, icpt, curv, cap))| {
                    if kind == 0 {
                        AgentType::buyer(id, icpt, curv, cap)
                    } else {
                        AgentType::seller(id, icpt, curv, cap)
                    }
                })
                .collect();
            EconomyInstance::new(agents, 0).unwrap()
        })
    }

    fn arb_feasible(econ: &EconomyInstance, fracs: &[f64]) -> Allocation {
        // Split each seller's capacity over buyers, then rescale columns to
        // respect demand caps.
        let mut x = Allocation::zeros(econ);
        let nb = x.buyers.len().max(1) as f64;
        let mut f = fracs.iter().cycle();
        for (i, &s) in x.sellers.clone().iter().enumerate() {
            for j in 0..x.buyers.len() {
                x.x[i][j] = econ.agents()[s].cap_supply * f.next().unwrap() / nb;
            }
        }
        for (j, &b) in x.buyers.clone().iter().enumerate() {
            let col = x.col_sum(j);
            let cap = econ.agents()[b].cap_demand;
            if col > cap {
                for row in x.x.iter_mut() {
                    row[j] *= cap / col;
                }
            }
        }
        x
    }

    proptest! {
        #[test]
        fn zero_allocation_has_zero_welfare(econ in arb_economy()) {
            prop_assert_eq!(welfare(&econ, &Allocation::zeros(&econ)).unwrap(), 0.0);
        }

        #[test]
        fn welfare_is_midpoint_concave_along_rays(
            econ in arb_economy(),
            fracs in proptest::collection::vec(0.0..1.0f64, 16),
        ) {
            let x = arb_feasible(&econ, &fracs);
            let w = |t: f64| welfare(&econ, &x.scaled(t)).unwrap();
            for k in 0..20 {
                let t0 = k as f64 / 20.0;
                let t1 = (k + 1) as f64 / 20.0;
                let mid = 0.5 * (t0 + t1);
                prop_assert!(w(mid) >= 0.5 * (w(t0) + w(t1)) - 1e-9);
            }
        }

        #[test]
        fn contribution_is_linear_in_intercept(
            a in 0.0..20.0f64, b in 0.0..3.0f64, q in 0.0..5.0f64, scale in 0.0..4.0f64,
        ) {
            // Linear-in-intercept at fixed curvature and quantity, on the
            // untruncated branch and for costs.
            let buyer = AgentType::buyer(0, a, 0.0, 5.0);
            let scaled = AgentType::buyer(0, a * scale, 0.0, 5.0);
            prop_assert!((valuation(&scaled, q).unwrap() - scale * valuation(&buyer, q).unwrap()).abs() < 1e-9);
            let seller = AgentType::seller(0, a, b, 5.0);
            let scaled = AgentType::seller(0, a * scale, b, 5.0);
            let lhs = cost(&scaled, q).unwrap() - cost(&seller, q).unwrap();
            prop_assert!((lhs - (scale - 1.0) * a * q).abs() < 1e-9);
        }
    }
}
