//! Prosumer grid environment.
//!
//! Each slot runs observe → bid → settle → detect → reward → physics. Loads
//! and generation are a baseline plus Gaussian noise, batteries follow
//! `s' = clip(s + η·(g − d + q)·Δt, 0, S_max)`, and true types drift with the
//! predicted net load so the value of energy depends on the local state.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::allocator::clear_exact;
use crate::enforcement::{detect, penalized_utility, true_marginal, DetectionRecord, MechanismConfig};
use crate::error::{Error, Result};
use crate::market::{AgentType, EconomyInstance, MarketOutcome, Role, Side};
use crate::mechanism::{settle_with, truth_utility_of};
use crate::rng::{Purpose, Streams, ALL_AGENTS};

pub const EPISODE_SCHEMA: &str = "episode.v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BidBounds {
    pub p_min: f64,
    pub p_max: f64,
    pub q_max: f64,
}

impl Default for BidBounds {
    fn default() -> Self {
        Self {
            p_min: 0.0,
            p_max: 20.0,
            q_max: 5.0,
        }
    }
}

/// One agent's bid: unit price and signed quantity (positive buys).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BidAction {
    pub price: f64,
    pub quantity: f64,
}

pub type BidProfile = Vec<BidAction>;

impl BidAction {
    pub fn new(price: f64, quantity: f64) -> Self {
        Self { price, quantity }
    }

    /// Clamp into the bid box. NaN stays NaN so the slot can reject it.
    pub fn clamped(self, bounds: &BidBounds) -> Self {
        Self {
            price: self.price.clamp(bounds.p_min, bounds.p_max),
            quantity: self.quantity.clamp(-bounds.q_max, bounds.q_max),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.price.is_finite() && self.quantity.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicalParams {
    /// Constant baseline load per agent.
    pub baseline_load: Vec<f64>,
    /// Peak of the half-sine solar profile per agent.
    pub solar_peak: Vec<f64>,
    /// Fraction of the episode at which generation starts and stops.
    pub daylight: (f64, f64),
    pub load_noise_sigma: f64,
    pub gen_noise_sigma: f64,
    /// AR(1) coefficient of the load/generation noise; 0 means i.i.d.
    pub ar1_coeff: f64,
    pub soc_capacity: Vec<f64>,
    pub initial_soc_fraction: f64,
    pub charge_efficiency: f64,
    /// Slot length in hours.
    pub slot_hours: f64,
    pub slots_per_episode: usize,
    /// Length of the net-load history in observations.
    pub history_len: usize,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self::uniform(6)
    }
}

impl PhysicalParams {
    /// Half the agents are net consumers without panels, half own large
    /// panels.
    pub fn uniform(n_agents: usize) -> Self {
        let half = n_agents / 2;
        Self {
            baseline_load: (0..n_agents).map(|k| if k < half { 2.5 } else { 1.0 }).collect(),
            solar_peak: (0..n_agents).map(|k| if k < half { 0.0 } else { 4.0 }).collect(),
            daylight: (0.25, 0.75),
            load_noise_sigma: 0.2,
            gen_noise_sigma: 0.3,
            ar1_coeff: 0.0,
            soc_capacity: vec![10.0; n_agents],
            initial_soc_fraction: 0.5,
            charge_efficiency: 0.95,
            slot_hours: 0.25,
            slots_per_episode: 24,
            history_len: 4,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.baseline_load.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_agents();
        if self.solar_peak.len() != n || self.soc_capacity.len() != n {
            return Err(Error::Config(
                "baseline_load, solar_peak and soc_capacity need one entry per agent".into(),
            ));
        }
        if self.soc_capacity.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("soc_capacity must be > 0".into()));
        }
        if !(self.charge_efficiency > 0.0 && self.charge_efficiency <= 1.0) {
            return Err(Error::Config("charge_efficiency must lie in (0, 1]".into()));
        }
        if self.slots_per_episode == 0 {
            return Err(Error::Config("slots_per_episode must be >= 1".into()));
        }
        if !(self.load_noise_sigma >= 0.0 && self.gen_noise_sigma >= 0.0) {
            return Err(Error::Config("noise sigmas must be >= 0".into()));
        }
        if !(self.ar1_coeff.abs() < 1.0) {
            return Err(Error::Config("ar1_coeff must lie in (-1, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.initial_soc_fraction) {
            return Err(Error::Config("initial_soc_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Deterministic solar profile `ḡₖ(t)`; slot indices wrap around.
    pub fn solar_profile(&self, k: usize, slot: usize) -> f64 {
        let phase = (slot % self.slots_per_episode) as f64 / self.slots_per_episode as f64;
        let (rise, set) = self.daylight;
        if phase <= rise || phase >= set {
            return 0.0;
        }
        self.solar_peak[k] * (PI * (phase - rise) / (set - rise)).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    pub soc: Vec<f64>,
    pub realized_load: Vec<f64>,
    pub realized_gen: Vec<f64>,
    pub last_clearing_price: f64,
    /// Signed cleared quantity of the previous slot per agent.
    pub last_traded_qty: Vec<f64>,
    pub slot: usize,
    pub net_load_history: Vec<VecDeque<f64>>,
    load_noise: Vec<f64>,
    gen_noise: Vec<f64>,
}

fn draw_noise<R: Rng + ?Sized>(prev: f64, sigma: f64, ar1: f64, rng: &mut R) -> f64 {
    let z: f64 = if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("sigma validated").sample(rng)
    } else {
        0.0
    };
    ar1 * prev + (1.0 - ar1 * ar1).sqrt() * z
}

impl GridState {
    pub fn initial<R: Rng + ?Sized>(params: &PhysicalParams, rng: &mut R) -> Self {
        let n = params.n_agents();
        let mut state = Self {
            soc: params
                .soc_capacity
                .iter()
                .map(|s| s * params.initial_soc_fraction)
                .collect(),
            realized_load: vec![0.0; n],
            realized_gen: vec![0.0; n],
            last_clearing_price: 0.0,
            last_traded_qty: vec![0.0; n],
            slot: 0,
            net_load_history: vec![VecDeque::with_capacity(params.history_len); n],
            load_noise: vec![0.0; n],
            gen_noise: vec![0.0; n],
        };
        state.draw_slot(params, rng);
        state
    }

    fn draw_slot<R: Rng + ?Sized>(&mut self, params: &PhysicalParams, rng: &mut R) {
        for k in 0..params.n_agents() {
            self.load_noise[k] =
                draw_noise(self.load_noise[k], params.load_noise_sigma, params.ar1_coeff, rng);
            self.gen_noise[k] =
                draw_noise(self.gen_noise[k], params.gen_noise_sigma, params.ar1_coeff, rng);
            self.realized_load[k] = (params.baseline_load[k] + self.load_noise[k]).max(0.0);
            let g = params.solar_profile(k, self.slot);
            // No generation outside daylight, noise or not.
            self.realized_gen[k] = if g > 0.0 {
                (g + self.gen_noise[k]).max(0.0)
            } else {
                0.0
            };
        }
    }

    /// Deterministic forecast `d̄ₖ − ḡₖ(t+1)`.
    pub fn predicted_net_load(&self, params: &PhysicalParams, k: usize) -> f64 {
        params.baseline_load[k] - params.solar_profile(k, self.slot + 1)
    }
}

/// Advance one slot: battery update from the cleared trades, then fresh
/// load and generation draws.
pub fn step_physics<R: Rng + ?Sized>(
    state: &GridState,
    params: &PhysicalParams,
    cleared_q: &[f64],
    rng: &mut R,
) -> GridState {
    let mut next = state.clone();
    for k in 0..params.n_agents() {
        let flow = state.realized_gen[k] - state.realized_load[k] + cleared_q[k];
        next.soc[k] = (state.soc[k] + params.charge_efficiency * flow * params.slot_hours)
            .clamp(0.0, params.soc_capacity[k]);
        let hist = &mut next.net_load_history[k];
        if params.history_len > 0 {
            if hist.len() == params.history_len {
                hist.pop_front();
            }
            hist.push_back(state.realized_load[k] - state.realized_gen[k]);
        }
    }
    next.last_traded_qty = cleared_q.to_vec();
    next.slot = state.slot + 1;
    next.draw_slot(params, rng);
    next
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub predicted_net_load: f64,
    pub soc: f64,
    pub last_price: f64,
    pub last_qty: f64,
    pub hour_encoding: [f64; 2],
    /// Oldest first, zero-padded at the front.
    pub net_load_history: Vec<f64>,
}

impl Observation {
    pub fn dim(history_len: usize) -> usize {
        6 + history_len
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![
            self.predicted_net_load,
            self.soc,
            self.last_price,
            self.last_qty,
            self.hour_encoding[0],
            self.hour_encoding[1],
        ];
        v.extend_from_slice(&self.net_load_history);
        v
    }
}

pub fn observe(state: &GridState, params: &PhysicalParams, k: usize) -> Observation {
    let phase = 2.0 * PI * (state.slot % params.slots_per_episode) as f64
        / params.slots_per_episode as f64;
    let hist = &state.net_load_history[k];
    let mut history = vec![0.0; params.history_len.saturating_sub(hist.len())];
    history.extend(hist.iter().copied());
    Observation {
        predicted_net_load: state.predicted_net_load(params, k),
        soc: state.soc[k],
        last_price: state.last_clearing_price,
        last_qty: state.last_traded_qty[k],
        hour_encoding: [phase.sin(), phase.cos()],
        net_load_history: history,
    }
}

/// Map bids onto the economy the mechanism clears.
///
/// A positive quantity enters as a buyer capped at `q`, a negative one as a
/// seller capped at `|q|`. The reported intercept is set so the reported
/// marginal at the bid quantity equals the bid price, with curvature taken
/// from the base type: a bid at the true marginal therefore reports the true
/// schedule truncated at `q`. Zero or non-finite bids become null agents;
/// the second return value flags non-finite ones.
pub fn bid_to_economy(
    bids: &[BidAction],
    base_types: &[AgentType],
    slot: usize,
) -> Result<(EconomyInstance, Vec<bool>)> {
    if bids.len() != base_types.len() {
        return Err(Error::Dimension {
            expected: base_types.len(),
            got: bids.len(),
        });
    }
    let mut rejected = vec![false; bids.len()];
    let agents = bids
        .iter()
        .zip(base_types)
        .enumerate()
        .map(|(k, (bid, base))| {
            if !bid.is_finite() {
                rejected[k] = true;
                return AgentType::null(base.id);
            }
            let q = bid.quantity;
            if q > 0.0 {
                AgentType::buyer(base.id, (bid.price + base.b * q).max(0.0), base.b, q)
            } else if q < 0.0 {
                AgentType::seller(base.id, (bid.price - base.e * q.abs()).max(0.0), base.e, -q)
            } else {
                AgentType::null(base.id)
            }
        })
        .collect();
    Ok((EconomyInstance::new(agents, slot)?, rejected))
}

/// Economy of true types on the given sides, each agent with the full
/// bid-box capacity.
pub fn true_economy(
    true_types: &[AgentType],
    sides: &[Side],
    q_max: f64,
    slot: usize,
) -> Result<EconomyInstance> {
    let agents = true_types
        .iter()
        .zip(sides)
        .map(|(t, side)| match side {
            Side::Buyer => AgentType::buyer(t.id, t.a, t.b, q_max),
            Side::Seller => AgentType::seller(t.id, t.c, t.e, q_max),
            Side::Null => AgentType::null(t.id),
        })
        .collect();
    EconomyInstance::new(agents, slot)
}

/// Welfare of an outcome evaluated at true types.
pub fn realized_welfare(true_types: &[AgentType], outcome: &MarketOutcome) -> f64 {
    (0..true_types.len())
        .map(|k| match outcome.sides[k] {
            Side::Buyer => true_types[k].value_at(outcome.quantities[k]),
            Side::Seller => -true_types[k].cost_at(outcome.quantities[k]),
            Side::Null => 0.0,
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotResult {
    pub outcome: MarketOutcome,
    pub detections: Vec<DetectionRecord>,
    /// Utilities at true types, before penalties.
    pub utilities: Vec<f64>,
    pub rewards: Vec<f64>,
    pub rejected: Vec<bool>,
    /// Welfare of the cleared allocation at true types.
    pub welfare_true: f64,
    /// Exact optimum of the true economy on the agents' natural sides.
    pub welfare_star: f64,
    pub price_star: f64,
    pub next_state: GridState,
}

/// Settle, detect, reward and advance physics for one slot.
#[allow(clippy::too_many_arguments)]
pub fn run_slot<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    state: &GridState,
    params: &PhysicalParams,
    bounds: &BidBounds,
    true_types: &[AgentType],
    natural_sides: &[Side],
    bids: &[BidAction],
    mech: &MechanismConfig,
    detection_rng: &mut R1,
    physics_rng: &mut R2,
) -> Result<SlotResult> {
    let bids: Vec<BidAction> = bids.iter().map(|b| b.clamped(bounds)).collect();
    let (econ, rejected) = bid_to_economy(&bids, true_types, state.slot)?;
    let outcome = settle_with(&econ, &mech.approx(), mech.pivot)?;

    let n = bids.len();
    let mut detections = Vec::with_capacity(n);
    let mut utilities = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    for k in 0..n {
        let u = truth_utility_of(&true_types[k], &outcome, k)?;
        let rec = if rejected[k] {
            // A rejected bid never reaches the monitor.
            detect(mech, k, true_marginal(&true_types[k], 0.0), true_marginal(&true_types[k], 0.0), detection_rng)
        } else {
            let v_prime = true_marginal(&true_types[k], bids[k].quantity);
            detect(mech, k, bids[k].price, v_prime, detection_rng)
        };
        rewards.push(penalized_utility(u, &rec, mech));
        utilities.push(u);
        detections.push(rec);
    }

    let true_econ = true_economy(true_types, natural_sides, bounds.q_max, state.slot)?;
    let star = clear_exact(&true_econ);
    let welfare_true = realized_welfare(true_types, &outcome);

    let cleared = outcome.net_quantities();
    let mut next_state = step_physics(state, params, &cleared, physics_rng);
    next_state.last_clearing_price = outcome.clearing_price;
    Ok(SlotResult {
        outcome,
        detections,
        utilities,
        rewards,
        rejected,
        welfare_true,
        welfare_star: star.welfare_star,
        price_star: star.shadow_price,
        next_state,
    })
}

/// Base prosumer preferences and how strongly they follow the local state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProsumerConfig {
    /// Intercepts for net consumers (`a`, `c`) and net producers.
    pub consumer_value: f64,
    pub consumer_cost: f64,
    pub producer_value: f64,
    pub producer_cost: f64,
    pub value_curvature: f64,
    pub cost_curvature: f64,
    /// Uniform jitter added to every intercept when agents are drawn.
    pub jitter: f64,
    /// Intercept shift per unit of predicted net load.
    pub net_load_sensitivity: f64,
}

impl Default for ProsumerConfig {
    fn default() -> Self {
        Self {
            consumer_value: 9.0,
            consumer_cost: 9.0,
            producer_value: 5.5,
            producer_cost: 5.0,
            value_curvature: 1.0,
            cost_curvature: 1.0,
            jitter: 0.5,
            net_load_sensitivity: 0.3,
        }
    }
}

impl ProsumerConfig {
    /// Draw base types: the first half are consumers, the rest producers.
    pub fn draw_types<R: Rng + ?Sized>(&self, n_agents: usize, q_max: f64, rng: &mut R) -> Vec<AgentType> {
        let half = n_agents / 2;
        (0..n_agents)
            .map(|k| {
                let mut j = || self.jitter * (2.0 * rng.random::<f64>() - 1.0);
                let (a, c) = if k < half {
                    (self.consumer_value + j(), self.consumer_cost + j())
                } else {
                    (self.producer_value + j(), self.producer_cost + j())
                };
                AgentType {
                    id: k,
                    role_hint: Role::Prosumer,
                    a: a.max(0.0),
                    b: self.value_curvature,
                    c: c.max(0.0),
                    e: self.cost_curvature,
                    cap_demand: q_max,
                    cap_supply: q_max,
                }
            })
            .collect()
    }

    /// Consumers buy and producers sell; the welfare benchmark and scripted
    /// agents use these sides.
    pub fn natural_sides(&self, n_agents: usize) -> Vec<Side> {
        (0..n_agents)
            .map(|k| if k < n_agents / 2 { Side::Buyer } else { Side::Seller })
            .collect()
    }

    /// True types for the current slot.
    pub fn slot_types(&self, base: &[AgentType], state: &GridState, params: &PhysicalParams) -> Vec<AgentType> {
        base.iter()
            .enumerate()
            .map(|(k, t)| {
                let shift = self.net_load_sensitivity * state.predicted_net_load(params, k);
                AgentType {
                    a: (t.a + shift).max(0.0),
                    c: (t.c + shift).max(0.0),
                    ..*t
                }
            })
            .collect()
    }
}

/// One line of an `episode.v1` trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotRecord {
    pub episode: u64,
    pub slot: usize,
    pub bids: Vec<BidAction>,
    pub true_marginals: Vec<f64>,
    /// Signed cleared quantities, buying positive.
    pub quantities: Vec<f64>,
    pub payments: Vec<f64>,
    pub utilities: Vec<f64>,
    pub rewards: Vec<f64>,
    pub detections: Vec<DetectionRecord>,
    pub welfare_reported: f64,
    pub welfare_true: f64,
    pub welfare_star: f64,
    pub clearing_price: f64,
    pub price_star: f64,
    pub soc: Vec<f64>,
}

/// The environment: physics, preferences, mechanism and random streams.
#[derive(Debug, Clone)]
pub struct GridEnv {
    pub params: PhysicalParams,
    pub bounds: BidBounds,
    pub mech: MechanismConfig,
    pub prosumers: ProsumerConfig,
    pub base_types: Vec<AgentType>,
    streams: Streams,
    episode: u64,
    state: GridState,
}

impl GridEnv {
    pub fn new(
        params: PhysicalParams,
        bounds: BidBounds,
        mech: MechanismConfig,
        prosumers: ProsumerConfig,
        streams: Streams,
    ) -> Result<Self> {
        params.validate()?;
        mech.validate()?;
        let mut rng = streams.rng(0, 0, ALL_AGENTS, Purpose::Types);
        let base_types = prosumers.draw_types(params.n_agents(), bounds.q_max, &mut rng);
        let state = GridState::initial(&params, &mut streams.rng(0, 0, ALL_AGENTS, Purpose::Physics));
        Ok(Self {
            params,
            bounds,
            mech,
            prosumers,
            base_types,
            streams,
            episode: 0,
            state,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.params.n_agents()
    }

    pub fn obs_dim(&self) -> usize {
        Observation::dim(self.params.history_len)
    }

    pub fn state(&self) -> &GridState {
        &self.state
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn reset(&mut self, episode: u64) {
        self.episode = episode;
        // Slot u64::MAX keys the initial draw so it never collides with a
        // regular slot stream.
        let mut rng = self.streams.rng(episode, u64::MAX, ALL_AGENTS, Purpose::Physics);
        self.state = GridState::initial(&self.params, &mut rng);
    }

    pub fn done(&self) -> bool {
        self.state.slot >= self.params.slots_per_episode
    }

    pub fn observations(&self) -> Vec<Observation> {
        (0..self.n_agents())
            .map(|k| observe(&self.state, &self.params, k))
            .collect()
    }

    pub fn natural_sides(&self) -> Vec<Side> {
        self.prosumers.natural_sides(self.n_agents())
    }

    pub fn true_types(&self) -> Vec<AgentType> {
        self.prosumers
            .slot_types(&self.base_types, &self.state, &self.params)
    }

    pub fn step(&mut self, bids: &[BidAction]) -> Result<(SlotResult, SlotRecord)> {
        let slot = self.state.slot as u64;
        let types = self.true_types();
        let sides = self.natural_sides();
        let mut det_rng = self.streams.rng(self.episode, slot, ALL_AGENTS, Purpose::Detection);
        let mut phys_rng = self.streams.rng(self.episode, slot, ALL_AGENTS, Purpose::Physics);
        let result = run_slot(
            &self.state,
            &self.params,
            &self.bounds,
            &types,
            &sides,
            bids,
            &self.mech,
            &mut det_rng,
            &mut phys_rng,
        )?;
        let clamped: Vec<BidAction> = bids.iter().map(|b| b.clamped(&self.bounds)).collect();
        let record = SlotRecord {
            episode: self.episode,
            slot: self.state.slot,
            true_marginals: result.detections.iter().map(|d| d.true_marginal).collect(),
            bids: clamped,
            quantities: result.outcome.net_quantities(),
            payments: result.outcome.payments.clone(),
            utilities: result.utilities.clone(),
            rewards: result.rewards.clone(),
            detections: result.detections.clone(),
            welfare_reported: result.outcome.welfare,
            welfare_true: result.welfare_true,
            welfare_star: result.welfare_star,
            clearing_price: result.outcome.clearing_price,
            price_star: result.price_star,
            soc: result.next_state.soc.clone(),
        };
        self.state = result.next_state.clone();
        Ok((result, record))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn params_one(s_max: f64, eta: f64, dt: f64) -> PhysicalParams {
        PhysicalParams {
            baseline_load: vec![0.0],
            solar_peak: vec![0.0],
            load_noise_sigma: 0.0,
            gen_noise_sigma: 0.0,
            soc_capacity: vec![s_max],
            charge_efficiency: eta,
            slot_hours: dt,
            ..PhysicalParams::uniform(1)
        }
    }

    fn state_with(params: &PhysicalParams, soc: f64, g: f64, d: f64) -> GridState {
        let mut s = GridState::initial(params, &mut stream(0, Purpose::Physics));
        s.soc = vec![soc];
        s.realized_gen = vec![g];
        s.realized_load = vec![d];
        s
    }

    #[test]
    fn soc_examples() {
        let p = params_one(10.0, 0.9, 1.0);
        let mut rng = stream(1, Purpose::Physics);
        let s = step_physics(&state_with(&p, 5.0, 1.0, 1.0), &p, &[0.0], &mut rng);
        assert_eq!(s.soc[0], 5.0);
        // 5 + 0.9·2·1 = 6.8
        let s = step_physics(&state_with(&p, 5.0, 1.0, 0.0), &p, &[1.0], &mut rng);
        assert!((s.soc[0] - 6.8).abs() < 1e-12);
        let s = step_physics(&state_with(&p, 9.5, 4.0, 0.0), &p, &[3.0], &mut rng);
        assert_eq!(s.soc[0], 10.0);
        assert_eq!(s.slot, 1);
    }

    #[test]
    fn observation_examples() {
        let mut p = PhysicalParams::uniform(2);
        p.baseline_load = vec![3.0, 3.0];
        p.solar_peak = vec![0.0, 2.0];
        let s = GridState::initial(&p, &mut stream(0, Purpose::Physics));
        let o = observe(&s, &p, 0);
        assert_eq!(o.net_load_history, vec![0.0; p.history_len]);
        assert_eq!(o.hour_encoding, [0.0, 1.0]);
        assert_eq!(o.predicted_net_load, 3.0);
        assert_eq!(o.to_vec().len(), Observation::dim(p.history_len));
        // d̄ − ḡ(t+1) with ḡ(t+1) = 1 for agent 1
        let mut s2 = s.clone();
        let t = (0..24).find(|&t| (p.solar_profile(1, t + 1) - 1.0).abs() < 0.5).unwrap();
        s2.slot = t;
        let o = observe(&s2, &p, 1);
        assert!((o.predicted_net_load - (3.0 - p.solar_profile(1, t + 1))).abs() < 1e-12);
    }

    #[test]
    fn bid_mapping() {
        let base = vec![
            AgentType { role_hint: Role::Prosumer, cap_supply: 5.0, ..AgentType::buyer(0, 10.0, 1.0, 5.0) },
            AgentType { role_hint: Role::Prosumer, cap_demand: 5.0, ..AgentType::seller(1, 2.0, 0.0, 5.0) },
            AgentType::null(2),
        ];
        let bids = vec![BidAction::new(6.0, 4.0), BidAction::new(6.0, -4.0), BidAction::new(3.0, 0.0)];
        let (econ, rejected) = bid_to_economy(&bids, &base, 0).unwrap();
        assert_eq!(econ.side(0), Side::Buyer);
        assert_eq!(econ.agents()[0].cap_demand, 4.0);
        // reported marginal at q = 4 equals the bid price
        assert_eq!(econ.agents()[0].a - econ.agents()[0].b * 4.0, 6.0);
        assert_eq!(econ.side(1), Side::Seller);
        assert_eq!(econ.agents()[1].c, 6.0);
        assert_eq!(econ.agents()[1].cap_supply, 4.0);
        assert_eq!(econ.side(2), Side::Null);
        assert_eq!(rejected, vec![false; 3]);

        let bids = vec![BidAction::new(f64::NAN, 1.0), BidAction::new(6.0, -4.0), BidAction::new(3.0, 0.0)];
        let (econ, rejected) = bid_to_economy(&bids, &base, 0).unwrap();
        assert_eq!(econ.side(0), Side::Null);
        assert!(rejected[0]);
    }

    fn two_agent_slot(buyer_price: f64, penalty: f64) -> SlotResult {
        let params = PhysicalParams::uniform(2);
        let bounds = BidBounds::default();
        let types = vec![
            AgentType { role_hint: Role::Prosumer, cap_supply: 5.0, e: 1.0, c: 9.0, ..AgentType::buyer(0, 10.0, 1.0, 5.0) },
            AgentType { role_hint: Role::Prosumer, cap_demand: 5.0, a: 3.0, b: 1.0, ..AgentType::seller(1, 2.0, 1.0, 5.0) },
        ];
        let bids = vec![BidAction::new(buyer_price, 5.0), BidAction::new(true_marginal(&types[1], -5.0), -5.0)];
        let mech = MechanismConfig { epsilon: 1.0, rho: 1.0, penalty, ..MechanismConfig::default() };
        let state = GridState::initial(&params, &mut stream(0, Purpose::Physics));
        run_slot(
            &state,
            &params,
            &bounds,
            &types,
            &[Side::Buyer, Side::Seller],
            &bids,
            &mech,
            &mut stream(1, Purpose::Detection),
            &mut stream(2, Purpose::Physics),
        )
        .unwrap()
    }

    #[test]
    fn truthful_slot_has_no_penalties() {
        let r = two_agent_slot(5.0, 100.0);
        assert!(r.detections.iter().all(|d| !d.detected));
        assert_eq!(r.rewards, r.utilities);
        // α = 1, truthful full schedules: realized welfare is the optimum.
        assert!((r.welfare_true - r.welfare_star).abs() < 1e-9);
        assert!((r.outcome.quantities[0] - r.outcome.quantities[1]).abs() < 1e-9);
    }

    #[test]
    fn deviating_agent_pays_penalty() {
        let r = two_agent_slot(5.0 + 2.0, 100.0);
        assert!(r.detections[0].detected);
        assert!((r.rewards[0] - (r.utilities[0] - 100.0)).abs() < 1e-12);
        assert_eq!(r.rewards[1], r.utilities[1]);
    }

    #[test]
    fn zero_trade_slot_rewards_are_zero() {
        // No gains from trade: buyer values 3, seller costs 5, both truthful at q = 0.
        let params = PhysicalParams::uniform(2);
        let types = vec![
            AgentType::buyer(0, 3.0, 1.0, 5.0),
            AgentType::seller(1, 5.0, 1.0, 5.0),
        ];
        let bids = vec![BidAction::new(3.0, 5.0 * 0.0 + 1.0), BidAction::new(5.0, -1.0)];
        // marginals at |q| = 1: buyer 2, seller 6; bid within ε = 1.
        let mech = MechanismConfig { epsilon: 1.0, penalty: 50.0, ..MechanismConfig::default() };
        let state = GridState::initial(&params, &mut stream(0, Purpose::Physics));
        let r = run_slot(
            &state,
            &params,
            &BidBounds::default(),
            &types,
            &[Side::Buyer, Side::Seller],
            &bids,
            &mech,
            &mut stream(1, Purpose::Detection),
            &mut stream(2, Purpose::Physics),
        )
        .unwrap();
        assert!(r.outcome.allocation.is_zero());
        assert_eq!(r.rewards, vec![0.0, 0.0]);
    }

    #[test]
    fn enforcement_is_noop_at_zero_penalty_and_exact_vcg() {
        let r = two_agent_slot(8.0, 0.0);
        assert_eq!(r.rewards, r.utilities);
    }

    #[test]
    fn episode_replays_bit_identically() {
        let run = || {
            let mut env = GridEnv::new(
                PhysicalParams::uniform(4),
                BidBounds::default(),
                MechanismConfig { alpha: 0.7, penalty: 3.0, ..MechanismConfig::default() },
                ProsumerConfig::default(),
                Streams::new(11, 0),
            )
            .unwrap();
            env.reset(3);
            let mut out = Vec::new();
            while !env.done() {
                let bids: Vec<BidAction> = env
                    .true_types()
                    .iter()
                    .enumerate()
                    .map(|(k, t)| {
                        let q = if k % 2 == 0 { 3.0 } else { -3.0 };
                        BidAction::new(true_marginal(t, q) + 0.7, q)
                    })
                    .collect();
                out.push(env.step(&bids).unwrap().1);
            }
            out
        };
        let a = run();
        assert_eq!(a.len(), 24);
        assert_eq!(a, run());
    }
}
