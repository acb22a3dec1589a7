//! Run manifests: every knob of a reproduction in one versioned document.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::trainer::{EnvConfig, RunSpec};
use crate::enforcement::MechanismConfig;
use crate::error::{Error, Result};
use crate::grid::{BidBounds, PhysicalParams, ProsumerConfig};
use crate::incentive::{EconomySampler, InterceptRange, ReportGrid, SuiteConfig};
use crate::learning::policy::Sharing;
use crate::learning::ppo::PpoConfig;

pub const MANIFEST_SCHEMA: &str = "manifest.v1";

/// Plan A: train per (α, ε) cell at the manifest's Π and γ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanAConfig {
    pub alphas: Vec<f64>,
    pub epsilons: Vec<f64>,
}

impl Default for PlanAConfig {
    fn default() -> Self {
        Self { alphas: vec![0.5, 0.7, 0.9], epsilons: vec![1.0, 2.0] }
    }
}

/// Plan B: penalty multiples of Π₀ crossed with discount factors at the
/// boundary cell. `alpha`/`epsilon` pin the cell instead of taking it from
/// a Plan A result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanBConfig {
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub multipliers: Vec<f64>,
    pub gammas: Vec<f64>,
    /// Truthful episodes scanned for the grid's marginal-contribution constant.
    pub c_episodes: usize,
}

impl Default for PlanBConfig {
    fn default() -> Self {
        Self {
            alpha: None,
            epsilon: None,
            multipliers: vec![0.5, 1.0, 2.0],
            gammas: vec![0.90, 0.95, 0.99],
            c_episodes: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanCMode {
    /// Agents play their exact best response over a report grid.
    BestResponse,
    /// PPO per probed penalty. Slow.
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanCConfig {
    pub mode: PlanCMode,
    pub alphas: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// Coarse penalties, ascending, probed before bisection.
    pub bracket: Vec<f64>,
    pub halvings: usize,
    pub target: f64,
    pub n_economies: usize,
    pub sampler: EconomySampler,
    pub grid: ReportGrid,
}

impl Default for PlanCConfig {
    fn default() -> Self {
        Self {
            mode: PlanCMode::BestResponse,
            alphas: vec![0.5, 0.6, 0.7, 0.8, 0.9],
            epsilons: vec![0.5, 1.0, 2.0],
            bracket: vec![0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0],
            halvings: 7,
            target: 0.9,
            n_economies: 60,
            sampler: EconomySampler {
                min_agents: 2,
                max_agents: 2,
                buyer_a: (9.0, 11.0),
                buyer_b: (0.8, 1.2),
                seller_c: (1.0, 3.0),
                seller_e: (0.8, 1.2),
                cap: (20.0, 20.0),
            },
            grid: ReportGrid {
                intercept: InterceptRange::Absolute { lo: 0.0, hi: 40.0 },
                intercept_points: 161,
                cap_points: 11,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanDConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub entropies: Vec<f64>,
    pub widths: Vec<usize>,
}

impl Default for PlanDConfig {
    fn default() -> Self {
        Self { alpha: 0.9, epsilon: 1.0, entropies: vec![0.005, 0.01, 0.02], widths: vec![64, 128] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunManifest {
    pub schema: String,
    pub name: String,
    pub n_agents: usize,
    pub seeds: Vec<u64>,
    pub episodes_train: usize,
    pub episodes_eval: usize,
    /// Training episodes between curve checkpoints.
    pub eval_every: usize,
    /// 0 means one worker per available core.
    pub workers: usize,
    pub mech: MechanismConfig,
    /// Defaults to `PhysicalParams::uniform(n_agents)`.
    pub physical: Option<PhysicalParams>,
    pub bounds: BidBounds,
    pub prosumers: ProsumerConfig,
    pub ppo: PpoConfig,
    pub incentive: SuiteConfig,
    pub plan_a: PlanAConfig,
    pub plan_b: PlanBConfig,
    pub plan_c: PlanCConfig,
    pub plan_d: PlanDConfig,
}

/// PPO settings used at desk scale.
pub fn desk_ppo() -> PpoConfig {
    PpoConfig {
        lr: 1e-3,
        batch_size: 576,
        sharing: Sharing::Shared,
        init_log_std: -1.0,
        reward_scale: 10.0,
        ..PpoConfig::default()
    }
}

impl Default for RunManifest {
    fn default() -> Self {
        Self {
            schema: MANIFEST_SCHEMA.into(),
            name: "desk".into(),
            n_agents: 6,
            seeds: vec![1, 2, 3],
            episodes_train: 1500,
            episodes_eval: 3,
            eval_every: 10,
            workers: 0,
            mech: MechanismConfig { penalty: 3.0, ..MechanismConfig::default() },
            physical: None,
            bounds: BidBounds::default(),
            prosumers: ProsumerConfig::default(),
            ppo: desk_ppo(),
            incentive: SuiteConfig { n_economies: 100, ..SuiteConfig::default() },
            plan_a: PlanAConfig::default(),
            plan_b: PlanBConfig::default(),
            plan_c: PlanCConfig::default(),
            plan_d: PlanDConfig::default(),
        }
    }
}

impl RunManifest {
    /// Parse TOML or JSON, picked by extension (`.json` is JSON, anything
    /// else TOML), then validate.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        Ok(m)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Manifest(m));
        if self.schema != MANIFEST_SCHEMA {
            return Err(Error::Schema { expected: MANIFEST_SCHEMA.into(), found: self.schema.clone() });
        }
        if self.n_agents < 2 {
            return bad("n_agents must be at least 2".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.episodes_eval == 0 {
            return bad("episodes_eval must be positive".into());
        }
        let unit = |name: &str, xs: &[f64]| -> Result<()> {
            if xs.is_empty() || xs.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
                return Err(Error::Manifest(format!("{name} must be a non-empty list in (0, 1]")));
            }
            Ok(())
        };
        let positive = |name: &str, xs: &[f64]| -> Result<()> {
            if xs.is_empty() || xs.iter().any(|&e| !(e >= 0.0 && e.is_finite())) {
                return Err(Error::Manifest(format!("{name} must be a non-empty list of finite values >= 0")));
            }
            Ok(())
        };
        unit("plan_a.alphas", &self.plan_a.alphas)?;
        positive("plan_a.epsilons", &self.plan_a.epsilons)?;
        positive("plan_b.multipliers", &self.plan_b.multipliers)?;
        if self.plan_b.gammas.iter().any(|&g| !(g > 0.0 && g < 1.0)) {
            return bad("plan_b.gammas must lie in (0, 1)".into());
        }
        unit("plan_c.alphas", &self.plan_c.alphas)?;
        positive("plan_c.epsilons", &self.plan_c.epsilons)?;
        positive("plan_c.bracket", &self.plan_c.bracket)?;
        if self.plan_c.bracket.windows(2).any(|w| w[1] <= w[0]) {
            return bad("plan_c.bracket must be strictly ascending".into());
        }
        if !(self.plan_c.target > 0.0 && self.plan_c.target <= 1.0) {
            return bad("plan_c.target must lie in (0, 1]".into());
        }
        self.plan_c.sampler.validate()?;
        unit("plan_d.alpha", &[self.plan_d.alpha])?;
        positive("plan_d.entropies", &self.plan_d.entropies)?;
        if self.plan_d.widths.is_empty() || self.plan_d.widths.contains(&0) {
            return bad("plan_d.widths must be non-empty and positive".into());
        }
        self.mech.validate()?;
        self.ppo.validate()?;
        self.incentive.sampler.validate()?;
        self.physical_params().validate()?;
        Ok(())
    }

    pub fn physical_params(&self) -> PhysicalParams {
        self.physical.clone().unwrap_or_else(|| PhysicalParams::uniform(self.n_agents))
    }

    /// Large profile: 12 agents, reference PPO settings, longer training.
    pub fn apply_full(&mut self) {
        self.name = format!("{}-full", self.name);
        self.n_agents = 12;
        self.physical = None;
        self.episodes_train = 6000;
        self.episodes_eval = 10;
        self.ppo = PpoConfig { gamma: self.ppo.gamma, ..PpoConfig::default() };
    }

    /// SHA-256 over the canonical JSON serialization and the crate version.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("manifest serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        h.update(b"\0");
        h.update(env!("CARGO_PKG_VERSION").as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn env(&self, mech: MechanismConfig) -> EnvConfig {
        EnvConfig {
            physical: self.physical_params(),
            bounds: self.bounds,
            prosumers: self.prosumers.clone(),
            mech,
        }
    }

    /// The training run for one cell and seed.
    pub fn run_spec(&self, mech: MechanismConfig, ppo: PpoConfig, seed: u64) -> RunSpec {
        RunSpec {
            env: self.env(mech),
            ppo,
            episodes_train: self.episodes_train,
            eval_every: self.eval_every,
            episodes_eval: self.episodes_eval,
            seed,
            run_id: 0,
        }
    }
}
