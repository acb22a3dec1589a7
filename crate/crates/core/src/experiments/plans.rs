//! Plans A–D: sweeps over cells, seeds dispatched to a worker pool.

use std::path::PathBuf;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{PlanCMode, RunManifest};
use super::scripted::ScriptedPolicy;
use super::trainer::{run_episode_with, train_and_evaluate, RunResult};
use crate::enforcement::MechanismConfig;
use crate::error::{Error, Result};
use crate::grid::true_economy;
use crate::incentive::{ensemble_c, marginal_contribution, report_gains, summarize_gains};
use crate::learning::ppo::PpoConfig;

pub const PLAN_SCHEMA: &str = "plan_report.v1";

/// Worker count: `PVL_WORKERS` beats the flag, the flag beats the
/// manifest, and 0 everywhere means one per core.
pub fn resolve_workers(flag: Option<usize>, manifest: usize) -> usize {
    let env = std::env::var("PVL_WORKERS").ok().and_then(|v| v.trim().parse::<usize>().ok());
    let n = env.or(flag).unwrap_or(manifest);
    if n > 0 {
        n
    } else {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    }
}

pub fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Shared context of a plan invocation.
pub struct Runner {
    pub pool: rayon::ThreadPool,
    pub manifest_hash: String,
    /// When set, every trained policy is saved here as `policy.v1` JSON.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Runner {
    pub fn new(workers: usize, manifest_hash: &str) -> Result<Self> {
        Ok(Self { pool: worker_pool(workers)?, manifest_hash: manifest_hash.into(), checkpoint_dir: None })
    }
}

/// Hyper-parameters that vary across a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub alpha: f64,
    pub epsilon: f64,
    pub penalty: f64,
    pub gamma: f64,
    pub entropy_coef: f64,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRun {
    pub key: CellKey,
    pub result: RunResult,
}

/// Seed aggregate for one cell. Diverged runs are counted, not averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub key: CellKey,
    pub n_runs: usize,
    pub n_diverged: usize,
    pub truth_frac_mean: Option<f64>,
    pub truth_frac_std: Option<f64>,
    pub misreport_mean: Option<f64>,
    pub welfare_distortion_mean: Option<f64>,
    pub n_converged: usize,
    /// Mean over the converged runs.
    pub convergence_mean: Option<f64>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn std_dev(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    Some((xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt())
}

pub fn summarize(runs: &[CellRun]) -> Vec<CellSummary> {
    let mut keys: Vec<CellKey> = Vec::new();
    for r in runs {
        if !keys.contains(&r.key) {
            keys.push(r.key);
        }
    }
    keys.into_iter()
        .map(|key| {
            let all: Vec<&RunResult> = runs.iter().filter(|r| r.key == key).map(|r| &r.result).collect();
            let ok: Vec<&RunResult> = all.iter().copied().filter(|r| r.diverged.is_none()).collect();
            let tf: Vec<f64> = ok.iter().map(|r| r.metrics.truth_frac_eps).collect();
            let mis: Vec<f64> = ok.iter().map(|r| r.metrics.misreport_rate).collect();
            let wd: Vec<f64> = ok.iter().filter_map(|r| r.metrics.welfare_distortion).collect();
            let conv: Vec<f64> = ok.iter().filter_map(|r| r.metrics.convergence_episode.map(|c| c as f64)).collect();
            if all.len() > ok.len() {
                warn!("cell {key:?}: {} of {} runs diverged and are excluded", all.len() - ok.len(), all.len());
            }
            CellSummary {
                key,
                n_runs: all.len(),
                n_diverged: all.len() - ok.len(),
                truth_frac_mean: mean(&tf),
                truth_frac_std: std_dev(&tf),
                misreport_mean: mean(&mis),
                welfare_distortion_mean: mean(&wd),
                n_converged: conv.len(),
                convergence_mean: mean(&conv),
            }
        })
        .collect()
}

fn cell_mech(m: &RunManifest, key: &CellKey) -> MechanismConfig {
    MechanismConfig { alpha: key.alpha, epsilon: key.epsilon, penalty: key.penalty, ..m.mech }
}

fn cell_ppo(m: &RunManifest, key: &CellKey) -> PpoConfig {
    PpoConfig { gamma: key.gamma, entropy_coef: key.entropy_coef, hidden: key.hidden, ..m.ppo.clone() }
}

fn base_key(m: &RunManifest) -> CellKey {
    CellKey {
        alpha: m.mech.alpha,
        epsilon: m.mech.epsilon,
        penalty: m.mech.penalty,
        gamma: m.ppo.gamma,
        entropy_coef: m.ppo.entropy_coef,
        hidden: m.ppo.hidden,
    }
}

/// Train every (cell, seed) pair. Results come back in job order whatever
/// the scheduling.
pub fn run_cells(m: &RunManifest, keys: &[CellKey], runner: &Runner) -> Result<Vec<CellRun>> {
    let jobs: Vec<(CellKey, u64)> = keys.iter().flat_map(|k| m.seeds.iter().map(move |&s| (*k, s))).collect();
    let total = jobs.len();
    runner.pool.install(|| {
        jobs.par_iter()
            .map(|&(key, seed)| {
                let spec = m.run_spec(cell_mech(m, &key), cell_ppo(m, &key), seed);
                let (result, ckpt) = train_and_evaluate(&spec, &runner.manifest_hash)?;
                if let Some(dir) = &runner.checkpoint_dir {
                    let name = format!(
                        "a{}_e{}_p{:.4}_g{}_ent{}_h{}_s{seed}.policy.v1.json",
                        key.alpha, key.epsilon, key.penalty, key.gamma, key.entropy_coef, key.hidden
                    );
                    crate::io::atomic_write(&dir.join(name), ckpt.to_json()?.as_bytes())?;
                }
                info!(
                    "{total} jobs: alpha={} eps={} pi={} gamma={} seed={seed} -> truth_frac={:.3}",
                    key.alpha, key.epsilon, key.penalty, key.gamma, result.metrics.truth_frac_eps
                );
                Ok(CellRun { key, result })
            })
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanAReport {
    pub schema: String,
    pub manifest_hash: String,
    pub seeds: Vec<u64>,
    pub runs: Vec<CellRun>,
    pub cells: Vec<CellSummary>,
    /// Cell whose mean TruthFrac is closest to 0.5.
    pub boundary: CellKey,
}

impl PlanAReport {
    /// Mean TruthFrac over every ε cell and seed at this α.
    pub fn mean_truth_frac_at(&self, alpha: f64) -> Option<f64> {
        let xs: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.key.alpha == alpha && r.result.diverged.is_none())
            .map(|r| r.result.metrics.truth_frac_eps)
            .collect();
        mean(&xs)
    }
}

pub fn plan_a(m: &RunManifest, runner: &Runner) -> Result<PlanAReport> {
    let base = base_key(m);
    let keys: Vec<CellKey> = m
        .plan_a
        .alphas
        .iter()
        .flat_map(|&alpha| m.plan_a.epsilons.iter().map(move |&epsilon| CellKey { alpha, epsilon, ..base }))
        .collect();
    let runs = run_cells(m, &keys, runner)?;
    let cells = summarize(&runs);
    let boundary = cells
        .iter()
        .filter_map(|c| c.truth_frac_mean.map(|t| (c.key, (t - 0.5).abs())))
        .fold(None, |best: Option<(CellKey, f64)>, (k, d)| match best {
            Some((_, bd)) if bd <= d => best,
            _ => Some((k, d)),
        })
        .map(|(k, _)| k)
        .ok_or(Error::Empty("plan A cells (all runs diverged)"))?;
    Ok(PlanAReport {
        schema: PLAN_SCHEMA.into(),
        manifest_hash: runner.manifest_hash.clone(),
        seeds: m.seeds.clone(),
        runs,
        cells,
        boundary,
    })
}

/// Largest single-agent welfare contribution over the true slot economies
/// of `episodes` truthful episodes.
pub fn grid_marginal_contribution(m: &RunManifest, mech: MechanismConfig, seed: u64, episodes: usize) -> Result<f64> {
    let mut env = m.env(mech).build(seed, 0)?;
    let truthful = vec![ScriptedPolicy::Truthful; env.n_agents()];
    let sides = env.natural_sides();
    let q_max = env.bounds.q_max;
    let mut c: f64 = 0.0;
    for ep in 0..episodes.max(1) {
        let mut err = None;
        run_episode_with(&mut env, ep as u64, |env| {
            match true_economy(&env.true_types(), &sides, q_max, env.state().slot) {
                Ok(econ) => c = c.max(marginal_contribution(&econ)),
                Err(e) => err = Some(e),
            }
            Ok(ScriptedPolicy::bids(&truthful, env))
        })?;
        if let Some(e) = err {
            return Err(e);
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanBReport {
    pub schema: String,
    pub manifest_hash: String,
    pub seeds: Vec<u64>,
    pub alpha: f64,
    pub epsilon: f64,
    pub c_empirical: f64,
    pub pi0: f64,
    pub runs: Vec<CellRun>,
    pub cells: Vec<CellSummary>,
}

impl PlanBReport {
    pub fn cell(&self, multiplier: f64, gamma: f64) -> Option<&CellSummary> {
        let pi = multiplier * self.pi0;
        self.cells.iter().find(|c| (c.key.penalty - pi).abs() < 1e-9 && c.key.gamma == gamma)
    }

    /// Mean TruthFrac at a Π multiple, over every γ and seed.
    pub fn mean_truth_frac_at(&self, multiplier: f64) -> Option<f64> {
        let pi = multiplier * self.pi0;
        let xs: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| (r.key.penalty - pi).abs() < 1e-9 && r.result.diverged.is_none())
            .map(|r| r.result.metrics.truth_frac_eps)
            .collect();
        mean(&xs)
    }
}

/// `boundary` comes from Plan A unless the manifest pins the cell.
pub fn plan_b(m: &RunManifest, boundary: Option<&CellKey>, runner: &Runner) -> Result<PlanBReport> {
    let (alpha, epsilon) = match (m.plan_b.alpha, m.plan_b.epsilon, boundary) {
        (Some(a), Some(e), _) => (a, e),
        (a, e, Some(k)) => (a.unwrap_or(k.alpha), e.unwrap_or(k.epsilon)),
        _ => {
            return Err(Error::Config(
                "plan B needs a boundary cell: run plan A first or set plan_b.alpha and plan_b.epsilon".into(),
            ))
        }
    };
    let base = CellKey { alpha, epsilon, ..base_key(m) };
    let c = grid_marginal_contribution(m, cell_mech(m, &base), m.seeds[0], m.plan_b.c_episodes)?;
    let pi0 = crate::enforcement::penalty_threshold(alpha, c, m.mech.rho)?;
    info!("plan B: boundary alpha={alpha} eps={epsilon}, C={c:.3}, pi0={pi0:.3}");
    let keys: Vec<CellKey> = m
        .plan_b
        .multipliers
        .iter()
        .flat_map(|&k| m.plan_b.gammas.iter().map(move |&gamma| CellKey { penalty: k * pi0, gamma, ..base }))
        .collect();
    let runs = run_cells(m, &keys, runner)?;
    let cells = summarize(&runs);
    Ok(PlanBReport {
        schema: PLAN_SCHEMA.into(),
        manifest_hash: runner.manifest_hash.clone(),
        seeds: m.seeds.clone(),
        alpha,
        epsilon,
        c_empirical: c,
        pi0,
        runs,
        cells,
    })
}

/// Outcome of the bracket-then-bisect search for the smallest passing Π.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySearch {
    /// `None`: nothing in the bracket passed.
    pub pi_star: Option<f64>,
    /// Every probe as `(Π, TruthFrac)`, in call order.
    pub probes: Vec<(f64, f64)>,
    /// Probe pairs where a smaller Π passed and a larger one failed. The
    /// two bracket points above Π* are probed to look for these.
    pub monotone_violations: usize,
}

pub fn min_passing_penalty<F>(bracket: &[f64], halvings: usize, target: f64, mut f: F) -> Result<PenaltySearch>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut probes = Vec::new();
    let mut first_pass = None;
    for (i, &pi) in bracket.iter().enumerate() {
        let tf = f(pi)?;
        probes.push((pi, tf));
        if tf >= target {
            first_pass = Some(i);
            break;
        }
    }
    let pi_star = match first_pass {
        None => None,
        Some(0) => Some(bracket[0]),
        Some(i) => {
            let (mut lo, mut hi) = (bracket[i - 1], bracket[i]);
            for _ in 0..halvings {
                let mid = 0.5 * (lo + hi);
                let tf = f(mid)?;
                probes.push((mid, tf));
                if tf >= target {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            Some(hi)
        }
    };
    // Sample check above the answer: every larger penalty should pass too.
    if let Some(p) = pi_star {
        for &pi in bracket.iter().filter(|&&b| b > p).take(2) {
            if !probes.iter().any(|&(q, _)| q == pi) {
                let tf = f(pi)?;
                probes.push((pi, tf));
            }
        }
    }
    let monotone_violations = probes
        .iter()
        .flat_map(|a| probes.iter().map(move |b| (a, b)))
        .filter(|(a, b)| a.0 < b.0 && a.1 >= target && b.1 < target)
        .count();
    if monotone_violations > 0 {
        warn!("penalty search saw {monotone_violations} non-monotone probe pairs (learning noise)");
    }
    Ok(PenaltySearch { pi_star, probes, monotone_violations })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiStarCell {
    pub alpha: f64,
    pub epsilon: f64,
    pub search: PenaltySearch,
}

/// Least-squares line `Π* = slope·(1−α) + intercept` for one ε row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub epsilon: f64,
    pub n: usize,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// `slope / (C/ρ)`.
    pub slope_ratio: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = mean(xs)?;
    let my = mean(ys)?;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((slope, my - slope * mx, r2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanCReport {
    pub schema: String,
    pub manifest_hash: String,
    pub mode: PlanCMode,
    pub c_empirical: f64,
    pub rho: f64,
    pub cells: Vec<PiStarCell>,
    pub fits: Vec<LinearFit>,
    pub non_increasing_in_alpha: bool,
    pub non_increasing_in_epsilon: bool,
    pub monotone_violations: usize,
}

impl PlanCReport {
    pub fn pi_star(&self, alpha: f64, epsilon: f64) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.alpha == alpha && c.epsilon == epsilon)
            .and_then(|c| c.search.pi_star)
    }
}

/// Per-agent critical penalties `max(g_det − g_und, 0)/ρ` for one α and
/// every ε, over the Plan C corpus.
fn critical_penalties(
    m: &RunManifest,
    corpus: &[crate::market::EconomyInstance],
    alpha: f64,
    pool: &rayon::ThreadPool,
) -> Result<Vec<Vec<f64>>> {
    let cfg = &m.plan_c;
    let mech = MechanismConfig { alpha, ..m.mech };
    let per_agent: Vec<(usize, f64, f64, Vec<crate::incentive::ReportGain>)> = pool.install(|| {
        corpus
            .par_iter()
            .map(|econ| {
                (0..econ.len())
                    .filter(|&k| econ.side(k) != crate::market::Side::Null)
                    .map(|k| {
                        let (x0, g) = report_gains(econ, k, &cfg.grid, &mech)?;
                        Ok((k, x0, econ.cap(k), g))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
            .map(|v| v.into_iter().flatten().collect())
    })?;
    Ok(cfg
        .epsilons
        .iter()
        .map(|&epsilon| {
            let mech = MechanismConfig { epsilon, ..mech };
            per_agent
                .iter()
                .map(|(k, x0, cap, g)| {
                    let r = summarize_gains(*k, *x0, *cap, g, &mech, 0.0, &[]);
                    let det = if r.detectable_gain.is_finite() { r.detectable_gain } else { 0.0 };
                    (det - r.undetectable_gain).max(0.0) / mech.rho
                })
                .collect()
        })
        .collect())
}

pub fn plan_c(m: &RunManifest, runner: &Runner) -> Result<PlanCReport> {
    let cfg = &m.plan_c;
    let rho = m.mech.rho;
    let mut cells = Vec::new();
    let c_empirical;
    match cfg.mode {
        PlanCMode::BestResponse => {
            let corpus = cfg.sampler.corpus(m.seeds[0], cfg.n_economies);
            c_empirical = ensemble_c(&corpus);
            for &alpha in &cfg.alphas {
                let crit = critical_penalties(m, &corpus, alpha, &runner.pool)?;
                for (&epsilon, row) in cfg.epsilons.iter().zip(&crit) {
                    let search = min_passing_penalty(&cfg.bracket, cfg.halvings, cfg.target, |pi| {
                        let ok = row.iter().filter(|&&c| c <= pi + 1e-12).count();
                        Ok(ok as f64 / row.len().max(1) as f64)
                    })?;
                    info!("plan C: alpha={alpha} eps={epsilon} pi*={:?}", search.pi_star);
                    cells.push(PiStarCell { alpha, epsilon, search });
                }
            }
        }
        PlanCMode::Learned => {
            let mech0 = MechanismConfig { alpha: cfg.alphas[0], ..m.mech };
            c_empirical = grid_marginal_contribution(m, mech0, m.seeds[0], m.plan_b.c_episodes)?;
            for &alpha in &cfg.alphas {
                for &epsilon in &cfg.epsilons {
                    let search = min_passing_penalty(&cfg.bracket, cfg.halvings, cfg.target, |penalty| {
                        let key = CellKey { alpha, epsilon, penalty, ..base_key(m) };
                        let runs = run_cells(m, &[key], runner)?;
                        summarize(&runs)[0].truth_frac_mean.ok_or(Error::Empty("converged runs"))
                    })?;
                    info!("plan C: alpha={alpha} eps={epsilon} pi*={:?}", search.pi_star);
                    cells.push(PiStarCell { alpha, epsilon, search });
                }
            }
        }
    }

    let scale = if rho > 0.0 { c_empirical / rho } else { f64::INFINITY };
    let mut fits = Vec::new();
    for &epsilon in &cfg.epsilons {
        let pts: Vec<(f64, f64)> = cells
            .iter()
            .filter(|c| c.epsilon == epsilon)
            .filter_map(|c| c.search.pi_star.map(|p| (1.0 - c.alpha, p)))
            .collect();
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        if let Some((slope, intercept, r2)) = linear_fit(&xs, &ys) {
            fits.push(LinearFit { epsilon, n: xs.len(), slope, intercept, r2, slope_ratio: slope / scale });
        }
    }
    let tol = 1e-9;
    let get = |a: f64, e: f64| cells.iter().find(|c| c.alpha == a && c.epsilon == e).and_then(|c| c.search.pi_star);
    let mut alphas = cfg.alphas.clone();
    alphas.sort_by(f64::total_cmp);
    let mut epsilons = cfg.epsilons.clone();
    epsilons.sort_by(f64::total_cmp);
    let non_increasing_in_alpha = epsilons.iter().all(|&e| {
        alphas.windows(2).all(|w| match (get(w[0], e), get(w[1], e)) {
            (Some(lo), Some(hi)) => hi <= lo + tol,
            _ => true,
        })
    });
    let non_increasing_in_epsilon = alphas.iter().all(|&a| {
        epsilons.windows(2).all(|w| match (get(a, w[0]), get(a, w[1])) {
            (Some(lo), Some(hi)) => hi <= lo + tol,
            _ => true,
        })
    });
    let monotone_violations = cells.iter().map(|c| c.search.monotone_violations).sum();
    Ok(PlanCReport {
        schema: PLAN_SCHEMA.into(),
        manifest_hash: runner.manifest_hash.clone(),
        mode: cfg.mode,
        c_empirical,
        rho,
        cells,
        fits,
        non_increasing_in_alpha,
        non_increasing_in_epsilon,
        monotone_violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub entropy_coef: f64,
    pub hidden: usize,
    pub truth_frac_mean: Option<f64>,
    /// Mean TruthFrac at least 0.5.
    pub truthful: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDReport {
    pub schema: String,
    pub manifest_hash: String,
    pub seeds: Vec<u64>,
    pub alpha: f64,
    pub epsilon: f64,
    pub runs: Vec<CellRun>,
    pub cells: Vec<CellSummary>,
    pub classes: Vec<Classification>,
    /// Every configuration got the same classification.
    pub stable: bool,
}

pub fn plan_d(m: &RunManifest, runner: &Runner) -> Result<PlanDReport> {
    let d = &m.plan_d;
    let base = CellKey { alpha: d.alpha, epsilon: d.epsilon, ..base_key(m) };
    let keys: Vec<CellKey> = d
        .entropies
        .iter()
        .flat_map(|&entropy_coef| d.widths.iter().map(move |&hidden| CellKey { entropy_coef, hidden, ..base }))
        .collect();
    let runs = run_cells(m, &keys, runner)?;
    let cells = summarize(&runs);
    let classes: Vec<Classification> = cells
        .iter()
        .map(|c| Classification {
            entropy_coef: c.key.entropy_coef,
            hidden: c.key.hidden,
            truth_frac_mean: c.truth_frac_mean,
            truthful: c.truth_frac_mean.map(|t| t >= 0.5),
        })
        .collect();
    let stable = classes.iter().all(|c| c.truthful.is_some() && c.truthful == classes[0].truthful);
    Ok(PlanDReport {
        schema: PLAN_SCHEMA.into(),
        manifest_hash: runner.manifest_hash.clone(),
        seeds: m.seeds.clone(),
        alpha: d.alpha,
        epsilon: d.epsilon,
        runs,
        cells,
        classes,
        stable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn search_finds_step() {
        let s = min_passing_penalty(&[0.0, 1.0, 2.0, 4.0, 8.0], 7, 0.9, |pi| Ok(if pi >= 2.7 { 1.0 } else { 0.0 })).unwrap();
        let p = s.pi_star.unwrap();
        assert!(p >= 2.7 && p - 2.7 <= 1.3 / 128.0 + 1e-12, "{p}");
        assert_eq!(s.probes.len(), 4 + 7 + 1);
        assert_eq!(s.monotone_violations, 0);

        let s = min_passing_penalty(&[0.0, 1.0], 7, 0.9, |_| Ok(0.5)).unwrap();
        assert_eq!(s.pi_star, None);
        let s = min_passing_penalty(&[0.0, 1.0], 7, 0.9, |_| Ok(1.0)).unwrap();
        assert_eq!(s.pi_star, Some(0.0));
    }

    #[test]
    fn search_counts_non_monotone_probes() {
        // Passes at 2 and 8 but fails at 4: a noisy learner.
        let f = |pi: f64| Ok(if pi == 8.0 || (2.0..3.0).contains(&pi) { 1.0 } else { 0.0 });
        let s = min_passing_penalty(&[0.0, 2.0, 4.0, 8.0], 0, 0.9, f).unwrap();
        assert_eq!(s.pi_star, Some(2.0));
        assert_eq!(s.probes.iter().map(|p| p.0).collect::<Vec<_>>(), vec![0.0, 2.0, 4.0, 8.0]);
        assert_eq!(s.monotone_violations, 1);
    }

    #[test]
    fn fit_recovers_line() {
        let xs = [0.1, 0.2, 0.3, 0.5];
        let ys: Vec<f64> = xs.iter().map(|x| 4.0 * x - 0.2).collect();
        let (s, i, r2) = linear_fit(&xs, &ys).unwrap();
        assert!((s - 4.0).abs() < 1e-12 && (i + 0.2).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[1.0], &[1.0]).is_none());
        assert!(linear_fit(&[1.0, 1.0], &[1.0, 2.0]).is_none());
    }

    #[test]
    fn workers_resolution() {
        // PVL_WORKERS is not set in the test environment.
        if std::env::var("PVL_WORKERS").is_err() {
            assert_eq!(resolve_workers(Some(3), 5), 3);
            assert_eq!(resolve_workers(None, 5), 5);
            assert!(resolve_workers(None, 0) >= 1);
        }
    }
}
