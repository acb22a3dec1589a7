use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use pvl_core::enforcement::{effective_rho, MechanismConfig};
use pvl_core::experiments::plans::{self, CellKey, PlanAReport, Runner};
use pvl_core::experiments::scripted::ScriptedPolicy;
use pvl_core::experiments::trainer::{policy_bids, run_episode_with};
use pvl_core::experiments::RunManifest;
use pvl_core::incentive::run_suite;
use pvl_core::io;
use pvl_core::learning::policy::{ActionMap, PolicyCheckpoint};
use pvl_core::rng::{stream, Purpose};
use pvl_core::Error;

#[derive(Parser, Debug)]
#[command(name = "pvl", version, about = "Approximate VCG market laboratory")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Common {
    /// Manifest file (.toml or .json). Built-in defaults when omitted.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Replace the manifest's seed list with this one seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; PVL_WORKERS overrides.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Large profile: 12 agents, reference PPO settings, longer training.
    #[arg(long, global = true)]
    full: bool,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Learning-free incentive suite.
    Verify,
    /// One seeded episode; writes a JSONL trace and detections.csv.
    RunEpisode {
        /// truthful, silent, offset=<d> or checkpoint=<path>
        #[arg(long, default_value = "truthful")]
        policy: String,
        #[arg(long, default_value_t = 0)]
        episode: u64,
    },
    /// Truthfulness over (alpha, epsilon).
    PlanA,
    /// Penalty and discount sweep at the boundary cell.
    PlanB {
        /// Plan A JSON to take the boundary cell from. Defaults to
        /// <out>/results/plan_a.json when present.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Minimal penalty map.
    PlanC,
    /// Robustness to entropy and width.
    PlanD,
    /// Detection frequency under monitoring noise.
    EffectiveRho {
        /// Price deviation; defaults to twice epsilon.
        #[arg(long)]
        deviation: Option<f64>,
        /// Monitoring noise; defaults to the manifest value.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Render a long-format result CSV to SVG figures.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

enum Failure {
    Manifest(Error),
    Suite(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn load_manifest(c: &Common) -> Result<RunManifest, Failure> {
    let mut m = match &c.manifest {
        Some(p) => RunManifest::load(p).map_err(Failure::Manifest)?,
        None => RunManifest::default(),
    };
    if c.full {
        m.apply_full();
    }
    if let Some(s) = c.seed {
        m.seeds = vec![s];
    }
    m.validate().map_err(Failure::Manifest)?;
    Ok(m)
}

fn runner(c: &Common, m: &RunManifest, hash: &str) -> Result<Runner, Failure> {
    let mut r = Runner::new(plans::resolve_workers(c.workers, m.workers), hash)?;
    r.checkpoint_dir = Some(c.out.join("checkpoints"));
    Ok(r)
}

fn parse_policy(spec: &str, n: usize) -> Result<Either, Failure> {
    let bad = || Failure::Run(Error::Config(format!("unknown policy {spec:?}")));
    Ok(match spec.split_once('=') {
        None if spec == "truthful" => Either::Scripted(vec![ScriptedPolicy::Truthful; n]),
        None if spec == "silent" => Either::Scripted(vec![ScriptedPolicy::Silent; n]),
        Some(("offset", d)) => Either::Scripted(vec![ScriptedPolicy::Offset(d.parse().map_err(|_| bad())?); n]),
        Some(("checkpoint", p)) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Run(Error::Io { path: p.into(), source: e }))?;
            Either::Checkpoint(Box::new(PolicyCheckpoint::from_json(&text)?))
        }
        _ => return Err(bad()),
    })
}

enum Either {
    Scripted(Vec<ScriptedPolicy>),
    Checkpoint(Box<PolicyCheckpoint>),
}

fn plan_a_boundary(path: &Path) -> Result<CellKey, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Run(Error::Io { path: path.into(), source: e }))?;
    let r: PlanAReport = serde_json::from_str(&text).map_err(Error::from)?;
    Ok(r.boundary)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let c = &cli.common;
    let m = load_manifest(c)?;
    let hash = m.hash();
    let seed = m.seeds[0];
    let results = c.out.join("results");
    match cli.cmd {
        Cmd::Verify => {
            let pool = plans::worker_pool(plans::resolve_workers(c.workers, m.workers))?;
            let report = pool.install(|| run_suite(&m.incentive, &m.mech, seed, &hash))?;
            io::write_json(&results.join("incentive_report.json"), &report)?;
            let csv = format!("# manifest_hash={hash} seed={seed}\n{}", report.csv());
            io::atomic_write(&results.join("incentive.csv"), csv.as_bytes())?;
            println!(
                "C = {:.4}; exact max gain {:.2e}; lemma {}; threshold {}",
                report.c_empirical,
                report.exact_max_gain,
                if report.lemma.passed() { "ok" } else { "FAILED" },
                if report.threshold_checks_passed { "ok" } else { "FAILED" }
            );
            if !report.passed {
                let path = results.join("counterexample.json");
                io::write_json(&path, &report.lemma.counterexample)?;
                return Err(Failure::Suite(format!("property suite failed; counterexample in {}", path.display())));
            }
        }
        Cmd::RunEpisode { policy, episode } => {
            let mut env = m.env(m.mech).build(seed, 0)?;
            let map = ActionMap { bounds: m.bounds, squash: m.ppo.squash };
            let bidder = parse_policy(&policy, env.n_agents())?;
            let trace = run_episode_with(&mut env, episode, |env| match &bidder {
                Either::Scripted(p) => Ok(ScriptedPolicy::bids(p, env)),
                Either::Checkpoint(ck) => policy_bids(&ck.policy, &ck.normalizers, &map, env),
            })?;
            let traces = c.out.join("traces");
            let name = format!("episode_s{seed}_e{episode}");
            io::atomic_write(&traces.join(format!("{name}.jsonl")), io::trace_jsonl(&trace, &hash, seed)?.as_bytes())?;
            io::atomic_write(
                &traces.join(format!("{name}_detections.csv")),
                io::detections_csv(&trace, &hash, seed)?.as_bytes(),
            )?;
            println!("{} slots written to {}", trace.len(), traces.display());
        }
        Cmd::PlanA => {
            let r = plans::plan_a(&m, &runner(c, &m, &hash)?)?;
            io::write_plan_a(&c.out, &r)?;
            for cell in &r.cells {
                println!(
                    "alpha={} eps={} truth_frac={:?} diverged={}",
                    cell.key.alpha, cell.key.epsilon, cell.truth_frac_mean, cell.n_diverged
                );
            }
            println!("boundary: alpha={} eps={}", r.boundary.alpha, r.boundary.epsilon);
        }
        Cmd::PlanB { from } => {
            let path = from.unwrap_or_else(|| results.join("plan_a.json"));
            let boundary = if m.plan_b.alpha.is_some() && m.plan_b.epsilon.is_some() {
                None
            } else {
                Some(plan_a_boundary(&path)?)
            };
            let r = plans::plan_b(&m, boundary.as_ref(), &runner(c, &m, &hash)?)?;
            io::write_plan_b(&c.out, &r)?;
            println!("C = {:.4}, pi0 = {:.4}", r.c_empirical, r.pi0);
            for cell in &r.cells {
                println!(
                    "pi={:.3} gamma={} truth_frac={:?} converged={}/{} at {:?}",
                    cell.key.penalty,
                    cell.key.gamma,
                    cell.truth_frac_mean,
                    cell.n_converged,
                    cell.n_runs,
                    cell.convergence_mean
                );
            }
        }
        Cmd::PlanC => {
            let r = plans::plan_c(&m, &runner(c, &m, &hash)?)?;
            io::write_plan_c(&c.out, &r, seed)?;
            for f in &r.fits {
                println!(
                    "eps={}: slope {:.3} (x{:.2} of C/rho), intercept {:.3}, R2 {:.4}",
                    f.epsilon, f.slope, f.slope_ratio, f.intercept, f.r2
                );
            }
        }
        Cmd::PlanD => {
            let r = plans::plan_d(&m, &runner(c, &m, &hash)?)?;
            io::write_plan_d(&c.out, &r)?;
            for k in &r.classes {
                println!(
                    "entropy={} width={} truth_frac={:?} truthful={:?}",
                    k.entropy_coef, k.hidden, k.truth_frac_mean, k.truthful
                );
            }
            println!("stable: {}", r.stable);
        }
        Cmd::EffectiveRho { deviation, sigma, samples } => {
            let cfg = MechanismConfig { monitor_noise_sigma: sigma.unwrap_or(m.mech.monitor_noise_sigma), ..m.mech };
            let d = deviation.unwrap_or(2.0 * cfg.epsilon);
            let rho = effective_rho(&cfg, d, samples, &mut stream(seed, Purpose::MonteCarlo))?;
            let out = serde_json::json!({
                "manifest_hash": hash,
                "seed": seed,
                "epsilon": cfg.epsilon,
                "sigma": cfg.monitor_noise_sigma,
                "deviation": d,
                "samples": samples,
                "effective_rho": rho,
            });
            io::write_json(&results.join("effective_rho.json"), &out)?;
            println!("{rho}");
        }
        Cmd::Report { input } => {
            let text = std::fs::read_to_string(&input).map_err(|e| Failure::Run(Error::Io { path: input.clone(), source: e }))?;
            let rows = io::read_long_csv(&text)?;
            for (name, svg) in io::render_report(&rows)? {
                let p = c.out.join("figs").join(name);
                io::atomic_write(&p, svg.as_bytes())?;
                info!("wrote {}", p.display());
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Manifest(e)) => {
            eprintln!("invalid manifest: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Suite(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
