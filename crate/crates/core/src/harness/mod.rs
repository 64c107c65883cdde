//! Experiment orchestration: configuration, seeded runs, metrics and output files.

mod config;
mod verify;

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{
    cpg_iteration, cppo_iteration, discrete_baseline_iteration, DiscreteAlgo, IterationRecord, KlVariant, RunRngs,
    TrainState,
};
use crate::critic::{Critic, MlpCritic, QuadraticCritic};
use crate::error::{Error, Result};
use crate::lq::{kl_to_optimal, solve_lq, LqSolution};
use crate::nn::Mlp;
use crate::occupation::{discounted_return, sample_rollout_index, CheckRow};
use crate::policy::{BetaMlpPolicy, GaussianLinearPolicy, Policy};
use crate::rng::{self, base_seed, stream, Purpose};
use crate::sde::{grid_steps, make_bounded_env, make_lq_env, make_pair_trading_env, rollout_steps, EnvModel};
use crate::stats::McEstimate;

pub use config::{parse_config, parse_config_with, AlgoChoice, EnvChoice, RunConfig, VerifyConfig, OVERRIDE_LINE};
pub use verify::{run_verify, tv_to_ou_mixture};

/// Exit status of a run.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ALL_DIVERGED: i32 = 3;

/// One row of `metrics.csv`, describing the policy after iteration `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub k: usize,
    pub l2_to_theta_star: Option<f64>,
    pub kl_to_optimal: Option<f64>,
    pub eta_hat: Option<f64>,
    pub eta_se: Option<f64>,
    pub mean_kl_step: Option<f64>,
    pub c_penalty: Option<f64>,
    pub wall_ms: Option<f64>,
    pub diverged: bool,
}

pub const METRICS_HEADER: &str =
    "seed,k,l2_to_theta_star,kl_to_optimal,eta_hat,eta_se,mean_kl_step,c_penalty,wall_ms,diverged";

impl MetricsRow {
    fn empty(seed: u64, k: usize) -> Self {
        Self {
            seed,
            k,
            l2_to_theta_star: None,
            kl_to_optimal: None,
            eta_hat: None,
            eta_se: None,
            mean_kl_step: None,
            c_penalty: None,
            wall_ms: None,
            diverged: false,
        }
    }
}

/// Mean and standard error of Σ_i e^{−βt_i}(r + γp)δ over `n` rollouts from `x0`.
#[allow(clippy::too_many_arguments)]
pub fn mc_performance<R: Rng + ?Sized>(
    env: &EnvModel,
    policy: &Policy,
    beta: f64,
    gamma: f64,
    horizon: f64,
    dt: f64,
    n: usize,
    x0: &[f64],
    rng: &mut R,
) -> Result<McEstimate> {
    let steps = grid_steps(horizon, dt)?;
    let base = base_seed(rng);
    let returns = crate::occupation::map_rollouts(env, policy, x0, steps, dt, base, n, |t| {
        discounted_return(&t, beta, gamma)
    })?;
    Ok(McEstimate::from_samples(&returns))
}

/// Monte-Carlo value of a policy plus, on LQ, its divergence from π* on
/// states drawn at rollout times of the same evaluation rollouts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub eta: McEstimate,
    pub kl_to_optimal: Option<f64>,
    pub l2_to_theta_star: Option<f64>,
}

pub fn build_env(cfg: &RunConfig) -> Result<EnvModel> {
    match cfg.env {
        EnvChoice::Lq => make_lq_env(cfg.lq),
        EnvChoice::Pairs => make_pair_trading_env(cfg.pairs),
        EnvChoice::SyntheticBounded => make_bounded_env(cfg.bounded),
    }
}

/// Initial policy and critic for one seed.
pub fn initial_state(cfg: &RunConfig, seed: u64) -> TrainState {
    let (policy, critic): (Policy, Critic) = match cfg.env {
        EnvChoice::Lq | EnvChoice::SyntheticBounded => {
            let [a, b, c] = cfg.theta0;
            (GaussianLinearPolicy::new(a, b, c).into(), QuadraticCritic::default().into())
        }
        EnvChoice::Pairs => {
            let mut r = stream(seed, Purpose::Init);
            let h = cfg.hidden;
            let net = Mlp::uniform(&[2, h, h, 2], -0.5, 0.5, &mut r);
            let critic = MlpCritic::uniform(2, h, &mut r);
            (BetaMlpPolicy::new(net, cfg.pairs.ell).into(), critic.into())
        }
    };
    TrainState::new(policy, critic, &cfg.algo_cfg)
}

fn l2_to_star(policy: &Policy, sol: &LqSolution) -> Option<f64> {
    match policy {
        Policy::Gaussian(g) => Some((g.theta[0] - sol.mean_slope).hypot(g.theta[1] - sol.mean_intercept)),
        Policy::Beta(_) => None,
    }
}

pub fn evaluate<R: Rng + ?Sized>(
    env: &EnvModel,
    policy: &Policy,
    cfg: &RunConfig,
    sol: Option<&LqSolution>,
    rng: &mut R,
) -> Result<Evaluation> {
    let a = &cfg.algo_cfg;
    let steps = a.n_steps()?;
    let base = base_seed(rng);
    let per_traj: Vec<(f64, Vec<f64>)> = (0..cfg.mc_eval_samples)
        .into_par_iter()
        .map(|j| {
            let mut r = rng::indexed(base, j as u64);
            let t = rollout_steps(env, policy, &cfg.x0, steps, a.dt, &mut r)?;
            let g = discounted_return(&t, a.beta, a.gamma);
            let mut xs = Vec::new();
            if sol.is_some() {
                for _ in 0..cfg.kl_states_per_rollout {
                    let tau = sample_rollout_index(a.beta, a.dt, steps, &mut r)?;
                    xs.push(t.state(tau.index)[0]);
                }
            }
            Ok((g, xs))
        })
        .collect::<Result<_>>()?;
    let returns: Vec<f64> = per_traj.iter().map(|p| p.0).collect();
    let (kl, l2) = match (sol, policy) {
        (Some(sol), Policy::Gaussian(g)) => {
            let states: Vec<f64> = per_traj.iter().flat_map(|p| p.1.iter().copied()).collect();
            (Some(kl_to_optimal(g, sol, &states)), l2_to_star(policy, sol))
        }
        _ => (None, None),
    };
    Ok(Evaluation {
        eta: McEstimate::from_samples(&returns),
        kl_to_optimal: kl,
        l2_to_theta_star: l2,
    })
}

/// Parameters of one seed after `k` completed iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub k: usize,
    pub policy: Vec<f64>,
    pub critic: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub records: Vec<IterationRecord>,
    pub checkpoints: Vec<Checkpoint>,
    pub initial: Evaluation,
    pub last: Option<Evaluation>,
    /// Reason for stopping early, if the run diverged.
    pub diverged: Option<String>,
    pub final_state: TrainState,
}

fn step(env: &EnvModel, st: &mut TrainState, cfg: &RunConfig, rngs: &mut RunRngs) -> Result<IterationRecord> {
    let a = &cfg.algo_cfg;
    match cfg.algo {
        AlgoChoice::Cpg => cpg_iteration(env, st, &cfg.x0, a, rngs),
        AlgoChoice::Cppo => cppo_iteration(env, st, &cfg.x0, a, KlVariant::Sqrt, rngs),
        AlgoChoice::CppoNst => cppo_iteration(env, st, &cfg.x0, a, KlVariant::Linear, rngs),
        AlgoChoice::Dpg => discrete_baseline_iteration(env, st, &cfg.x0, a, DiscreteAlgo::Dpg, rngs),
        AlgoChoice::Dppo => discrete_baseline_iteration(env, st, &cfg.x0, a, DiscreteAlgo::Dppo, rngs),
        AlgoChoice::Verify => Err(Error::Config("verify is not a training algorithm".into())),
    }
}

fn oracle(cfg: &RunConfig) -> Result<Option<LqSolution>> {
    match cfg.env {
        EnvChoice::Lq => solve_lq(&cfg.lq).map(Some),
        _ => Ok(None),
    }
}

/// Trains one seed. Divergence ends the seed with a marked row instead of an error.
pub fn run_seed(cfg: &RunConfig, seed: u64) -> Result<SeedOutcome> {
    let env = build_env(cfg)?;
    let sol = oracle(cfg)?;
    let mut st = initial_state(cfg, seed);
    let mut rngs = RunRngs::new(seed);
    let mut eval_rng = stream(seed, Purpose::Evaluation);
    let initial = evaluate(&env, &st.policy, cfg, sol.as_ref(), &mut eval_rng)?;
    let mut out = SeedOutcome {
        seed,
        rows: Vec::new(),
        records: Vec::new(),
        checkpoints: vec![Checkpoint {
            k: 0,
            policy: st.policy.params(),
            critic: st.critic.params(),
        }],
        initial,
        last: None,
        diverged: None,
        final_state: st.clone(),
    };
    let iters = cfg.algo_cfg.iterations;
    for k in 0..iters {
        let mut row = MetricsRow::empty(seed, k);
        let rec = match step(&env, &mut st, cfg, &mut rngs) {
            Ok(r) => r,
            Err(e) => {
                row.diverged = true;
                out.rows.push(row);
                out.diverged = Some(e.to_string());
                break;
            }
        };
        row.mean_kl_step = Some(rec.kl_step);
        row.c_penalty = rec.c_penalty;
        row.wall_ms = cfg.wall_clock.then_some(rec.wall_ms);
        if let Some(s) = &sol {
            row.l2_to_theta_star = l2_to_star(&st.policy, s);
        }
        let done = k + 1;
        if done % cfg.eval_stride.max(1) == 0 || done == iters {
            match evaluate(&env, &st.policy, cfg, sol.as_ref(), &mut eval_rng) {
                Ok(ev) => {
                    row.eta_hat = Some(ev.eta.mean);
                    row.eta_se = Some(ev.eta.se);
                    row.kl_to_optimal = ev.kl_to_optimal;
                    out.last = Some(ev);
                }
                Err(e) => {
                    row.diverged = true;
                    out.diverged = Some(e.to_string());
                }
            }
        }
        if (cfg.checkpoint_stride > 0 && done % cfg.checkpoint_stride == 0) || done == iters {
            out.checkpoints.push(Checkpoint {
                k: done,
                policy: st.policy.params(),
                critic: st.critic.params(),
            });
        }
        out.records.push(rec);
        let stop = row.diverged;
        out.rows.push(row);
        if stop {
            break;
        }
    }
    out.final_state = st;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub seeds: Vec<SeedOutcome>,
    pub checks: Vec<CheckRow>,
    pub exit_code: i32,
}

/// Runs every seed (in parallel, output in seed-list order) or the
/// verification suite, and writes the output directory.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("resolved_config.txt"), cfg.to_text())?;
    if cfg.algo == AlgoChoice::Verify {
        let checks = run_verify(cfg)?;
        write_checks(&cfg.out.join("verification.csv"), &checks)?;
        return Ok(RunReport {
            seeds: Vec::new(),
            checks,
            exit_code: EXIT_OK,
        });
    }
    let seeds = cfg
        .seeds
        .par_iter()
        .map(|&s| run_seed(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    write_metrics(&cfg.out.join("metrics.csv"), &seeds)?;
    write_summary(&cfg.out.join("summary.csv"), &seeds)?;
    write_checkpoints(&cfg.out, &seeds)?;
    let exit_code = if seeds.iter().all(|s| s.diverged.is_some()) {
        EXIT_ALL_DIVERGED
    } else {
        EXIT_OK
    };
    Ok(RunReport {
        seeds,
        checks: Vec::new(),
        exit_code,
    })
}

pub fn write_metrics(path: &Path, seeds: &[SeedOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in seeds {
        for row in &s.rows {
            w.serialize(row)?;
        }
    }
    if seeds.iter().all(|s| s.rows.is_empty()) {
        w.write_record(METRICS_HEADER.split(','))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    seed: u64,
    initial_eta: f64,
    initial_eta_se: f64,
    final_eta: Option<f64>,
    final_eta_se: Option<f64>,
    initial_l2_to_theta_star: Option<f64>,
    final_l2_to_theta_star: Option<f64>,
    initial_kl_to_optimal: Option<f64>,
    final_kl_to_optimal: Option<f64>,
    diverged: bool,
}

fn write_summary(path: &Path, seeds: &[SeedOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in seeds {
        w.serialize(SummaryRow {
            seed: s.seed,
            initial_eta: s.initial.eta.mean,
            initial_eta_se: s.initial.eta.se,
            final_eta: s.last.map(|e| e.eta.mean),
            final_eta_se: s.last.map(|e| e.eta.se),
            initial_l2_to_theta_star: s.initial.l2_to_theta_star,
            final_l2_to_theta_star: s.last.and_then(|e| e.l2_to_theta_star),
            initial_kl_to_optimal: s.initial.kl_to_optimal,
            final_kl_to_optimal: s.last.and_then(|e| e.kl_to_optimal),
            diverged: s.diverged.is_some(),
        })?;
    }
    w.flush()?;
    Ok(())
}

fn flat(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

/// `checkpoint_<k>.txt`: per seed, one `policy <seed> ...` and one
/// `critic <seed> ...` line of space-separated decimals.
fn write_checkpoints(dir: &Path, seeds: &[SeedOutcome]) -> Result<()> {
    let mut ks: Vec<usize> = seeds.iter().flat_map(|s| s.checkpoints.iter().map(|c| c.k)).collect();
    ks.sort_unstable();
    ks.dedup();
    for k in ks {
        let mut f = fs::File::create(dir.join(format!("checkpoint_{k}.txt")))?;
        for s in seeds {
            if let Some(c) = s.checkpoints.iter().find(|c| c.k == k) {
                writeln!(f, "policy {} {}", s.seed, flat(&c.policy))?;
                writeln!(f, "critic {} {}", s.seed, flat(&c.critic))?;
            }
        }
    }
    Ok(())
}

/// Reads the `(seed, policy, critic)` entries of a checkpoint file.
/// `(seed, policy parameters, critic parameters)`.
pub type CheckpointEntry = (u64, Vec<f64>, Vec<f64>);

pub fn read_checkpoint(path: &Path) -> Result<Vec<CheckpointEntry>> {
    let text = fs::read_to_string(path)?;
    let mut out: Vec<CheckpointEntry> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let bad = |msg: &str| Error::Parse {
            line: i + 1,
            msg: msg.to_string(),
        };
        let mut it = line.split_whitespace();
        let kind = it.next().ok_or_else(|| bad("empty line"))?;
        let seed: u64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("missing seed"))?;
        let vals = it.map(|v| v.parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>().map_err(|_| bad("bad number"))?;
        match kind {
            "policy" => out.push((seed, vals, Vec::new())),
            "critic" => match out.last_mut() {
                Some(last) if last.0 == seed => last.2 = vals,
                _ => return Err(bad("critic line without policy line")),
            },
            _ => return Err(bad("unknown entry")),
        }
    }
    Ok(out)
}

pub fn write_checks(path: &Path, checks: &[CheckRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for c in checks {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{ActionSpace, RegularizerKind};
    use std::sync::Arc;

    #[test]
    fn deterministic_reward_has_zero_variance() {
        let env = EnvModel::new(
            1,
            1,
            Arc::new(|_x, _a, o| o[0] = 0.0),
            Arc::new(|_x, _a, o| o[0] = 1.0),
            Arc::new(|_x, _a| 1.0),
            RegularizerKind::None,
            ActionSpace::Real,
        );
        let p: Policy = GaussianLinearPolicy::new(0.0, 0.0, 0.0).into();
        let mut r = stream(0, Purpose::Evaluation);
        let e = mc_performance(&env, &p, 1.0, 0.0, 25.0, 0.005, 2, &[0.0], &mut r).unwrap();
        assert_eq!(e.se, 0.0);
        assert!((e.mean - crate::occupation::discrete_mass(1.0, 0.005, 5000)).abs() < 1e-12);
        assert!((e.mean - (1.0 - (-25.0f64).exp())).abs() < 0.0026);
    }

    #[test]
    fn single_iteration_run_writes_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!("K = 1\nT = 2\ndt = 0.01\nmc_eval_samples = 4\nseeds = 4,5\nout = {}", dir.path().display());
        let cfg = parse_config(&text).unwrap();
        let rep = run(&cfg).unwrap();
        assert_eq!(rep.exit_code, EXIT_OK);
        let rows = read_metrics(&dir.path().join("metrics.csv")).unwrap();
        assert_eq!(rows.len(), 2);
        let header = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(header.lines().next().unwrap(), METRICS_HEADER);
        let ck = read_checkpoint(&dir.path().join("checkpoint_1.txt")).unwrap();
        assert_eq!(ck.len(), 2);
        assert_eq!(ck[0].1, rep.seeds[0].final_state.policy.params());
    }
}
