//! `key = value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::algorithms::{AlgoConfig, InnerOptimizer, LrSchedule};
use crate::critic::CriticStep;
use crate::error::{Error, Result};
use crate::sde::{grid_steps, BoundedParams, LqParams, PairTradingParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvChoice {
    Lq,
    Pairs,
    SyntheticBounded,
}

impl EnvChoice {
    pub fn name(&self) -> &'static str {
        match self {
            EnvChoice::Lq => "lq",
            EnvChoice::Pairs => "pairs",
            EnvChoice::SyntheticBounded => "synthetic-bounded",
        }
    }
}

impl FromStr for EnvChoice {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "lq" => Ok(EnvChoice::Lq),
            "pairs" => Ok(EnvChoice::Pairs),
            "synthetic-bounded" => Ok(EnvChoice::SyntheticBounded),
            _ => Err(format!("unknown env `{s}` (expected lq, pairs, synthetic-bounded)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlgoChoice {
    Cpg,
    Cppo,
    CppoNst,
    Dpg,
    Dppo,
    Verify,
}

impl AlgoChoice {
    pub fn name(&self) -> &'static str {
        match self {
            AlgoChoice::Cpg => "cpg",
            AlgoChoice::Cppo => "cppo",
            AlgoChoice::CppoNst => "cppo-nst",
            AlgoChoice::Dpg => "dpg",
            AlgoChoice::Dppo => "dppo",
            AlgoChoice::Verify => "verify",
        }
    }

    pub fn penalized(&self) -> bool {
        matches!(self, AlgoChoice::Cppo | AlgoChoice::CppoNst | AlgoChoice::Dppo)
    }
}

impl FromStr for AlgoChoice {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cpg" => Ok(AlgoChoice::Cpg),
            "cppo" => Ok(AlgoChoice::Cppo),
            "cppo-nst" => Ok(AlgoChoice::CppoNst),
            "dpg" => Ok(AlgoChoice::Dpg),
            "dppo" => Ok(AlgoChoice::Dppo),
            "verify" => Ok(AlgoChoice::Verify),
            _ => Err(format!("unknown algo `{s}` (expected cpg, cppo, cppo-nst, dpg, dppo, verify)")),
        }
    }
}

/// Sample sizes of the verification suite.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub trajectories: usize,
    pub pd_pairs: usize,
    pub pd_lhs: usize,
    pub pd_rhs: usize,
    pub coupling_pairs: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            trajectories: 10_000,
            pd_pairs: 3,
            pd_lhs: 4_000,
            pd_rhs: 40_000,
            coupling_pairs: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvChoice,
    pub algo: AlgoChoice,
    pub algo_cfg: AlgoConfig,
    pub lq: LqParams,
    pub pairs: PairTradingParams,
    pub bounded: BoundedParams,
    pub x0: Vec<f64>,
    /// Initial Gaussian-linear parameters (LQ and bounded envs).
    pub theta0: [f64; 3],
    /// Hidden width of the policy and critic networks (pair trading).
    pub hidden: usize,
    pub mc_eval_samples: usize,
    pub eval_stride: usize,
    /// Rollout times drawn per evaluation rollout for kl_to_optimal.
    pub kl_states_per_rollout: usize,
    /// Checkpoint every this many iterations; 0 writes only the first and last.
    pub checkpoint_stride: usize,
    pub wall_clock: bool,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub verify: VerifyConfig,
}

impl RunConfig {
    /// Defaults for `env` with the algorithm set to CPG.
    pub fn defaults(env: EnvChoice) -> Self {
        let (algo_cfg, x0) = match env {
            EnvChoice::Lq => (AlgoConfig::lq_defaults(), vec![0.0]),
            EnvChoice::Pairs => (AlgoConfig::pairs_defaults(), vec![PairTradingParams::benchmark().theta_mean, 1.0]),
            EnvChoice::SyntheticBounded => (AlgoConfig::lq_defaults(), vec![0.0]),
        };
        let lq = LqParams {
            beta: algo_cfg.beta,
            gamma: algo_cfg.gamma,
            ..LqParams::benchmark()
        };
        Self {
            env,
            algo: AlgoChoice::Cpg,
            algo_cfg,
            lq,
            pairs: PairTradingParams::benchmark(),
            bounded: BoundedParams::default(),
            x0,
            theta0: [0.0; 3],
            hidden: 16,
            mc_eval_samples: 100,
            eval_stride: 10,
            kl_states_per_rollout: 10,
            checkpoint_stride: 0,
            wall_clock: false,
            seeds: vec![0],
            out: PathBuf::from("out"),
            verify: VerifyConfig::default(),
        }
    }

    /// Canonical `key = value` text; parsing it reproduces `self`.
    pub fn to_text(&self) -> String {
        let c = &self.algo_cfg;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("env", self.env.name().into());
        kv("algo", self.algo.name().into());
        kv("seeds", join(&self.seeds));
        kv("out", self.out.display().to_string());
        kv("T", c.horizon.to_string());
        kv("dt", c.dt.to_string());
        kv("beta", c.beta.to_string());
        kv("gamma", c.gamma.to_string());
        kv("J", c.batch.to_string());
        kv("K", c.iterations.to_string());
        kv("s", c.inner_steps.to_string());
        kv("delta", c.kl_radius.to_string());
        kv("epsilon", c.kl_tolerance.to_string());
        kv("c_init", c.penalty_init.to_string());
        kv("inner_optimizer", c.inner_optimizer.name().into());
        kv("critic_step", c.critic_step.name().into());
        kv("grad_clip", c.grad_clip.map_or("none".into(), |v| v.to_string()));
        kv("lr_policy", c.lr_policy.base().to_string());
        kv("lr_policy_schedule", c.lr_policy.name().into());
        kv("lr_policy_warmup", c.lr_policy.warmup().to_string());
        kv("lr_critic", c.lr_critic.base().to_string());
        kv("lr_critic_schedule", c.lr_critic.name().into());
        kv("lr_critic_warmup", c.lr_critic.warmup().to_string());
        kv("x0", join(&self.x0));
        kv("theta0", join(&self.theta0));
        kv("hidden", self.hidden.to_string());
        kv("mc_eval_samples", self.mc_eval_samples.to_string());
        kv("eval_stride", self.eval_stride.to_string());
        kv("kl_states_per_rollout", self.kl_states_per_rollout.to_string());
        kv("checkpoint_stride", self.checkpoint_stride.to_string());
        kv("wall_clock", self.wall_clock.to_string());
        let l = &self.lq;
        for (k, v) in [
            ("A", l.a),
            ("B", l.b),
            ("C", l.c),
            ("D", l.d),
            ("M", l.m),
            ("N", l.n),
            ("R", l.r),
            ("P", l.p),
            ("Q", l.q),
        ] {
            kv(&format!("lq.{k}"), v.to_string());
        }
        let p = &self.pairs;
        for (k, v) in [
            ("k", p.k),
            ("theta_mean", p.theta_mean),
            ("eta", p.eta),
            ("rho", p.rho),
            ("sigma", p.sigma),
            ("r_f", p.r_f),
            ("ell", p.ell),
        ] {
            kv(&format!("pairs.{k}"), v.to_string());
        }
        let b = &self.bounded;
        for (k, v) in [("lambda", b.lambda), ("s0", b.s0), ("s1", b.s1)] {
            kv(&format!("bounded.{k}"), v.to_string());
        }
        let v = &self.verify;
        kv("verify.trajectories", v.trajectories.to_string());
        kv("verify.pd_pairs", v.pd_pairs.to_string());
        kv("verify.pd_lhs", v.pd_lhs.to_string());
        kv("verify.pd_rhs", v.pd_rhs.to_string());
        kv("verify.coupling_pairs", v.coupling_pairs.to_string());
        s
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Parses `text`, then applies `overrides` (as if appended to the document).
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with(text, &[])
}

/// Line number reported for overrides, which have no source line.
pub const OVERRIDE_LINE: usize = 0;

pub fn parse_config_with(text: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut entries: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected `key = value`, found `{line}`"),
        })?;
        entries.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    for (k, v) in overrides {
        entries.push((OVERRIDE_LINE, k.clone(), v.clone()));
    }
    // The environment selects the defaults, so it is resolved first.
    let env = match entries.iter().rev().find(|(_, k, _)| k == "env") {
        Some((line, _, v)) => v.parse().map_err(|msg| Error::Parse { line: *line, msg })?,
        None => EnvChoice::Lq,
    };
    let mut cfg = RunConfig::defaults(env);
    let mut sched = Schedules::from(&cfg.algo_cfg);
    let mut grid_line = OVERRIDE_LINE;
    for (line, key, value) in &entries {
        apply(&mut cfg, &mut sched, key, value).map_err(|msg| Error::Parse { line: *line, msg })?;
        if key == "T" || key == "dt" {
            grid_line = *line;
        }
    }
    cfg.algo_cfg.lr_policy = sched.policy()?;
    cfg.algo_cfg.lr_critic = sched.critic()?;
    validate(&cfg, grid_line)?;
    Ok(cfg)
}

struct Schedules {
    policy: (String, f64, f64),
    critic: (String, f64, f64),
}

impl Schedules {
    fn from(c: &AlgoConfig) -> Self {
        Self {
            policy: (c.lr_policy.name().into(), c.lr_policy.base(), c.lr_policy.warmup()),
            critic: (c.lr_critic.name().into(), c.lr_critic.base(), c.lr_critic.warmup()),
        }
    }

    fn build(s: &(String, f64, f64)) -> Result<LrSchedule> {
        LrSchedule::from_name(&s.0, s.1, s.2).ok_or_else(|| Error::Config(format!("unknown schedule `{}`", s.0)))
    }

    fn policy(&self) -> Result<LrSchedule> {
        Self::build(&self.policy)
    }

    fn critic(&self) -> Result<LrSchedule> {
        Self::build(&self.critic)
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}` for key `{key}`"))
}

fn list<T: FromStr>(key: &str, v: &str) -> std::result::Result<Vec<T>, String> {
    v.split(',').map(|s| num(key, s.trim())).collect()
}

fn apply(cfg: &mut RunConfig, sched: &mut Schedules, key: &str, v: &str) -> std::result::Result<(), String> {
    let a = &mut cfg.algo_cfg;
    match key {
        "env" => {}
        "algo" => cfg.algo = v.parse()?,
        "seed" => cfg.seeds = vec![num(key, v)?],
        "seeds" => cfg.seeds = list(key, v)?,
        "out" => cfg.out = PathBuf::from(v),
        "T" => a.horizon = num(key, v)?,
        "dt" => a.dt = num(key, v)?,
        "beta" => {
            a.beta = num(key, v)?;
            cfg.lq.beta = a.beta;
        }
        "gamma" => {
            a.gamma = num(key, v)?;
            cfg.lq.gamma = a.gamma;
        }
        "J" => a.batch = num(key, v)?,
        "K" => a.iterations = num(key, v)?,
        "s" => a.inner_steps = num(key, v)?,
        "delta" => a.kl_radius = num(key, v)?,
        "epsilon" => a.kl_tolerance = num(key, v)?,
        "c_init" => a.penalty_init = num(key, v)?,
        "inner_optimizer" => {
            a.inner_optimizer = match v {
                "plain" => InnerOptimizer::Plain,
                "backtracking" => InnerOptimizer::Backtracking,
                _ => return Err(format!("unknown inner optimizer `{v}` (expected plain, backtracking)")),
            }
        }
        "grad_clip" => {
            a.grad_clip = match v {
                "none" => None,
                _ => Some(num(key, v)?),
            }
        }
        "critic_step" => {
            a.critic_step = CriticStep::from_name(v)
                .ok_or_else(|| format!("unknown critic step `{v}` (expected plain, normalized)"))?
        }
        "lr_policy" => sched.policy.1 = num(key, v)?,
        "lr_policy_schedule" => sched.policy.0 = schedule_name(v)?,
        "lr_policy_warmup" => sched.policy.2 = num(key, v)?,
        "lr_critic" => sched.critic.1 = num(key, v)?,
        "lr_critic_schedule" => sched.critic.0 = schedule_name(v)?,
        "lr_critic_warmup" => sched.critic.2 = num(key, v)?,
        "x0" => cfg.x0 = list(key, v)?,
        "theta0" => {
            let t: Vec<f64> = list(key, v)?;
            cfg.theta0 = t.try_into().map_err(|_| "theta0 needs three values".to_string())?;
        }
        "hidden" => cfg.hidden = num(key, v)?,
        "mc_eval_samples" => cfg.mc_eval_samples = num(key, v)?,
        "eval_stride" => cfg.eval_stride = num(key, v)?,
        "kl_states_per_rollout" => cfg.kl_states_per_rollout = num(key, v)?,
        "checkpoint_stride" => cfg.checkpoint_stride = num(key, v)?,
        "wall_clock" => cfg.wall_clock = num(key, v)?,
        "lq.A" => cfg.lq.a = num(key, v)?,
        "lq.B" => cfg.lq.b = num(key, v)?,
        "lq.C" => cfg.lq.c = num(key, v)?,
        "lq.D" => cfg.lq.d = num(key, v)?,
        "lq.M" => cfg.lq.m = num(key, v)?,
        "lq.N" => cfg.lq.n = num(key, v)?,
        "lq.R" => cfg.lq.r = num(key, v)?,
        "lq.P" => cfg.lq.p = num(key, v)?,
        "lq.Q" => cfg.lq.q = num(key, v)?,
        "pairs.k" => cfg.pairs.k = num(key, v)?,
        "pairs.theta_mean" => cfg.pairs.theta_mean = num(key, v)?,
        "pairs.eta" => cfg.pairs.eta = num(key, v)?,
        "pairs.rho" => cfg.pairs.rho = num(key, v)?,
        "pairs.sigma" => cfg.pairs.sigma = num(key, v)?,
        "pairs.r_f" => cfg.pairs.r_f = num(key, v)?,
        "pairs.ell" => cfg.pairs.ell = num(key, v)?,
        "bounded.lambda" => cfg.bounded.lambda = num(key, v)?,
        "bounded.s0" => cfg.bounded.s0 = num(key, v)?,
        "bounded.s1" => cfg.bounded.s1 = num(key, v)?,
        "verify.trajectories" => cfg.verify.trajectories = num(key, v)?,
        "verify.pd_pairs" => cfg.verify.pd_pairs = num(key, v)?,
        "verify.pd_lhs" => cfg.verify.pd_lhs = num(key, v)?,
        "verify.pd_rhs" => cfg.verify.pd_rhs = num(key, v)?,
        "verify.coupling_pairs" => cfg.verify.coupling_pairs = num(key, v)?,
        _ => return Err(format!("unknown key `{key}`")),
    }
    Ok(())
}

fn schedule_name(v: &str) -> std::result::Result<String, String> {
    match v {
        "constant" | "log" | "invlog" | "inverse" => Ok(v.to_string()),
        _ => Err(format!("unknown schedule `{v}` (expected constant, log, invlog, inverse)")),
    }
}

fn validate(cfg: &RunConfig, grid_line: usize) -> Result<()> {
    let a = &cfg.algo_cfg;
    grid_steps(a.horizon, a.dt).map_err(|e| Error::Parse {
        line: grid_line,
        msg: e.to_string(),
    })?;
    a.validate()?;
    if cfg.seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }
    if cfg.mc_eval_samples < 2 {
        return Err(Error::Config("mc_eval_samples must be at least 2".into()));
    }
    let dim = match cfg.env {
        EnvChoice::Pairs => 2,
        _ => 1,
    };
    if cfg.x0.len() != dim {
        return Err(Error::Config(format!("x0 needs {dim} value(s) for env {}", cfg.env.name())));
    }
    match cfg.env {
        EnvChoice::Lq => cfg.lq.validate()?,
        EnvChoice::Pairs => {
            cfg.pairs.validate()?;
            if cfg.x0[1] <= -1.0 {
                return Err(Error::Config("initial wealth must exceed -1".into()));
            }
        }
        EnvChoice::SyntheticBounded => {}
    }
    if cfg.hidden == 0 {
        return Err(Error::Config("hidden width must be positive".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_lq_defaults() {
        let c = parse_config("").unwrap();
        let a = &c.algo_cfg;
        assert_eq!(c.env, EnvChoice::Lq);
        assert_eq!(
            (a.horizon, a.dt, a.batch, a.beta, a.iterations, a.inner_steps, a.kl_radius, a.kl_tolerance),
            (25.0, 0.005, 100, 1.0, 2000, 10, 0.0002, 0.5)
        );
        assert_eq!(a.lr_policy.base(), 0.02);
        assert_eq!(a.lr_critic.base(), 0.01);
    }

    #[test]
    fn pairs_defaults() {
        let c = parse_config("env = pairs").unwrap();
        assert_eq!(c.algo_cfg.iterations, 200);
        assert_eq!(c.algo_cfg.kl_radius, 0.025);
        assert_eq!(c.algo_cfg.lr_policy.base(), 0.005);
        assert_eq!(c.x0, vec![7.0, 1.0]);
    }

    #[test]
    fn grid_multiples() {
        let c = parse_config("dt = 0.004").unwrap();
        assert_eq!(c.algo_cfg.n_steps().unwrap(), 6250);
        match parse_config("# comment\n\ndt = 0.007") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        match parse_config("K = 5\nbogus = 1") {
            Err(Error::Parse { line: 2, msg }) => assert!(msg.contains("bogus")),
            other => panic!("{other:?}"),
        }
        match parse_config("K = five") {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(parse_config("no equals sign").is_err());
    }

    #[test]
    fn comments_and_overrides() {
        let c = parse_config_with(
            "algo = cppo  # trailing\nseeds = 1, 2, 3\n",
            &[("algo".into(), "cpg".into()), ("seed".into(), "9".into())],
        )
        .unwrap();
        assert_eq!(c.algo, AlgoChoice::Cpg);
        assert_eq!(c.seeds, vec![9]);
    }

    #[test]
    fn resolved_text_round_trips() {
        for text in ["", "env = pairs\nalgo = cppo\nseeds = 3,1", "env = synthetic-bounded\nlr_policy_schedule = log"] {
            let c = parse_config(text).unwrap();
            assert_eq!(parse_config(&c.to_text()).unwrap(), c);
        }
    }
}
