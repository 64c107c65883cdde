use crate::critic::CriticStep;
use crate::error::{Error, Result};
use crate::sde::grid_steps;

/// Step-size schedule over the iteration counter k (k starts at 0).
///
/// All non-constant variants hold `base` for k ≤ `warmup` and decay after.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant(f64),
    /// base·ln(warmup/k) after warmup, floored at 0. This is the literal
    /// tabulated form; it turns negative past the warmup, hence the floor.
    Log { base: f64, warmup: f64 },
    /// base / (1 + ln(k/warmup)) after warmup.
    InvLog { base: f64, warmup: f64 },
    /// base·warmup/k after warmup.
    Inverse { base: f64, warmup: f64 },
}

impl LrSchedule {
    pub fn rate(&self, k: usize) -> f64 {
        let kf = k as f64;
        match *self {
            LrSchedule::Constant(a) => a,
            LrSchedule::Log { base, warmup } => {
                if kf <= warmup {
                    base
                } else {
                    (base * (warmup / kf).ln()).max(0.0)
                }
            }
            LrSchedule::InvLog { base, warmup } => {
                if kf <= warmup {
                    base
                } else {
                    base / (1.0 + (kf / warmup).ln())
                }
            }
            LrSchedule::Inverse { base, warmup } => {
                if kf <= warmup {
                    base
                } else {
                    base * warmup / kf
                }
            }
        }
    }

    pub fn base(&self) -> f64 {
        match *self {
            LrSchedule::Constant(a) => a,
            LrSchedule::Log { base, .. } | LrSchedule::InvLog { base, .. } | LrSchedule::Inverse { base, .. } => base,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LrSchedule::Constant(_) => "constant",
            LrSchedule::Log { .. } => "log",
            LrSchedule::InvLog { .. } => "invlog",
            LrSchedule::Inverse { .. } => "inverse",
        }
    }

    /// Rebuilds a schedule of kind `name` with the given base and warmup.
    pub fn from_name(name: &str, base: f64, warmup: f64) -> Option<Self> {
        Some(match name {
            "constant" => LrSchedule::Constant(base),
            "log" => LrSchedule::Log { base, warmup },
            "invlog" => LrSchedule::InvLog { base, warmup },
            "inverse" => LrSchedule::Inverse { base, warmup },
            _ => return None,
        })
    }

    pub fn warmup(&self) -> f64 {
        match *self {
            LrSchedule::Constant(_) => 0.0,
            LrSchedule::Log { warmup, .. } | LrSchedule::InvLog { warmup, .. } | LrSchedule::Inverse { warmup, .. } => {
                warmup
            }
        }
    }
}

/// How the CPPO inner loop takes its s gradient steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerOptimizer {
    /// θ ← θ + α·∇F at every step.
    Plain,
    /// Same step, halved until the penalized objective F does not decrease;
    /// after 30 halvings the step is dropped and the loop ends.
    Backtracking,
}

impl InnerOptimizer {
    pub fn name(&self) -> &'static str {
        match self {
            InnerOptimizer::Plain => "plain",
            InnerOptimizer::Backtracking => "backtracking",
        }
    }
}

/// Penalty statistic used by CPPO.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlVariant {
    /// Mean of √KL.
    Sqrt,
    /// Mean of KL.
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgoConfig {
    pub horizon: f64,
    pub dt: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Rollout-time batch size J.
    pub batch: usize,
    pub lr_policy: LrSchedule,
    pub lr_critic: LrSchedule,
    pub iterations: usize,
    pub inner_steps: usize,
    pub kl_radius: f64,
    pub kl_tolerance: f64,
    pub penalty_init: f64,
    pub inner_optimizer: InnerOptimizer,
    pub critic_step: CriticStep,
    /// Cap on the norm of each policy gradient before it is scaled by the
    /// learning rate; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl AlgoConfig {
    /// Linear-quadratic defaults.
    pub fn lq_defaults() -> Self {
        Self {
            horizon: 25.0,
            dt: 0.005,
            beta: 1.0,
            gamma: 0.1,
            batch: 100,
            lr_policy: LrSchedule::Inverse {
                base: 0.02,
                warmup: 100.0,
            },
            lr_critic: LrSchedule::Inverse {
                base: 0.01,
                warmup: 100.0,
            },
            iterations: 2000,
            inner_steps: 10,
            kl_radius: 0.0002,
            kl_tolerance: 0.5,
            penalty_init: 1.0,
            inner_optimizer: InnerOptimizer::Backtracking,
            critic_step: CriticStep::Normalized,
            grad_clip: Some(5.0),
            seed: 0,
        }
    }

    /// Pair-trading defaults.
    pub fn pairs_defaults() -> Self {
        Self {
            gamma: 0.0,
            lr_policy: LrSchedule::Inverse {
                base: 0.005,
                warmup: 100.0,
            },
            iterations: 200,
            kl_radius: 0.025,
            ..Self::lq_defaults()
        }
    }

    pub fn n_steps(&self) -> Result<usize> {
        grid_steps(self.horizon, self.dt)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_steps()?;
        if n < 2 {
            return Err(Error::Config("need at least two grid steps (T >= 2 dt)".into()));
        }
        let checks = [
            (self.beta > 0.0, "beta > 0"),
            (self.gamma >= 0.0, "gamma >= 0"),
            (self.batch >= 1, "J >= 1"),
            (self.kl_radius > 0.0, "delta > 0"),
            (self.kl_tolerance > 0.0, "epsilon > 0"),
            (self.penalty_init > 0.0, "initial penalty > 0"),
            (self.lr_policy.base() >= 0.0, "policy learning rate >= 0"),
            (self.lr_critic.base() >= 0.0, "critic learning rate >= 0"),
            (self.grad_clip.is_none_or(|c| c > 0.0), "grad_clip > 0"),
        ];
        for (ok, what) in checks {
            if !ok {
                return Err(Error::Config(format!("invariant violated: {what}")));
            }
        }
        Ok(())
    }
}
