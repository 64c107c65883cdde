//! Training loops: CPG, CPPO (square-root and linear KL penalties), the
//! soft-q improvement step, and discrete-time PG/PPO baselines.

mod baselines;
mod config;
mod cppo;
mod soft_q;

use std::time::Instant;

use crate::critic::{mstde_sweep, q_estimate, Critic};
use crate::error::{Error, Result};
use crate::occupation::{sample_rollout_index, SurrogateSample};
use crate::policy::{Policy, PolicyGradient};
use crate::rng::{stream, Purpose, SimRng};
use crate::sde::{rollout_steps, EnvModel, RegularizerKind, Trajectory};

pub use baselines::{discrete_baseline_iteration, dpg_gradient, td0_sweep, DiscreteAlgo};
pub use config::{AlgoConfig, InnerOptimizer, KlVariant, LrSchedule};
pub use cppo::{
    cppo_iteration, mean_kl, mean_sqrt_kl, penalty_adapt, penalty_statistic, PenaltyAction, PenaltyState,
    SQRT_KL_FLOOR,
};
pub use soft_q::{soft_q_improvement, soft_q_policy, Improvement};

/// Generators owned by one training run: one for rollouts (actions and
/// Brownian increments), one for rollout-time draws.
#[derive(Debug, Clone)]
pub struct RunRngs {
    pub rollout: SimRng,
    pub tau: SimRng,
}

impl RunRngs {
    pub fn new(seed: u64) -> Self {
        Self {
            rollout: stream(seed, Purpose::Rollout),
            tau: stream(seed, Purpose::Tau),
        }
    }
}

/// Parameters carried between iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub policy: Policy,
    pub critic: Critic,
    pub penalty: PenaltyState,
    /// Index of the next iteration.
    pub k: usize,
}

impl TrainState {
    pub fn new(policy: Policy, critic: Critic, cfg: &AlgoConfig) -> Self {
        Self {
            policy,
            critic,
            penalty: PenaltyState::new(cfg.penalty_init),
            k: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub k: usize,
    /// Parameters after the update.
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    /// Mean √KL between the new and old policy on the batch states (mean KL
    /// for the linear CPPO variant).
    pub kl_step: f64,
    pub grad_norm: f64,
    /// Penalty after adaptation (penalized algorithms only).
    pub c_penalty: Option<f64>,
    /// Surrogate samples dropped for an unusable importance ratio.
    pub skipped: usize,
    pub wall_ms: f64,
}

impl PartialEq for IterationRecord {
    /// Wall time is excluded so that records of replayed runs compare equal.
    fn eq(&self, other: &Self) -> bool {
        self.k == other.k
            && self.theta == other.theta
            && self.phi == other.phi
            && self.kl_step.to_bits() == other.kl_step.to_bits()
            && self.grad_norm.to_bits() == other.grad_norm.to_bits()
            && self.c_penalty.map(f64::to_bits) == other.c_penalty.map(f64::to_bits)
            && self.skipped == other.skipped
    }
}

/// On-policy data of one iteration.
#[derive(Debug, Clone)]
pub struct Batch {
    pub trajectory: Trajectory,
    pub samples: Vec<SurrogateSample>,
}

impl Batch {
    pub fn states(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.x.clone()).collect()
    }
}

/// Rolls out the current policy, sweeps the critic over the trajectory, then
/// draws J rollout times and forms q̂ with the updated critic.
pub fn collect_batch(
    env: &EnvModel,
    state: &mut TrainState,
    x0: &[f64],
    cfg: &AlgoConfig,
    rngs: &mut RunRngs,
) -> Result<Batch> {
    let n = cfg.n_steps()?;
    let traj = rollout_steps(env, &state.policy, x0, n, cfg.dt, &mut rngs.rollout)?;
    mstde_sweep(&mut state.critic, &traj, cfg.lr_critic.rate(state.k), cfg.beta, cfg.gamma, cfg.critic_step);
    if !state.critic.is_finite() {
        return Err(Error::Parameter("critic parameters became non-finite".into()));
    }
    let mut samples = Vec::with_capacity(cfg.batch);
    for _ in 0..cfg.batch {
        let tau = sample_rollout_index(cfg.beta, cfg.dt, n, &mut rngs.tau)?;
        samples.push(sample_at(&state.critic, &state.policy, &traj, tau.index, cfg.beta));
    }
    Ok(Batch {
        trajectory: traj,
        samples,
    })
}

/// Surrogate sample at grid index `i` using the critic's q̂.
pub fn sample_at(critic: &Critic, policy: &Policy, traj: &Trajectory, i: usize, beta: f64) -> SurrogateSample {
    let q = q_estimate(critic, traj, i, beta);
    let x = traj.state(i).to_vec();
    let log_old = policy.log_density(&x, q.action).value;
    SurrogateSample {
        x,
        a: q.action,
        q_hat: q.value,
        p_hat: traj.reg_values[i],
        log_old,
    }
}

/// (1/β)·(1/J)·Σ_j [score·(q̂_j + γp̂_j) + γ∇_θ p], with ∇_θ p = −score for
/// the entropy regularizer.
pub fn cpg_gradient(
    samples: &[SurrogateSample],
    policy: &Policy,
    gamma: f64,
    beta: f64,
    regularizer: RegularizerKind,
) -> Result<PolicyGradient> {
    let mut g = PolicyGradient::zeros(policy.n_params());
    if samples.is_empty() {
        return Ok(g);
    }
    for s in samples {
        let score = policy.score(&s.x, s.a)?;
        let coeff = match regularizer {
            RegularizerKind::None => s.q_hat,
            RegularizerKind::Entropy => s.q_hat + gamma * s.p_hat - gamma,
        };
        g.add_scaled(coeff, &score);
    }
    g.scale(1.0 / (beta * samples.len() as f64));
    Ok(g)
}

/// Step length `lr`, shortened so that the move has norm at most `lr·clip`.
fn clipped_step(grad: &[f64], lr: f64, clip: Option<f64>) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    match clip {
        Some(c) if norm > c => lr * c / norm,
        _ => lr,
    }
}

fn ascend(policy: &Policy, grad: &[f64], step: f64) -> Result<Policy> {
    let theta: Vec<f64> = policy.params().iter().zip(grad).map(|(t, g)| t + step * g).collect();
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::Parameter("policy update produced non-finite parameters".into()));
    }
    policy.with_params(&theta)
}

fn wrap(k: usize, e: Error) -> Error {
    Error::Iteration {
        iteration: k,
        source: Box::new(e),
    }
}

/// One CPG iteration: collect, sweep the critic, estimate ∇η, ascend.
pub fn cpg_iteration(
    env: &EnvModel,
    state: &mut TrainState,
    x0: &[f64],
    cfg: &AlgoConfig,
    rngs: &mut RunRngs,
) -> Result<IterationRecord> {
    let start = Instant::now();
    let k = state.k;
    let run = |state: &mut TrainState, rngs: &mut RunRngs| -> Result<(f64, f64)> {
        let batch = collect_batch(env, state, x0, cfg, rngs)?;
        let g = cpg_gradient(&batch.samples, &state.policy, cfg.gamma, cfg.beta, env.regularizer)?;
        let next = ascend(&state.policy, &g, clipped_step(&g, cfg.lr_policy.rate(k), cfg.grad_clip))?;
        let kl = mean_sqrt_kl(&next, &state.policy, &batch.states())?;
        state.policy = next;
        Ok((kl, g.norm()))
    };
    let (kl_step, grad_norm) = run(state, rngs).map_err(|e| wrap(k, e))?;
    state.k += 1;
    Ok(IterationRecord {
        k,
        theta: state.policy.params(),
        phi: state.critic.params(),
        kl_step,
        grad_norm,
        c_penalty: None,
        skipped: 0,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critic::QuadraticCritic;
    use crate::policy::GaussianLinearPolicy;
    use crate::sde::{make_lq_env, LqParams};

    fn lq_state(theta: [f64; 3]) -> (EnvModel, TrainState, AlgoConfig) {
        let cfg = AlgoConfig {
            horizon: 5.0,
            dt: 0.01,
            ..AlgoConfig::lq_defaults()
        };
        let env = make_lq_env(LqParams::benchmark()).unwrap();
        let st = TrainState::new(
            GaussianLinearPolicy::new(theta[0], theta[1], theta[2]).into(),
            QuadraticCritic::new(0.0, 0.0, 0.0).into(),
            &cfg,
        );
        (env, st, cfg)
    }

    #[test]
    fn zero_signal_gives_zero_gradient() {
        let pi: Policy = GaussianLinearPolicy::new(0.2, -0.1, 0.0).into();
        let samples: Vec<SurrogateSample> = (0..5)
            .map(|k| SurrogateSample {
                x: vec![k as f64],
                a: 0.3 * k as f64,
                q_hat: 0.0,
                p_hat: 1.7,
                log_old: 0.0,
            })
            .collect();
        let g = cpg_gradient(&samples, &pi, 0.0, 1.0, RegularizerKind::Entropy).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_rate_keeps_theta() {
        let (env, mut st, mut cfg) = lq_state([0.1, 0.2, 0.3]);
        cfg.lr_policy = LrSchedule::Constant(0.0);
        let before = st.policy.clone();
        let rec = cpg_iteration(&env, &mut st, &[0.0], &cfg, &mut RunRngs::new(1)).unwrap();
        assert_eq!(st.policy, before);
        assert_eq!(rec.kl_step, 0.0);
        assert_eq!(st.k, 1);
    }

    #[test]
    fn iterations_are_reproducible() {
        let run = || {
            let (env, mut st, cfg) = lq_state([0.0, 0.0, 0.0]);
            let mut rngs = RunRngs::new(42);
            (0..3)
                .map(|_| cpg_iteration(&env, &mut st, &[0.0], &cfg, &mut rngs).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
