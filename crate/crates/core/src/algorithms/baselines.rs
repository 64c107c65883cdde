//! Discrete-time baselines: the δ-grid rollout read as an MDP with per-step
//! reward (r + γp)·δ and discount e^{−βδ}.

use std::time::Instant;

use super::cppo::penalized_update;
use super::{ascend, clipped_step, mean_sqrt_kl, wrap, AlgoConfig, IterationRecord, KlVariant, RunRngs, TrainState};
use crate::critic::{Critic, CriticStep};
use crate::error::{Error, Result};
use crate::occupation::{sample_rollout_index, SurrogateSample};
use crate::policy::{Policy, PolicyGradient};
use crate::sde::{rollout_steps, EnvModel, RegularizerKind, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscreteAlgo {
    Dpg,
    Dppo,
}

/// One-step TD(0) sweep: φ ← φ + α·(rδ + γpδ + e^{−βδ}V' − V)·∇V.
pub fn td0_sweep(critic: &mut Critic, traj: &Trajectory, alpha: f64, beta: f64, gamma: f64, step: CriticStep) {
    if alpha == 0.0 {
        return;
    }
    let dt = traj.dt;
    let disc = (-beta * dt).exp();
    let mut grad = Vec::with_capacity(critic.n_params());
    for i in 0..traj.n_steps.saturating_sub(1) {
        let v = critic.value_and_gradient(traj.state(i), &mut grad);
        let v_next = critic.value(traj.state(i + 1));
        let td = ((traj.rewards[i] + gamma * traj.reg_values[i]) * dt + disc * v_next - v) * step.scale(&grad);
        for (p, g) in critic.params_mut().iter_mut().zip(&grad) {
            *p += alpha * td * g;
        }
    }
}

/// Samples whose `q_hat` holds the one-step advantage rδ + e^{−βδ}V' − V.
fn advantage_samples(critic: &Critic, policy: &Policy, traj: &Trajectory, idx: &[usize], beta: f64) -> Vec<SurrogateSample> {
    let disc = (-beta * traj.dt).exp();
    idx.iter()
        .map(|&i| {
            let x = traj.state(i).to_vec();
            let a = traj.actions[i];
            let adv = traj.rewards[i] * traj.dt + disc * critic.value(traj.state(i + 1)) - critic.value(&x);
            SurrogateSample {
                log_old: policy.log_density(&x, a).value,
                x,
                a,
                q_hat: adv,
                p_hat: traj.reg_values[i],
            }
        })
        .collect()
}

/// (1/β)·mean[score·(A + γδp̂) − γδ·score]: the continuous estimator with the
/// rate replaced by the one-step advantage, hence δ times it on shared samples.
pub fn dpg_gradient(
    samples: &[SurrogateSample],
    policy: &Policy,
    gamma: f64,
    beta: f64,
    dt: f64,
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
            RegularizerKind::Entropy => s.q_hat + gamma * dt * (s.p_hat - 1.0),
        };
        g.add_scaled(coeff, &score);
    }
    g.scale(1.0 / (beta * samples.len() as f64));
    Ok(g)
}

pub fn discrete_baseline_iteration(
    env: &EnvModel,
    state: &mut TrainState,
    x0: &[f64],
    cfg: &AlgoConfig,
    algo: DiscreteAlgo,
    rngs: &mut RunRngs,
) -> Result<IterationRecord> {
    let start = Instant::now();
    let k = state.k;
    let run = |state: &mut TrainState, rngs: &mut RunRngs| -> Result<(f64, f64, usize)> {
        let n = cfg.n_steps()?;
        let traj = rollout_steps(env, &state.policy, x0, n, cfg.dt, &mut rngs.rollout)?;
        td0_sweep(&mut state.critic, &traj, cfg.lr_critic.rate(k), cfg.beta, cfg.gamma, cfg.critic_step);
        if !state.critic.is_finite() {
            return Err(Error::Parameter("critic parameters became non-finite".into()));
        }
        let idx = (0..cfg.batch)
            .map(|_| sample_rollout_index(cfg.beta, cfg.dt, n, &mut rngs.tau).map(|t| t.index))
            .collect::<Result<Vec<_>>>()?;
        let samples = advantage_samples(&state.critic, &state.policy, &traj, &idx, cfg.beta);
        match algo {
            DiscreteAlgo::Dpg => {
                let g = dpg_gradient(&samples, &state.policy, cfg.gamma, cfg.beta, cfg.dt, env.regularizer)?;
                let next = ascend(&state.policy, &g, clipped_step(&g, cfg.lr_policy.rate(k), cfg.grad_clip))?;
                let states: Vec<Vec<f64>> = samples.iter().map(|s| s.x.clone()).collect();
                let kl = mean_sqrt_kl(&next, &state.policy, &states)?;
                state.policy = next;
                Ok((kl, g.norm(), 0))
            }
            DiscreteAlgo::Dppo => {
                // With q̂ := A and γ := γδ the surrogate is the discrete PPO objective.
                penalized_update(state, &samples, cfg, KlVariant::Sqrt, cfg.gamma * cfg.dt, env.regularizer)
            }
        }
    };
    let (kl_step, grad_norm, skipped) = run(state, rngs).map_err(|e| wrap(k, e))?;
    state.k += 1;
    Ok(IterationRecord {
        k,
        theta: state.policy.params(),
        phi: state.critic.params(),
        kl_step,
        grad_norm,
        c_penalty: (algo == DiscreteAlgo::Dppo).then_some(state.penalty.c),
        skipped,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::{cpg_gradient, LrSchedule};
    use crate::critic::QuadraticCritic;
    use crate::policy::GaussianLinearPolicy;
    use crate::sde::{make_lq_env, LqParams};

    #[test]
    fn discrete_gradient_is_dt_times_continuous() {
        let env = make_lq_env(LqParams::benchmark()).unwrap();
        let pi: Policy = GaussianLinearPolicy::new(-0.2, -0.5, -1.5).into();
        let critic: Critic = QuadraticCritic::new(0.6, -0.1, -0.5).into();
        let dt = 0.05;
        let mut rngs = RunRngs::new(8);
        let traj = rollout_steps(&env, &pi, &[0.5], 200, dt, &mut rngs.rollout).unwrap();
        let idx: Vec<usize> = (0..40).map(|k| k * 4).collect();
        let disc = advantage_samples(&critic, &pi, &traj, &idx, 1.0);
        let cont: Vec<SurrogateSample> = idx
            .iter()
            .map(|&i| crate::algorithms::sample_at(&critic, &pi, &traj, i, 1.0))
            .collect();
        let gd = dpg_gradient(&disc, &pi, 0.1, 1.0, dt, RegularizerKind::Entropy).unwrap();
        let gc = cpg_gradient(&cont, &pi, 0.1, 1.0, RegularizerKind::Entropy).unwrap();
        for (d, c) in gd.iter().zip(gc.iter()) {
            assert!((d - dt * c).abs() < 1e-12 * (1.0 + c.abs()), "{d} vs {}", dt * c);
        }
    }

    #[test]
    fn zero_rate_keeps_parameters() {
        let env = make_lq_env(LqParams::benchmark()).unwrap();
        let cfg = AlgoConfig {
            horizon: 2.0,
            dt: 0.05,
            lr_policy: LrSchedule::Constant(0.0),
            ..AlgoConfig::lq_defaults()
        };
        let pi: Policy = GaussianLinearPolicy::new(0.1, 0.1, 0.0).into();
        let mut st = TrainState::new(pi.clone(), QuadraticCritic::default().into(), &cfg);
        discrete_baseline_iteration(&env, &mut st, &[0.0], &cfg, DiscreteAlgo::Dpg, &mut RunRngs::new(0)).unwrap();
        assert_eq!(st.policy, pi);
    }
}
