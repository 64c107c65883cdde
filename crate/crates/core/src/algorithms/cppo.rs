use std::time::Instant;

use super::{ascend, clipped_step, collect_batch, wrap, AlgoConfig, InnerOptimizer, IterationRecord, KlVariant, RunRngs, TrainState};
use crate::error::Result;
use crate::occupation::{surrogate_gradient, surrogate_objective, SurrogateSample};
use crate::policy::{kl_divergence, Policy, PolicyGradient};
use crate::sde::{EnvModel, RegularizerKind};

/// Added to KL inside the square root when differentiating, so the penalty
/// gradient exists at θ = θ_k.
pub const SQRT_KL_FLOOR: f64 = 1e-12;

const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyState {
    pub c: f64,
}

impl PenaltyState {
    pub fn new(c: f64) -> Self {
        assert!(c > 0.0, "penalty must start positive");
        Self { c }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyAction {
    Double,
    Halve,
    Hold,
}

impl PenaltyAction {
    pub fn decide(measured: f64, delta: f64, epsilon: f64) -> Self {
        if measured >= (1.0 + epsilon) * delta {
            PenaltyAction::Double
        } else if measured <= delta / (1.0 + epsilon) {
            PenaltyAction::Halve
        } else {
            PenaltyAction::Hold
        }
    }
}

pub fn penalty_adapt(state: PenaltyState, measured: f64, delta: f64, epsilon: f64) -> PenaltyState {
    let c = match PenaltyAction::decide(measured, delta, epsilon) {
        PenaltyAction::Double => state.c * 2.0,
        PenaltyAction::Halve => state.c / 2.0,
        PenaltyAction::Hold => state.c,
    };
    PenaltyState { c }
}

/// Mean over `states` of √KL(π_old(·|x) ‖ π_new(·|x)).
pub fn mean_sqrt_kl(new: &Policy, old: &Policy, states: &[Vec<f64>]) -> Result<f64> {
    mean_over(states, |x| Ok(kl_divergence(old, new, x)?.sqrt()))
}

/// Mean over `states` of KL(π_old(·|x) ‖ π_new(·|x)).
pub fn mean_kl(new: &Policy, old: &Policy, states: &[Vec<f64>]) -> Result<f64> {
    mean_over(states, |x| kl_divergence(old, new, x))
}

pub fn penalty_statistic(new: &Policy, old: &Policy, states: &[Vec<f64>], variant: KlVariant) -> Result<f64> {
    match variant {
        KlVariant::Sqrt => mean_sqrt_kl(new, old, states),
        KlVariant::Linear => mean_kl(new, old, states),
    }
}

fn mean_over<F: FnMut(&[f64]) -> Result<f64>>(states: &[Vec<f64>], mut f: F) -> Result<f64> {
    if states.is_empty() {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for x in states {
        acc += f(x)?;
    }
    Ok(acc / states.len() as f64)
}

/// Penalty term as optimized: the floored square root for the sqrt variant.
fn smoothed_statistic(new: &Policy, old: &Policy, states: &[Vec<f64>], variant: KlVariant) -> Result<f64> {
    match variant {
        KlVariant::Sqrt => mean_over(states, |x| Ok((kl_divergence(old, new, x)? + SQRT_KL_FLOOR).sqrt())),
        KlVariant::Linear => mean_kl(new, old, states),
    }
}

fn statistic_gradient(new: &Policy, old: &Policy, states: &[Vec<f64>], variant: KlVariant) -> Result<PolicyGradient> {
    let mut g = PolicyGradient::zeros(new.n_params());
    if states.is_empty() {
        return Ok(g);
    }
    for x in states {
        let dkl = old.kl_grad_other(new, x)?;
        let w = match variant {
            KlVariant::Sqrt => 0.5 / (kl_divergence(old, new, x)? + SQRT_KL_FLOOR).sqrt(),
            KlVariant::Linear => 1.0,
        };
        g.add_scaled(w, &dkl);
    }
    g.scale(1.0 / states.len() as f64);
    Ok(g)
}

struct Penalized<'a> {
    old: &'a Policy,
    samples: &'a [SurrogateSample],
    states: Vec<Vec<f64>>,
    beta: f64,
    gamma: f64,
    regularizer: RegularizerKind,
    variant: KlVariant,
    c: f64,
}

impl Penalized<'_> {
    fn value(&self, p: &Policy) -> Result<f64> {
        let l = surrogate_objective(p, self.samples, self.beta, self.gamma, self.regularizer).value;
        Ok(l - self.c * smoothed_statistic(p, self.old, &self.states, self.variant)?)
    }

    fn gradient(&self, p: &Policy) -> Result<(PolicyGradient, usize)> {
        let (mut g, skipped) = surrogate_gradient(p, self.samples, self.beta, self.gamma, self.regularizer)?;
        let pg = statistic_gradient(p, self.old, &self.states, self.variant)?;
        g.add_scaled(-self.c, &pg);
        Ok((g, skipped))
    }
}

/// Runs the inner loop; returns the final policy, the norm of the first
/// gradient and the skipped-sample count at θ_k.
fn inner_loop(obj: &Penalized<'_>, cfg: &AlgoConfig, lr: f64) -> Result<(Policy, f64, usize)> {
    let mut theta = obj.old.clone();
    let mut first = (0.0, 0);
    for step in 0..cfg.inner_steps {
        let (g, skipped) = obj.gradient(&theta)?;
        if step == 0 {
            first = (g.norm(), skipped);
        }
        let lr = clipped_step(&g, lr, cfg.grad_clip);
        match cfg.inner_optimizer {
            InnerOptimizer::Plain => theta = ascend(&theta, &g, lr)?,
            InnerOptimizer::Backtracking => {
                let f0 = obj.value(&theta)?;
                let mut t = lr;
                let mut accepted = None;
                for _ in 0..MAX_HALVINGS {
                    if let Ok(cand) = ascend(&theta, &g, t) {
                        if obj.value(&cand)? >= f0 {
                            accepted = Some(cand);
                            break;
                        }
                    }
                    t *= 0.5;
                }
                match accepted {
                    Some(c) => theta = c,
                    None => break,
                }
            }
        }
    }
    Ok((theta, first.0, first.1))
}

/// Inner loop on the penalized surrogate built from `samples`, then penalty
/// adaptation. Updates the policy and penalty of `state`; returns the realized
/// statistic, the first gradient norm and the skipped-sample count.
pub(super) fn penalized_update(
    state: &mut TrainState,
    samples: &[SurrogateSample],
    cfg: &AlgoConfig,
    variant: KlVariant,
    gamma: f64,
    regularizer: RegularizerKind,
) -> Result<(f64, f64, usize)> {
    let obj = Penalized {
        old: &state.policy,
        samples,
        states: samples.iter().map(|s| s.x.clone()).collect(),
        beta: cfg.beta,
        gamma,
        regularizer,
        variant,
        c: state.penalty.c,
    };
    let (next, grad_norm, skipped) = inner_loop(&obj, cfg, cfg.lr_policy.rate(state.k))?;
    let measured = penalty_statistic(&next, &state.policy, &obj.states, variant)?;
    state.penalty = penalty_adapt(state.penalty, measured, cfg.kl_radius, cfg.kl_tolerance);
    state.policy = next;
    Ok((measured, grad_norm, skipped))
}

/// One CPPO iteration: CPG data collection, s inner steps on the penalized
/// surrogate, then penalty adaptation on the realized statistic.
pub fn cppo_iteration(
    env: &EnvModel,
    state: &mut TrainState,
    x0: &[f64],
    cfg: &AlgoConfig,
    variant: KlVariant,
    rngs: &mut RunRngs,
) -> Result<IterationRecord> {
    let start = Instant::now();
    let k = state.k;
    let run = |state: &mut TrainState, rngs: &mut RunRngs| -> Result<(f64, f64, usize)> {
        let batch = collect_batch(env, state, x0, cfg, rngs)?;
        penalized_update(state, &batch.samples, cfg, variant, cfg.gamma, env.regularizer)
    };
    let (kl_step, grad_norm, skipped) = run(state, rngs).map_err(|e| wrap(k, e))?;
    state.k += 1;
    Ok(IterationRecord {
        k,
        theta: state.policy.params(),
        phi: state.critic.params(),
        kl_step,
        grad_norm,
        c_penalty: Some(state.penalty.c),
        skipped,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critic::QuadraticCritic;
    use crate::policy::GaussianLinearPolicy;
    use crate::quadrature::hermite32;
    use crate::sde::{make_lq_env, LqParams};
    use proptest::prelude::*;

    #[test]
    fn controller_examples() {
        let c = PenaltyState::new(1.0);
        assert_eq!(penalty_adapt(c, 0.0004, 0.0002, 0.5).c, 2.0);
        assert_eq!(penalty_adapt(c, 0.0001, 0.0002, 0.5).c, 0.5);
        assert_eq!(penalty_adapt(c, 0.0002, 0.0002, 0.5).c, 1.0);
    }

    proptest! {
        #[test]
        fn double_then_halve_is_identity(c in 1e-8f64..1e8, m in 0.0f64..1e-2, d in 1e-6f64..1e-2, e in 0.01f64..2.0) {
            let s = PenaltyState::new(c);
            let next = penalty_adapt(s, m, d, e);
            let ratio = next.c / c;
            prop_assert!(ratio == 2.0 || ratio == 0.5 || ratio == 1.0);
            let back = PenaltyState { c: next.c * 2.0 }.c / 2.0;
            prop_assert_eq!(back, next.c);
            prop_assert_eq!(penalty_adapt(penalty_adapt(s, 1.0, d, e), 0.0, d, e).c, c);
        }
    }

    #[test]
    fn unit_mean_shift() {
        let a: Policy = GaussianLinearPolicy::new(0.0, 0.0, 0.0).into();
        let b: Policy = GaussianLinearPolicy::new(0.0, 1.0, 0.0).into();
        let states: Vec<Vec<f64>> = (0..7).map(|k| vec![k as f64 - 3.0]).collect();
        assert!((mean_sqrt_kl(&b, &a, &states).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_sqrt_kl(&a, &a, &states).unwrap(), 0.0);
        assert!((mean_kl(&b, &a, &states).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sqrt_kl_matches_quadrature() {
        let old = GaussianLinearPolicy::new(0.3, -0.2, -1.0);
        let new = GaussianLinearPolicy::new(-0.1, 0.4, -0.5);
        for x in [-1.5, 0.0, 2.0] {
            let (m, sd) = (old.mean(x), old.variance().sqrt());
            let kl = hermite32().normal_expectation(m, sd, |a| old.log_density(x, a) - new.log_density(x, a));
            let got = mean_sqrt_kl(&new.into(), &old.into(), &[vec![x]]).unwrap();
            assert!((got - kl.sqrt()).abs() < 1e-6);
        }
    }

    fn setup(c: f64, steps: usize) -> (EnvModel, TrainState, AlgoConfig) {
        let cfg = AlgoConfig {
            horizon: 5.0,
            dt: 0.01,
            inner_steps: steps,
            penalty_init: c,
            ..AlgoConfig::lq_defaults()
        };
        let env = make_lq_env(LqParams::benchmark()).unwrap();
        let st = TrainState::new(
            GaussianLinearPolicy::new(0.0, 0.0, 0.0).into(),
            QuadraticCritic::new(0.0, 0.0, 0.0).into(),
            &cfg,
        );
        (env, st, cfg)
    }

    fn step_size(c: f64) -> f64 {
        let (env, mut st, cfg) = setup(c, 10);
        let before = st.policy.params();
        cppo_iteration(&env, &mut st, &[0.0], &cfg, KlVariant::Sqrt, &mut RunRngs::new(3)).unwrap();
        before.iter().zip(st.policy.params()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn zero_inner_steps_halves_penalty() {
        let (env, mut st, cfg) = setup(1.0, 0);
        let before = st.policy.clone();
        let rec = cppo_iteration(&env, &mut st, &[0.0], &cfg, KlVariant::Sqrt, &mut RunRngs::new(1)).unwrap();
        assert_eq!(st.policy, before);
        assert_eq!(rec.kl_step, 0.0);
        assert_eq!(st.penalty.c, 0.5);
    }

    #[test]
    fn large_penalty_pins_theta() {
        assert!(step_size(1e9) < 1e-4);
        let sizes: Vec<f64> = [1e2, 1e4, 1e6].iter().map(|&c| step_size(c)).collect();
        assert!(sizes.windows(2).all(|w| w[1] <= w[0]), "{sizes:?}");
        assert!(step_size(1e-3) > sizes[0]);
    }
}
