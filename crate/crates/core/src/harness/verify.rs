//! Identity suite behind `algo = verify`.

use rand::Rng;
use rayon::prelude::*;
use statrs::function::erf::erf;

use super::RunConfig;
use crate::error::Result;
use crate::lq::{analytic_q, evaluate_policy, hj_residual, solve_lq};
use crate::occupation::{
    bounded_env_constants, coupled_second_moment, discounted_sum, gronwall_check, map_rollouts, occupation_histogram,
    performance_difference_mc, Bins, CheckRow, GronwallConstants, PdConfig,
};
use crate::policy::{GaussianLinearPolicy, Policy};
use crate::quadrature::hermite32;
use crate::rng::{base_seed, stream, Purpose};
use crate::sde::{grid_steps, make_bounded_env, make_lq_env, make_ou_env, BoundedParams, Trajectory};
use crate::stats::McEstimate;

const OU_X0: f64 = 1.0;

type TestFn = (&'static str, fn(f64) -> f64);

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Total-variation distance between the normalized histogram and the
/// normalized occupation measure of dX = −X dt + dB from `x0`,
/// ∫₀^∞ βe^{−βs} N(e^{−s}x₀, (1 − e^{−2s})/2) ds, integrated per bin with
/// w = e^{−βs} and a 20 000-point midpoint rule. Mass outside the window
/// counts on both sides.
pub fn tv_to_ou_mixture(probs: &[f64], outside: f64, bins: &Bins, x0: f64, beta: f64) -> f64 {
    let edges = bins.edges();
    let m = 20_000;
    let mut exact = vec![0.0; probs.len()];
    for j in 0..m {
        let w = (j as f64 + 0.5) / m as f64;
        let s = -w.ln() / beta;
        let mean = (-s).exp() * x0;
        let sd = (0.5 * (1.0 - (-2.0 * s).exp())).sqrt();
        for (k, e) in exact.iter_mut().enumerate() {
            *e += (normal_cdf((edges[k + 1] - mean) / sd) - normal_cdf((edges[k] - mean) / sd)) / m as f64;
        }
    }
    let exact_outside = 1.0 - exact.iter().sum::<f64>();
    let inside: f64 = probs.iter().zip(&exact).map(|(p, e)| (p - e).abs()).sum();
    0.5 * (inside + (outside - exact_outside).abs())
}

fn ou_policy() -> Policy {
    GaussianLinearPolicy::new(0.0, 0.0, 0.0).into()
}

/// E over the Euler chain X_{i+1} = (1 − δ)X_i + noise of Σ e^{−βiδ} X_i δ.
fn euler_ou_mean_functional(x0: f64, beta: f64, dt: f64, n: usize) -> f64 {
    let r = (-beta * dt).exp() * (1.0 - dt);
    x0 * dt * (1.0 - r.powi(n as i32)) / (1.0 - r)
}

fn occupation_identity_checks<R: Rng + ?Sized>(cfg: &RunConfig, rng: &mut R) -> Result<Vec<CheckRow>> {
    let a = &cfg.algo_cfg;
    let (beta, dt, horizon) = (a.beta, a.dt, a.horizon);
    let n = grid_steps(horizon, dt)?;
    let env = make_ou_env();
    let count = cfg.verify.trajectories;
    let bins = Bins::new(-5.0, 5.0, 200)?;
    let phis: [TestFn; 5] = [
        ("one", |_| 1.0),
        ("x", |x| x),
        ("x_squared", |x| x * x),
        ("indicator_positive", |x| if x > 0.0 { 1.0 } else { 0.0 }),
        ("gaussian_bump", |x| (-x * x).exp()),
    ];
    // Independent trajectory sets for the two sides.
    let direct_base = base_seed(rng);
    let hist_base = base_seed(rng);
    let direct: Vec<[f64; 5]> = map_rollouts(&env, &ou_policy(), &[OU_X0], n, dt, direct_base, count, |t| {
        let mut v = [0.0; 5];
        for (slot, (_, phi)) in v.iter_mut().zip(&phis) {
            *slot = discounted_sum(&t, beta, |i| phi(t.state(i)[0]));
        }
        v
    })?;
    let trajs: Vec<Trajectory> = map_rollouts(&env, &ou_policy(), &[OU_X0], n, dt, hist_base, count, |t| t)?;
    let paired: Vec<[f64; 5]> = trajs
        .par_iter()
        .map(|t| {
            let mut v = [0.0; 5];
            for (slot, (_, phi)) in v.iter_mut().zip(&phis) {
                *slot = bins.pair_trajectory(t, beta, phi);
            }
            v
        })
        .collect();
    let hist = occupation_histogram(&trajs, beta, bins)?;
    let mut rows = vec![CheckRow::new(
        "occupation_total_mass",
        hist.total_mass(),
        hist.normalization,
        0.0,
        (hist.total_mass() - hist.normalization).abs() < 1e-6,
    )];
    for (j, (name, phi)) in phis.iter().enumerate() {
        let lhs = McEstimate::from_samples(&direct.iter().map(|v| v[j]).collect::<Vec<_>>());
        let rhs = McEstimate::from_samples(&paired.iter().map(|v| v[j]).collect::<Vec<_>>());
        let se = lhs.combined_se(&rhs);
        let pass = (lhs.mean - rhs.mean).abs() <= 3.0 * se + 1e-9;
        debug_assert!((hist.pair(phi) - rhs.mean).abs() < 1e-9 * (1.0 + rhs.mean.abs()));
        rows.push(CheckRow::new(format!("occupation_identity_{name}"), lhs.mean, rhs.mean, se, pass));
    }
    let mean = McEstimate::from_samples(&direct.iter().map(|v| v[1]).collect::<Vec<_>>());
    let target = euler_ou_mean_functional(OU_X0, beta, dt, n);
    rows.push(CheckRow::new(
        "ou_discounted_mean",
        mean.mean,
        target,
        mean.se,
        (mean.mean - target).abs() <= 3.0 * mean.se,
    ));
    let tv_bins = Bins::new(-3.0, 3.0, 24)?;
    let tv_hist = occupation_histogram(&trajs, beta, tv_bins)?;
    let outside = (tv_hist.underflow + tv_hist.overflow) / tv_hist.total_mass();
    let tv = tv_to_ou_mixture(&tv_hist.probabilities(), outside, &tv_bins, OU_X0, beta);
    rows.push(CheckRow::new("ou_histogram_tv", tv, 0.02, f64::NAN, tv < 0.02));
    Ok(rows)
}

fn performance_difference_checks<R: Rng + ?Sized>(cfg: &RunConfig, rng: &mut R) -> Result<Vec<CheckRow>> {
    let p = cfg.lq;
    let env = make_lq_env(p)?;
    let sol = solve_lq(&p)?;
    let star = sol.policy();
    let a = &cfg.algo_cfg;
    let pd = PdConfig {
        x0: vec![0.0],
        horizon: a.horizon,
        dt: a.dt,
        gamma: p.gamma,
        n_lhs: cfg.verify.pd_lhs,
        n_rhs: cfg.verify.pd_rhs,
    };
    let mut rows = Vec::new();
    for j in 0..cfg.verify.pd_pairs {
        let pi = perturbed(&star, 0.5, rng);
        let pi_hat = perturbed(&star, 0.5, rng);
        let value = evaluate_policy(&p, &pi)?;
        let res = performance_difference_mc(
            &env,
            &pi_hat.into(),
            &pi.into(),
            |x, act| analytic_q(&value, &p, x[0], act),
            p.beta,
            &pd,
            rng,
        )?;
        rows.push(CheckRow::new(
            format!("performance_difference_{j}"),
            res.lhs.mean,
            res.rhs.mean,
            res.lhs.combined_se(&res.rhs),
            res.agrees(3.0),
        ));
    }
    Ok(rows)
}

/// θ* + r·u with u uniform on the unit sphere and r uniform on [0, radius].
pub fn perturbed<R: Rng + ?Sized>(star: &GaussianLinearPolicy, radius: f64, rng: &mut R) -> GaussianLinearPolicy {
    let mut u = [0.0f64; 3];
    for v in u.iter_mut() {
        *v = rng.sample(rand_distr::StandardNormal);
    }
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    let r = radius * rng.random::<f64>();
    let t = star.theta;
    GaussianLinearPolicy::new(t[0] + r * u[0] / norm, t[1] + r * u[1] / norm, t[2] + r * u[2] / norm)
}

/// Bounded env and policy pair used for the moment-bound check.
pub fn gronwall_setup() -> (BoundedParams, GaussianLinearPolicy, GaussianLinearPolicy) {
    (
        BoundedParams {
            lambda: 1.0,
            s0: 0.5,
            s1: 0.3,
        },
        GaussianLinearPolicy::new(0.0, -0.5, -1.0),
        GaussianLinearPolicy::new(0.0, 0.7, -1.0),
    )
}

fn gronwall_checks<R: Rng + ?Sized>(cfg: &RunConfig, rng: &mut R) -> Result<Vec<CheckRow>> {
    let (params, pi, pi_hat) = gronwall_setup();
    let env = make_bounded_env(params)?;
    let c = bounded_env_constants(&params, &pi, &pi_hat)?;
    let curve = coupled_second_moment(&env, &pi.into(), &pi_hat.into(), &[0.0], 5.0, 0.01, cfg.verify.coupling_pairs, rng)?;
    let last = curve.times.len() - 1;
    let full = gronwall_check(&curve, Some(c));
    let halved = gronwall_check(&curve, Some(GronwallConstants { c_pi: c.c_pi / 2.0, ..c }));
    let same = coupled_second_moment(&env, &pi.into(), &pi.into(), &[0.0], 1.0, 0.01, 8, rng)?;
    let zero = same.mean.iter().all(|m| *m == 0.0);
    Ok(vec![
        CheckRow::new("gronwall_bound", curve.mean[last], c.bound(curve.times[last]), curve.se[last], full.passed()),
        CheckRow::new(
            "gronwall_halved_constant_rejected",
            curve.mean[last],
            c.bound(curve.times[last]) / 2.0,
            curve.se[last],
            !halved.passed(),
        ),
        CheckRow::new("coupling_identical_policies", same.mean[same.mean.len() - 1], 0.0, 0.0, zero),
    ])
}

fn oracle_checks(cfg: &RunConfig) -> Result<Vec<CheckRow>> {
    let p = cfg.lq;
    let sol = solve_lq(&p)?;
    let star = sol.policy();
    let v = sol.value();
    let worst_hj = [-2.0, -1.0, 0.0, 1.0, 2.0]
        .iter()
        .map(|&x| hj_residual(&v, &star, &p, x).abs())
        .fold(0.0, f64::max);
    let worst_boltzmann = [-2.0, -1.0, 0.0, 1.0, 2.0]
        .iter()
        .map(|&x| {
            hermite32()
                .normal_expectation(star.mean(x), star.variance().sqrt(), |a| {
                    analytic_q(&v, &p, x, a) - p.gamma * star.log_density(x, a)
                })
                .abs()
        })
        .fold(0.0, f64::max);
    Ok(vec![
        CheckRow::new("hj_residual_at_optimum", worst_hj, 0.0, 0.0, worst_hj < 1e-9),
        CheckRow::new("boltzmann_normalization", worst_boltzmann, 0.0, 0.0, worst_boltzmann < 1e-8),
    ])
}

/// Runs every identity check with generators derived from the first seed.
pub fn run_verify(cfg: &RunConfig) -> Result<Vec<CheckRow>> {
    let mut rng = stream(cfg.seeds[0], Purpose::Verify);
    let mut rows = oracle_checks(cfg)?;
    rows.extend(occupation_identity_checks(cfg, &mut rng)?);
    rows.extend(performance_difference_checks(cfg, &mut rng)?);
    rows.extend(gronwall_checks(cfg, &mut rng)?);
    Ok(rows)
}
