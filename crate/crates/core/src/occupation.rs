//! Discounted occupation measure: rollout-time sampling, histogram and
//! functional estimators, the performance-difference identity, the local
//! surrogate, and the coupled-trajectory moment bound.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::policy::{aggregated_coefficients, GaussianLinearPolicy, Policy, PolicyGradient};
use crate::quadrature::hermite32;
use crate::rng::{self, base_seed};
use crate::sde::{grid_steps, rollout_steps, BoundedParams, EnvModel, RegularizerKind, Trajectory};
use crate::stats::McEstimate;

/// Cap on exponential redraws before the horizon is declared too short.
pub const MAX_TAU_DRAWS: usize = 1_000_000;

/// An exponential rollout time snapped down to the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutTime {
    pub tau_raw: f64,
    pub tau_grid: f64,
    pub index: usize,
}

/// Snaps `tau_raw` to the largest grid multiple not above it. Ratios within
/// 1e-9 of an integer are treated as exact multiples so that 0.005/0.005
/// lands on index 1 despite rounding.
pub fn snap_to_grid(tau_raw: f64, dt: f64) -> RolloutTime {
    let r = tau_raw / dt;
    let mut k = r.floor();
    if (r - (k + 1.0)).abs() < 1e-9 {
        k += 1.0;
    }
    RolloutTime {
        tau_raw,
        tau_grid: k * dt,
        index: k as usize,
    }
}

/// τ ~ Exp(β) snapped to the grid, redrawn while the index exceeds N − 2
/// (the q-estimate at τ needs the successor state).
pub fn sample_rollout_time<R: Rng + ?Sized>(beta: f64, dt: f64, horizon: f64, rng: &mut R) -> Result<RolloutTime> {
    let n = grid_steps(horizon, dt)?;
    sample_rollout_index(beta, dt, n, rng)
}

pub fn sample_rollout_index<R: Rng + ?Sized>(beta: f64, dt: f64, n_steps: usize, rng: &mut R) -> Result<RolloutTime> {
    if !(beta > 0.0) {
        return Err(Error::Config(format!("beta must be positive, got {beta}")));
    }
    if n_steps < 2 {
        return Err(Error::Config("rollout times need at least two grid steps".into()));
    }
    let exp = Exp::new(beta).map_err(|e| Error::Config(e.to_string()))?;
    for _ in 0..MAX_TAU_DRAWS {
        let t = snap_to_grid(exp.sample(rng), dt);
        if t.index + 2 <= n_steps {
            return Ok(t);
        }
    }
    Err(Error::Config(format!(
        "no rollout time below T − 2dt in {MAX_TAU_DRAWS} draws (T = {}, beta = {beta})",
        n_steps as f64 * dt
    )))
}

/// Σ_i e^{−β t_i}·f(i)·δ over the grid of `traj`.
pub fn discounted_sum<F: FnMut(usize) -> f64>(traj: &Trajectory, beta: f64, mut f: F) -> f64 {
    let step = (-beta * traj.dt).exp();
    let mut disc = 1.0;
    let mut acc = 0.0;
    for i in 0..traj.n_steps {
        acc += disc * f(i);
        disc *= step;
    }
    acc * traj.dt
}

/// Σ_{i<n} e^{−β i δ}·δ: the mass of the discrete occupation measure.
pub fn discrete_mass(beta: f64, dt: f64, n_steps: usize) -> f64 {
    let q = (-beta * dt).exp();
    dt * (1.0 - q.powi(n_steps as i32)) / (1.0 - q)
}

/// Runs `n` independent rollouts in parallel, trajectory `j` driven by stream
/// `j` of `base`, and maps each through `f`. Output order is by `j`.
#[allow(clippy::too_many_arguments)]
pub fn map_rollouts<T, F>(
    env: &EnvModel,
    policy: &Policy,
    x0: &[f64],
    n_steps: usize,
    dt: f64,
    base: u64,
    n: usize,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(Trajectory) -> T + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|j| {
            let mut r = rng::indexed(base, j as u64);
            rollout_steps(env, policy, x0, n_steps, dt, &mut r).map(&f)
        })
        .collect()
}

/// Uniform bins on `[lo, hi)` for one state coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bins {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub coord: usize,
}

pub enum BinSlot {
    Under,
    In(usize),
    Over,
}

impl Bins {
    pub fn new(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if !(hi > lo) || count == 0 {
            return Err(Error::Parameter(format!("bad bin window [{lo}, {hi}) with {count} bins")));
        }
        Ok(Self { lo, hi, count, coord: 0 })
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.count as f64
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.count).map(|k| self.lo + k as f64 * self.width()).collect()
    }

    pub fn center(&self, k: usize) -> f64 {
        self.lo + (k as f64 + 0.5) * self.width()
    }

    pub fn slot(&self, v: f64) -> BinSlot {
        if v < self.lo {
            BinSlot::Under
        } else if v >= self.hi {
            BinSlot::Over
        } else {
            BinSlot::In((((v - self.lo) / self.width()) as usize).min(self.count - 1))
        }
    }

    /// Σ_i e^{−β t_i} φ(center of X_{t_i}'s bin) δ for one trajectory; states
    /// outside the window contribute nothing.
    pub fn pair_trajectory<F: Fn(f64) -> f64>(&self, traj: &Trajectory, beta: f64, phi: F) -> f64 {
        discounted_sum(traj, beta, |i| match self.slot(traj.state(i)[self.coord]) {
            BinSlot::In(k) => phi(self.center(k)),
            _ => 0.0,
        })
    }
}

/// Histogram of the discounted occupation measure of one state coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationEstimate {
    pub bin_edges: Vec<f64>,
    pub masses: Vec<f64>,
    pub underflow: f64,
    pub overflow: f64,
    /// Mass the histogram must carry: Σ_i e^{−β t_i} δ. It differs from the
    /// continuous (1 − e^{−βT})/β by the left-Riemann error, about βδ/2 relative.
    pub normalization: f64,
    pub n_trajectories: usize,
}

impl OccupationEstimate {
    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum::<f64>() + self.underflow + self.overflow
    }

    /// ⟨estimate, φ⟩ with φ evaluated at bin centres; out-of-window mass is dropped.
    pub fn pair<F: Fn(f64) -> f64>(&self, phi: F) -> f64 {
        self.masses
            .iter()
            .enumerate()
            .map(|(k, m)| m * phi(0.5 * (self.bin_edges[k] + self.bin_edges[k + 1])))
            .sum()
    }

    /// In-window bin probabilities of the normalized measure.
    pub fn probabilities(&self) -> Vec<f64> {
        let total = self.total_mass();
        self.masses.iter().map(|m| m / total).collect()
    }
}

pub fn occupation_histogram(trajectories: &[Trajectory], beta: f64, bins: Bins) -> Result<OccupationEstimate> {
    let first = trajectories
        .first()
        .ok_or_else(|| Error::Parameter("occupation histogram needs at least one trajectory".into()))?;
    if bins.coord >= first.state_dim {
        return Err(Error::Parameter(format!("bin coordinate {} out of range", bins.coord)));
    }
    let mut masses = vec![0.0; bins.count];
    let (mut under, mut over) = (0.0, 0.0);
    let scale = 1.0 / trajectories.len() as f64;
    for traj in trajectories {
        if traj.n_steps != first.n_steps || traj.dt != first.dt {
            return Err(Error::Parameter("trajectories do not share a grid".into()));
        }
        let step = (-beta * traj.dt).exp();
        let mut w = traj.dt * scale;
        for i in 0..traj.n_steps {
            match bins.slot(traj.state(i)[bins.coord]) {
                BinSlot::Under => under += w,
                BinSlot::Over => over += w,
                BinSlot::In(k) => masses[k] += w,
            }
            w *= step;
        }
    }
    Ok(OccupationEstimate {
        bin_edges: bins.edges(),
        masses,
        underflow: under,
        overflow: over,
        normalization: discrete_mass(beta, first.dt, first.n_steps),
        n_trajectories: trajectories.len(),
    })
}

/// Monte-Carlo estimate of E ∫₀^T e^{−βs} φ(X_s) ds.
#[allow(clippy::too_many_arguments)]
pub fn discounted_functional<F, R>(
    env: &EnvModel,
    policy: &Policy,
    phi: F,
    x0: &[f64],
    beta: f64,
    horizon: f64,
    dt: f64,
    n_traj: usize,
    rng: &mut R,
) -> Result<McEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
    R: Rng + ?Sized,
{
    let n = grid_steps(horizon, dt)?;
    let base = base_seed(rng);
    let values = map_rollouts(env, policy, x0, n, dt, base, n_traj, |t| {
        discounted_sum(&t, beta, |i| phi(t.state(i)))
    })?;
    Ok(McEstimate::from_samples(&values))
}

/// Settings shared by both sides of the performance-difference check.
#[derive(Debug, Clone, PartialEq)]
pub struct PdConfig {
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub gamma: f64,
    /// Paired trajectories for the direct difference of returns.
    pub n_lhs: usize,
    /// Rollout-time samples for the occupation-weighted side.
    pub n_rhs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerformanceDifference {
    pub lhs: McEstimate,
    pub rhs: McEstimate,
}

impl PerformanceDifference {
    pub fn agrees(&self, k: f64) -> bool {
        self.lhs.agrees_with(&self.rhs, k)
    }
}

/// Discounted regularized return Σ e^{−βt_i}(r + γp)δ of one trajectory.
pub fn discounted_return(traj: &Trajectory, beta: f64, gamma: f64) -> f64 {
    discounted_sum(traj, beta, |i| traj.rewards[i] + gamma * traj.reg_values[i])
}

/// Both sides of η(π̂) − η(π) = (1/β)·E_{x∼βd^π̂, a∼π̂}[q(x,a;π) + γp(x,a,π̂)].
/// The left side pairs π̂ and π rollouts on common random numbers; the right
/// side rolls π̂ out to an exponential time and evaluates `q` there.
pub fn performance_difference_mc<Q, R>(
    env: &EnvModel,
    pi_hat: &Policy,
    pi: &Policy,
    q: Q,
    beta: f64,
    cfg: &PdConfig,
    rng: &mut R,
) -> Result<PerformanceDifference>
where
    Q: Fn(&[f64], f64) -> f64 + Sync,
    R: Rng + ?Sized,
{
    let n = grid_steps(cfg.horizon, cfg.dt)?;
    let lhs_base = base_seed(rng);
    let rhs_base = base_seed(rng);
    let diffs: Vec<f64> = (0..cfg.n_lhs)
        .into_par_iter()
        .map(|j| {
            let mut r = rng::indexed(lhs_base, j as u64);
            let a = rollout_steps(env, pi_hat, &cfg.x0, n, cfg.dt, &mut r)?;
            let mut r = rng::indexed(lhs_base, j as u64);
            let b = rollout_steps(env, pi, &cfg.x0, n, cfg.dt, &mut r)?;
            Ok(discounted_return(&a, beta, cfg.gamma) - discounted_return(&b, beta, cfg.gamma))
        })
        .collect::<Result<_>>()?;
    let rates: Vec<f64> = (0..cfg.n_rhs)
        .into_par_iter()
        .map(|j| {
            let mut r = rng::indexed(rhs_base, j as u64);
            let tau = sample_rollout_index(beta, cfg.dt, n, &mut r)?;
            let t = rollout_steps(env, pi_hat, &cfg.x0, tau.index + 1, cfg.dt, &mut r)?;
            let i = tau.index;
            Ok((q(t.state(i), t.actions[i]) + cfg.gamma * t.reg_values[i]) / beta)
        })
        .collect::<Result<_>>()?;
    Ok(PerformanceDifference {
        lhs: McEstimate::from_samples(&diffs),
        rhs: McEstimate::from_samples(&rates),
    })
}

/// One on-policy sample at a rollout time: state, action, q-estimate and the
/// regularizer and log-density under the collecting policy.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateSample {
    pub x: Vec<f64>,
    pub a: f64,
    pub q_hat: f64,
    pub p_hat: f64,
    pub log_old: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateValue {
    pub value: f64,
    pub skipped: usize,
    pub n: usize,
}

impl SurrogateValue {
    /// More than 1% of samples had an unusable importance ratio.
    pub fn excessive_skips(&self) -> bool {
        self.skipped * 100 > self.n
    }
}

fn regularizer_of(kind: RegularizerKind, log_density: f64) -> f64 {
    match kind {
        RegularizerKind::None => 0.0,
        RegularizerKind::Entropy => -log_density,
    }
}

/// Importance ratio π_new/π_old; `None` when it cannot be formed.
fn ratio(log_new: f64, log_old: f64) -> Option<f64> {
    if !log_old.is_finite() {
        return None;
    }
    let r = (log_new - log_old).exp();
    r.is_finite().then_some(r)
}

/// (1/β)·mean[π_new/π_old · (q̂ + γ·p(x, a, π_new))], the local approximation
/// without its policy-independent constant.
pub fn surrogate_objective(
    pi_new: &Policy,
    samples: &[SurrogateSample],
    beta: f64,
    gamma: f64,
    regularizer: RegularizerKind,
) -> SurrogateValue {
    let mut sum = 0.0;
    let mut used = 0usize;
    for s in samples {
        let log_new = pi_new.log_density(&s.x, s.a).value;
        let Some(w) = ratio(log_new, s.log_old) else { continue };
        used += 1;
        if w > 0.0 {
            sum += w * (s.q_hat + gamma * regularizer_of(regularizer, log_new));
        }
    }
    SurrogateValue {
        value: if used > 0 { sum / (used as f64 * beta) } else { 0.0 },
        skipped: samples.len() - used,
        n: samples.len(),
    }
}

/// θ-gradient of [`surrogate_objective`] at `pi_new`.
pub fn surrogate_gradient(
    pi_new: &Policy,
    samples: &[SurrogateSample],
    beta: f64,
    gamma: f64,
    regularizer: RegularizerKind,
) -> Result<(PolicyGradient, usize)> {
    let mut g = PolicyGradient::zeros(pi_new.n_params());
    let mut used = 0usize;
    for s in samples {
        let log_new = pi_new.log_density(&s.x, s.a).value;
        let Some(w) = ratio(log_new, s.log_old) else { continue };
        used += 1;
        if w == 0.0 {
            continue;
        }
        let score = pi_new.score(&s.x, s.a)?;
        // ∇[w·(q̂ + γp_new)] = w·score·(q̂ + γp_new) + w·γ·∇p_new, with ∇p_new = −score for entropy.
        let coeff = match regularizer {
            RegularizerKind::None => s.q_hat,
            RegularizerKind::Entropy => s.q_hat + gamma * (-log_new) - gamma,
        };
        g.add_scaled(w * coeff, &score);
    }
    if used > 0 {
        g.scale(1.0 / (used as f64 * beta));
    }
    Ok((g, samples.len() - used))
}

/// Paths of the exploratory SDE under π (X) and π̂ (Y) sharing one Brownian
/// path. Both hold `n_steps + 1` states including the terminal one.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPair {
    pub dt: f64,
    pub n_steps: usize,
    pub state_dim: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl CoupledPair {
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    /// ‖X_{t_i} − Y_{t_i}‖².
    pub fn gap_sq(&self, i: usize) -> f64 {
        let d = self.state_dim;
        (0..d).map(|k| (self.x[i * d + k] - self.y[i * d + k]).powi(2)).sum()
    }
}

/// Symmetric square root of a row-major PSD matrix; negative eigenvalues from
/// rounding are clamped to zero.
fn sqrt_psd(m: &[f64], n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![m[0].max(0.0).sqrt()];
    }
    let mat = nalgebra::DMatrix::from_row_slice(n, n, m);
    let sym = 0.5 * (&mat + mat.transpose());
    let eig = sym.symmetric_eigen();
    let root = nalgebra::DVector::from_iterator(n, eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()));
    let r = &eig.eigenvectors * nalgebra::DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose();
    (0..n * n).map(|k| r[(k / n, k % n)]).collect()
}

fn exploratory_step(env: &EnvModel, policy: &Policy, x: &mut [f64], z: &[f64], dt: f64) -> Result<()> {
    let n = x.len();
    let agg = aggregated_coefficients(env, policy, x)?;
    let s = sqrt_psd(&agg.diffusion_sq, n);
    let sq = dt.sqrt();
    let old = x.to_vec();
    for i in 0..n {
        let noise: f64 = (0..n).map(|k| s[i * n + k] * z[k]).sum();
        x[i] = old[i] + agg.drift[i] * dt + noise * sq;
    }
    Ok(())
}

pub fn coupled_rollout<R: Rng + ?Sized>(
    env: &EnvModel,
    pi: &Policy,
    pi_hat: &Policy,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    rng: &mut R,
) -> Result<CoupledPair> {
    let n_steps = grid_steps(horizon, dt)?;
    let d = env.state_dim;
    if x0.len() != d {
        return Err(Error::Internal("x0 dimension mismatch".into()));
    }
    let mut x = x0.to_vec();
    let mut y = x0.to_vec();
    let mut xs = Vec::with_capacity((n_steps + 1) * d);
    let mut ys = Vec::with_capacity((n_steps + 1) * d);
    let mut z = vec![0.0; d];
    xs.extend_from_slice(&x);
    ys.extend_from_slice(&y);
    for step in 0..n_steps {
        for zk in z.iter_mut() {
            *zk = rng.sample(StandardNormal);
        }
        exploratory_step(env, pi, &mut x, &z, dt)?;
        exploratory_step(env, pi_hat, &mut y, &z, dt)?;
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::RolloutDiverged {
                step,
                reason: "non-finite coupled state".into(),
            });
        }
        xs.extend_from_slice(&x);
        ys.extend_from_slice(&y);
    }
    Ok(CoupledPair {
        dt,
        n_steps,
        state_dim: d,
        x: xs,
        y: ys,
    })
}

/// E‖X_t − Y_t‖² on the grid with per-time standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentCurve {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn coupled_second_moment<R: Rng + ?Sized>(
    env: &EnvModel,
    pi: &Policy,
    pi_hat: &Policy,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    n_pairs: usize,
    rng: &mut R,
) -> Result<MomentCurve> {
    let base = base_seed(rng);
    let gaps: Vec<Vec<f64>> = (0..n_pairs)
        .into_par_iter()
        .map(|j| {
            let mut r = rng::indexed(base, j as u64);
            let pair = coupled_rollout(env, pi, pi_hat, x0, horizon, dt, &mut r)?;
            Ok((0..=pair.n_steps).map(|i| pair.gap_sq(i)).collect())
        })
        .collect::<Result<_>>()?;
    let n_times = grid_steps(horizon, dt)? + 1;
    let mut curve = MomentCurve {
        times: (0..n_times).map(|i| i as f64 * dt).collect(),
        mean: Vec::with_capacity(n_times),
        se: Vec::with_capacity(n_times),
    };
    let mut column = vec![0.0; n_pairs];
    for i in 0..n_times {
        for (c, g) in column.iter_mut().zip(&gaps) {
            *c = g[i];
        }
        let e = McEstimate::from_samples(&column);
        curve.mean.push(e.mean);
        curve.se.push(if e.se.is_finite() { e.se } else { 0.0 });
    }
    Ok(curve)
}

/// Constants of the moment bound: drift monotonicity `c_b`, diffusion
/// Lipschitz constant `c_sigma`, and coefficient gap `c_pi` =
/// sup|b̃(·,π) − b̃(·,π̂)|² + 2·sup|σ̃(·,π) − σ̃(·,π̂)|².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GronwallConstants {
    pub c_b: f64,
    pub c_sigma: f64,
    pub c_pi: f64,
}

impl GronwallConstants {
    pub fn rate(&self) -> f64 {
        2.0 * self.c_b + 1.0 + 2.0 * self.c_sigma * self.c_sigma
    }

    /// c_pi / c · (e^{c t} − 1), or c_pi·t when c = 0.
    pub fn bound(&self, t: f64) -> f64 {
        let c = self.rate();
        if c == 0.0 {
            self.c_pi * t
        } else {
            self.c_pi / c * (c * t).exp_m1()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GronwallOutcome {
    Pass,
    Fail { time: f64, empirical: f64, se: f64, bound: f64 },
    NotApplicable(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GronwallReport {
    pub outcome: GronwallOutcome,
    /// min_t (bound(t) + 3·se(t) − mean(t)); negative exactly when failing.
    pub worst_slack: f64,
}

impl GronwallReport {
    pub fn passed(&self) -> bool {
        self.outcome == GronwallOutcome::Pass
    }
}

pub fn gronwall_check(curve: &MomentCurve, constants: Option<GronwallConstants>) -> GronwallReport {
    let Some(c) = constants else {
        return GronwallReport {
            outcome: GronwallOutcome::NotApplicable("constants unknown for this environment".into()),
            worst_slack: f64::NAN,
        };
    };
    let mut worst = f64::INFINITY;
    let mut outcome = GronwallOutcome::Pass;
    for ((&t, &m), &se) in curve.times.iter().zip(&curve.mean).zip(&curve.se) {
        let b = c.bound(t);
        let slack = b + 3.0 * se - m;
        if slack < worst {
            worst = slack;
            if slack < 0.0 {
                outcome = GronwallOutcome::Fail {
                    time: t,
                    empirical: m,
                    se,
                    bound: b,
                };
            }
        }
    }
    GronwallReport {
        outcome,
        worst_slack: worst,
    }
}

/// Constants for the synthetic bounded environment under two state-independent
/// Gaussian policies: b̃ = −λx + E tanh(a) gives c_b = −λ, σ̃ depends on the
/// policy only so c_sigma = 0, and the gaps are computed by quadrature.
pub fn bounded_env_constants(
    params: &BoundedParams,
    pi: &GaussianLinearPolicy,
    pi_hat: &GaussianLinearPolicy,
) -> Result<GronwallConstants> {
    if pi.theta[0] != 0.0 || pi_hat.theta[0] != 0.0 {
        return Err(Error::Parameter("bounded-env constants need state-independent policies (theta1 = 0)".into()));
    }
    let moments = |p: &GaussianLinearPolicy| {
        let gh = hermite32();
        let (m, sd) = (p.mean(0.0), p.variance().sqrt());
        let kappa = gh.normal_expectation(m, sd, f64::tanh);
        let s2 = gh.normal_expectation(m, sd, |a| (params.s0 + params.s1 * a.tanh().powi(2)).powi(2));
        (kappa, s2.sqrt())
    };
    let (k1, s1) = moments(pi);
    let (k2, s2) = moments(pi_hat);
    Ok(GronwallConstants {
        c_b: -params.lambda,
        c_sigma: 0.0,
        c_pi: (k1 - k2).powi(2) + 2.0 * (s1 - s2).powi(2),
    })
}

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub check: String,
    pub lhs: f64,
    pub rhs: f64,
    pub se: f64,
    pub status: &'static str,
}

impl CheckRow {
    pub fn new(check: impl Into<String>, lhs: f64, rhs: f64, se: f64, pass: bool) -> Self {
        Self {
            check: check.into(),
            lhs,
            rhs,
            se,
            status: if pass { "pass" } else { "fail" },
        }
    }

    pub fn passed(&self) -> bool {
        self.status == "pass"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use crate::sde::{make_bounded_env, make_ou_env};
    use rand::SeedableRng;

    fn ou_policy() -> Policy {
        GaussianLinearPolicy::new(0.0, 0.0, 0.0).into()
    }

    #[test]
    fn grid_snapping() {
        let t = snap_to_grid(0.123, 0.005);
        assert_eq!(t.index, 24);
        assert!((t.tau_grid - 0.120).abs() < 1e-12);
        let t = snap_to_grid(0.005, 0.005);
        assert_eq!(t.index, 1);
        assert_eq!(snap_to_grid(0.015, 0.005).index, 3);
        assert_eq!(snap_to_grid(0.0049, 0.005).index, 0);
    }

    #[test]
    fn exponential_mean() {
        let mut r = stream(7, Purpose::Tau);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_rollout_time(1.0, 0.005, 25.0, &mut r).unwrap().tau_raw)
            .collect();
        let e = McEstimate::from_samples(&draws);
        assert!((e.mean - 1.0).abs() < 3.0 * e.se, "{e:?}");
    }

    #[test]
    fn rollout_time_rejects_tail_and_short_horizons() {
        let mut r = stream(1, Purpose::Tau);
        for _ in 0..1000 {
            let t = sample_rollout_time(5.0, 0.1, 0.3, &mut r).unwrap();
            assert!(t.index <= 1);
            assert!(t.tau_grid <= t.tau_raw && t.tau_raw < t.tau_grid + 0.1 + 1e-12);
        }
        assert!(matches!(
            sample_rollout_time(1e-9, 0.5, 1.0, &mut r),
            Err(Error::Config(_))
        ));
        assert!(sample_rollout_time(0.0, 0.005, 1.0, &mut r).is_err());
    }

    #[test]
    fn histogram_of_constant_path() {
        let traj = Trajectory {
            dt: 0.005,
            n_steps: 5000,
            state_dim: 1,
            states: vec![0.3; 5000],
            actions: vec![0.0; 5000],
            rewards: vec![0.0; 5000],
            reg_values: vec![0.0; 5000],
        };
        let h = occupation_histogram(&[traj], 1.0, Bins::new(-1.0, 1.0, 20).unwrap()).unwrap();
        let k = ((0.3 + 1.0) / 0.1) as usize;
        assert!((h.masses[k] - h.normalization).abs() < 1e-12);
        assert!((h.total_mass() - h.normalization).abs() < 1e-12);
        let continuous = 1.0 - (-25.0f64).exp();
        // Left-Riemann sum exceeds the integral by about βδ/2.
        assert!((h.normalization - continuous).abs() < 0.005 * 0.5 * 1.01);
    }

    #[test]
    fn functional_of_constant_and_mean() {
        let env = make_ou_env();
        let mut r = stream(3, Purpose::Verify);
        let one = discounted_functional(&env, &ou_policy(), |_| 1.0, &[1.0], 1.0, 25.0, 0.005, 4, &mut r).unwrap();
        assert_eq!(one.se, 0.0);
        assert!((one.mean - discrete_mass(1.0, 0.005, 5000)).abs() < 1e-9);
        let mean = discounted_functional(&env, &ou_policy(), |x| x[0], &[1.0], 1.0, 25.0, 0.005, 2000, &mut r).unwrap();
        assert!((mean.mean - 0.5).abs() < 3.0 * mean.se + 0.005, "{mean:?}");
    }

    #[test]
    fn identical_policies_couple_exactly() {
        let env = make_bounded_env(BoundedParams {
            lambda: 1.0,
            s0: 0.5,
            s1: 0.3,
        })
        .unwrap();
        let p: Policy = GaussianLinearPolicy::new(0.0, 0.4, -1.0).into();
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let pair = coupled_rollout(&env, &p, &p, &[0.2], 1.0, 0.01, &mut r).unwrap();
        assert_eq!(pair.x, pair.y);
    }

    #[test]
    fn mean_shift_gap_follows_ode() {
        // Diffusion independent of the action: the gap solves g' = −λ g + Δκ.
        let params = BoundedParams {
            lambda: 1.0,
            s0: 0.5,
            s1: 0.0,
        };
        let env = make_bounded_env(params).unwrap();
        let p = GaussianLinearPolicy::new(0.0, 0.0, -2.0);
        let q = GaussianLinearPolicy::new(0.0, 0.8, -2.0);
        let c = bounded_env_constants(&params, &p, &q).unwrap();
        let dk = c.c_pi.sqrt();
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let pair = coupled_rollout(&env, &p.into(), &q.into(), &[0.0], 2.0, 0.001, &mut r).unwrap();
        for i in (0..=pair.n_steps).step_by(200) {
            let t = pair.time(i);
            let exact = dk * (1.0 - (-t).exp());
            assert!((pair.gap_sq(i).sqrt() - exact).abs() < 2e-3, "t={t}");
        }
    }

    #[test]
    fn gronwall_envelope_and_negative_control() {
        let params = BoundedParams {
            lambda: 1.0,
            s0: 0.5,
            s1: 0.3,
        };
        let env = make_bounded_env(params).unwrap();
        let p = GaussianLinearPolicy::new(0.0, -0.5, -1.0);
        let q = GaussianLinearPolicy::new(0.0, 0.7, -1.0);
        let c = bounded_env_constants(&params, &p, &q).unwrap();
        let mut r = stream(11, Purpose::Verify);
        let curve = coupled_second_moment(&env, &p.into(), &q.into(), &[0.0], 5.0, 0.01, 400, &mut r).unwrap();
        assert!(gronwall_check(&curve, Some(c)).passed());
        let halved = GronwallConstants { c_pi: c.c_pi / 2.0, ..c };
        assert!(!gronwall_check(&curve, Some(halved)).passed());
        assert!(matches!(
            gronwall_check(&curve, None).outcome,
            GronwallOutcome::NotApplicable(_)
        ));
    }

    #[test]
    fn zero_rate_bound_is_linear() {
        let c = GronwallConstants {
            c_b: -0.5,
            c_sigma: 0.0,
            c_pi: 2.0,
        };
        assert_eq!(c.rate(), 0.0);
        assert_eq!(c.bound(3.0), 6.0);
    }

    #[test]
    fn surrogate_at_old_policy() {
        let pi: Policy = GaussianLinearPolicy::new(-0.3, 0.1, -1.0).into();
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let samples: Vec<SurrogateSample> = (0..50)
            .map(|k| {
                let x = vec![k as f64 * 0.1 - 2.5];
                let a = pi.sample_action(&x, &mut r).unwrap();
                let log_old = pi.log_density(&x, a).value;
                SurrogateSample {
                    x,
                    a,
                    q_hat: 1.0,
                    p_hat: -log_old,
                    log_old,
                }
            })
            .collect();
        let v = surrogate_objective(&pi, &samples, 2.0, 0.0, RegularizerKind::Entropy);
        assert!((v.value - 0.5).abs() < 1e-12);
        assert_eq!(v.skipped, 0);
        let v = surrogate_objective(&pi, &samples, 2.0, 0.1, RegularizerKind::Entropy);
        let direct = samples.iter().map(|s| s.q_hat + 0.1 * s.p_hat).sum::<f64>() / 50.0 / 2.0;
        assert!((v.value - direct).abs() < 1e-12);
    }

    #[test]
    fn unusable_ratios_are_skipped() {
        let pi: Policy = GaussianLinearPolicy::new(0.0, 0.0, 0.0).into();
        let s = SurrogateSample {
            x: vec![0.0],
            a: 0.0,
            q_hat: 1.0,
            p_hat: 0.0,
            log_old: f64::NEG_INFINITY,
        };
        let v = surrogate_objective(&pi, &[s], 1.0, 0.0, RegularizerKind::None);
        assert_eq!(v.skipped, 1);
        assert!(v.excessive_skips());
    }
}
