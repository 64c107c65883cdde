//! Closed-form ground truth for the scalar entropy-regularized LQ problem.
//!
//! Value functions of Gaussian-linear policies are quadratics and are
//! represented with [`QuadraticCritic`] (φ₀, φ₁, φ₂) = (k₀, k₁, k₂).

use std::f64::consts::{E, PI};

use crate::critic::QuadraticCritic;
use crate::error::{Error, Result};
use crate::policy::GaussianLinearPolicy;
use crate::sde::LqParams;

/// Optimal value constants and optimal Gaussian feedback policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqSolution {
    pub k0: f64,
    pub k1: f64,
    pub k2: f64,
    pub mean_slope: f64,
    pub mean_intercept: f64,
    /// γ / (N − k₂D²); zero when γ = 0 (greedy control).
    pub variance: f64,
}

impl LqSolution {
    pub fn value(&self) -> QuadraticCritic {
        QuadraticCritic::new(self.k0, self.k1, self.k2)
    }

    /// π* as a Gaussian-linear policy. Undefined (−∞ log-variance) for γ = 0.
    pub fn policy(&self) -> GaussianLinearPolicy {
        GaussianLinearPolicy::from_moments(self.mean_slope, self.mean_intercept, self.variance)
    }
}

pub fn solve_lq(p: &LqParams) -> Result<LqSolution> {
    p.validate().map_err(|e| Error::Admissibility(e.to_string()))?;
    let bcd = p.b + p.c * p.d;
    let slack = p.beta - (2.0 * p.a + p.c * p.c);
    let lead = bcd * bcd + slack * p.d * p.d;
    let mid = slack * p.n + 2.0 * bcd * p.r - p.d * p.d * p.m;
    let constant = p.r * p.r - p.m * p.n;
    // k₂ is the smaller root of lead·k² − mid·k + constant = 0
    let k2 = if lead.abs() < 1e-300 {
        if mid == 0.0 {
            return Err(Error::Admissibility("k2 relation is degenerate".into()));
        }
        constant / mid
    } else {
        let disc = mid * mid - 4.0 * lead * constant;
        if disc < 0.0 {
            return Err(Error::Admissibility(format!("negative discriminant {disc} in k2")));
        }
        0.5 * mid / lead - 0.5 * disc.sqrt() / lead
    };
    let gain = p.n - k2 * p.d * p.d;
    if gain <= 0.0 {
        return Err(Error::Degenerate(gain));
    }
    let k1 = (p.p * gain - p.q * p.r) / (k2 * p.b * bcd + (p.a - p.beta) * gain - p.b * p.r);
    let entropy_term = if p.gamma > 0.0 {
        p.gamma / (2.0 * p.beta) * ((2.0 * PI * E * p.gamma / gain).ln() - 1.0)
    } else {
        0.0
    };
    let k0 = (k1 * p.b - p.q).powi(2) / (2.0 * p.beta * gain) + entropy_term;
    Ok(LqSolution {
        k0,
        k1,
        k2,
        mean_slope: (k2 * bcd - p.r) / gain,
        mean_intercept: (k1 * p.b - p.q) / gain,
        variance: p.gamma / gain,
    })
}

/// Value function V(·; π) of a Gaussian-linear policy, from matching the
/// x², x and constant terms of the HJ equation.
pub fn evaluate_policy(p: &LqParams, policy: &GaussianLinearPolicy) -> Result<QuadraticCritic> {
    let [t1, t2, _] = policy.theta;
    let v = policy.variance();
    let a1 = p.a + p.b * t1;
    let a0 = p.b * t2;
    let c1 = p.c + p.d * t1;
    let c0 = p.d * t2;
    let curvature_rate = p.beta - 2.0 * a1 - c1 * c1;
    let slope_rate = p.beta - a1;
    if curvature_rate <= 0.0 || slope_rate <= 0.0 {
        return Err(Error::Admissibility(format!(
            "policy {:?} has unbounded value (beta - 2(A+B t1) - (C+D t1)^2 = {curvature_rate})",
            policy.theta
        )));
    }
    let k2 = -(p.m + 2.0 * p.r * t1 + p.n * t1 * t1) / curvature_rate;
    let k1 = (a0 * k2 + k2 * c1 * c0 - p.r * t2 - p.n * t1 * t2 - p.p - p.q * t1) / slope_rate;
    let k0 = (a0 * k1 + 0.5 * k2 * (c0 * c0 + p.d * p.d * v) - 0.5 * p.n * (t2 * t2 + v) - p.q * t2
        + p.gamma * policy.entropy())
        / p.beta;
    Ok(QuadraticCritic::new(k0, k1, k2))
}

/// q(x, a) = b·V' + ½σ²V'' + r − βV for a quadratic V.
pub fn analytic_q(value: &QuadraticCritic, p: &LqParams, x: f64, a: f64) -> f64 {
    let drift = p.a * x + p.b * a;
    let sigma = p.c * x + p.d * a;
    let reward = -(0.5 * p.m * x * x + p.r * x * a + 0.5 * p.n * a * a + p.p * x + p.q * a);
    drift * value.derivative(x) + 0.5 * sigma * sigma * value.second_derivative() + reward
        - p.beta * value.value(x)
}

/// Coefficients (c₂, c₁, c₀) of q(x, a) = c₂a² + c₁a + c₀ at fixed x.
pub fn q_action_polynomial(value: &QuadraticCritic, p: &LqParams, x: f64) -> [f64; 3] {
    let q0 = analytic_q(value, p, x, 0.0);
    let q1 = analytic_q(value, p, x, 1.0);
    let qm = analytic_q(value, p, x, -1.0);
    [0.5 * (q1 + qm) - q0, 0.5 * (q1 - qm), q0]
}

/// βV − b̃V' − ½σ̃²V'' − r̃ − γp̃ with Gaussian moments in closed form.
pub fn hj_residual(critic: &QuadraticCritic, policy: &GaussianLinearPolicy, p: &LqParams, x: f64) -> f64 {
    let m = policy.mean(x);
    let v = policy.variance();
    let drift = p.a * x + p.b * m;
    let s = p.c * x + p.d * m;
    let diffusion_sq = s * s + p.d * p.d * v;
    let reward = -(0.5 * p.m * x * x + p.r * x * m + 0.5 * p.n * (m * m + v) + p.p * x + p.q * m);
    p.beta * critic.value(x)
        - drift * critic.derivative(x)
        - 0.5 * diffusion_sq * critic.second_derivative()
        - reward
        - p.gamma * policy.entropy()
}

/// Residual as a polynomial in x: `[c₀, c₁, c₂]`.
pub fn hj_residual_coefficients(critic: &QuadraticCritic, policy: &GaussianLinearPolicy, p: &LqParams) -> [f64; 3] {
    let f0 = hj_residual(critic, policy, p, 0.0);
    let f1 = hj_residual(critic, policy, p, 1.0);
    let fm = hj_residual(critic, policy, p, -1.0);
    [f0, 0.5 * (f1 - fm), 0.5 * (f1 + fm) - f0]
}

/// Mean over `states` of the divergence of π from π*, integrated under π,
/// so that `η(π) − η(π*) = −γ·E_d[kl]` holds exactly.
pub fn kl_to_optimal(policy: &GaussianLinearPolicy, sol: &LqSolution, states: &[f64]) -> f64 {
    if states.is_empty() {
        return 0.0;
    }
    let opt = sol.policy();
    states.iter().map(|&x| policy.kl(&opt, x)).sum::<f64>() / states.len() as f64
}
