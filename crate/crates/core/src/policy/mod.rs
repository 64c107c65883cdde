//! Parametric stochastic feedback policies.

mod beta;
mod gaussian;

pub use beta::{beta_kl, BetaMlpPolicy, BOUNDARY_EPS, SHAPE_FLOOR};
pub use gaussian::GaussianLinearPolicy;

use std::ops::{Deref, DerefMut};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::quadrature::{hermite16, hermite32};
use crate::rng;
use crate::sde::{ActionSpace, EnvKind, EnvModel, RegularizerKind};

/// Flat vector aligned with a policy's parameter layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolicyGradient(pub Vec<f64>);

impl PolicyGradient {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// self += scale · other
    pub fn add_scaled(&mut self, scale: f64, other: &[f64]) {
        for (s, o) in self.0.iter_mut().zip(other) {
            *s += scale * o;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|g| *g *= factor);
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for PolicyGradient {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for PolicyGradient {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Log-density value with an explicit support flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDensity {
    pub value: f64,
    pub in_support: bool,
}

impl LogDensity {
    fn outside() -> Self {
        Self {
            value: f64::NEG_INFINITY,
            in_support: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Gaussian(GaussianLinearPolicy),
    Beta(BetaMlpPolicy),
}

impl From<GaussianLinearPolicy> for Policy {
    fn from(p: GaussianLinearPolicy) -> Self {
        Policy::Gaussian(p)
    }
}

impl From<BetaMlpPolicy> for Policy {
    fn from(p: BetaMlpPolicy) -> Self {
        Policy::Beta(p)
    }
}

impl Policy {
    pub fn family(&self) -> &'static str {
        match self {
            Policy::Gaussian(_) => "gaussian-linear",
            Policy::Beta(_) => "beta-mlp",
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Policy::Gaussian(_) => 3,
            Policy::Beta(p) => p.net.n_params(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            Policy::Gaussian(p) => p.theta.to_vec(),
            Policy::Beta(p) => p.net.params().to_vec(),
        }
    }

    pub fn with_params(&self, params: &[f64]) -> Result<Policy> {
        if params.len() != self.n_params() {
            return Err(Error::Parameter(format!(
                "{} policy expects {} parameters, got {}",
                self.family(),
                self.n_params(),
                params.len()
            )));
        }
        Ok(match self {
            Policy::Gaussian(_) => Policy::Gaussian(GaussianLinearPolicy::new(params[0], params[1], params[2])),
            Policy::Beta(p) => {
                let mut q = p.clone();
                q.net.params_mut().copy_from_slice(params);
                Policy::Beta(q)
            }
        })
    }

    pub fn action_space(&self) -> ActionSpace {
        match self {
            Policy::Gaussian(_) => ActionSpace::Real,
            Policy::Beta(p) => ActionSpace::Interval { ell: p.ell },
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        let ok = match self {
            Policy::Gaussian(p) => p.theta.iter().all(|t| t.is_finite()),
            Policy::Beta(p) => p.ell.is_finite() && p.net.params().iter().all(|t| t.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("{} policy has non-finite parameters", self.family())))
        }
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<f64> {
        match self {
            Policy::Gaussian(p) => {
                let z: f64 = rng.sample(StandardNormal);
                let a = p.mean(x[0]) + p.variance().sqrt() * z;
                if a.is_finite() {
                    Ok(a)
                } else {
                    Err(Error::Parameter("gaussian policy produced a non-finite action".into()))
                }
            }
            Policy::Beta(p) => {
                let (alpha, beta) = p.shapes(x);
                if !(alpha.is_finite() && beta.is_finite()) {
                    return Err(Error::Parameter("beta policy shapes are non-finite".into()));
                }
                Ok(p.sample(x, rng))
            }
        }
    }

    pub fn log_density(&self, x: &[f64], a: f64) -> LogDensity {
        match self {
            Policy::Gaussian(p) => {
                if !a.is_finite() {
                    return LogDensity::outside();
                }
                LogDensity {
                    value: p.log_density(x[0], a),
                    in_support: true,
                }
            }
            Policy::Beta(p) => match p.unit(a) {
                None => LogDensity::outside(),
                Some(u) => {
                    let (alpha, beta) = p.shapes(x);
                    LogDensity {
                        value: p.log_density_unit(alpha, beta, u),
                        in_support: true,
                    }
                }
            },
        }
    }

    /// ∇_θ log π_θ(a|x).
    pub fn score(&self, x: &[f64], a: f64) -> Result<PolicyGradient> {
        match self {
            Policy::Gaussian(p) => {
                if !a.is_finite() {
                    return Err(Error::OutOfSupport { action: a });
                }
                Ok(PolicyGradient(p.score(x[0], a).to_vec()))
            }
            Policy::Beta(p) => {
                let u = p.unit(a).ok_or(Error::OutOfSupport { action: a })?;
                Ok(PolicyGradient(p.score(x, u)))
            }
        }
    }

    /// ∂/∂θ_other of KL(self(·|x) ‖ other(·|x)).
    pub fn kl_grad_other(&self, other: &Policy, x: &[f64]) -> Result<PolicyGradient> {
        match (self, other) {
            (Policy::Gaussian(p), Policy::Gaussian(q)) => Ok(PolicyGradient(p.kl_grad_other(q, x[0]).to_vec())),
            (Policy::Beta(p), Policy::Beta(q)) => Ok(PolicyGradient(p.kl_grad_other(q, x))),
            _ => Err(mixed(self, other)),
        }
    }
}

fn mixed(p: &Policy, q: &Policy) -> Error {
    Error::FamilyMismatch(format!("{} vs {}", p.family(), q.family()))
}

/// KL(p(·|x) ‖ q(·|x)) in closed form.
pub fn kl_divergence(p: &Policy, q: &Policy, x: &[f64]) -> Result<f64> {
    match (p, q) {
        (Policy::Gaussian(p), Policy::Gaussian(q)) => Ok(p.kl(q, x[0])),
        (Policy::Beta(p), Policy::Beta(q)) => {
            if p.ell != q.ell {
                return Err(Error::FamilyMismatch(format!("beta supports differ: {} vs {}", p.ell, q.ell)));
            }
            Ok(p.kl(q, x))
        }
        _ => Err(mixed(p, q)),
    }
}

/// p(x, a, π): zero without regularization, −log π(a|x) for entropy.
/// Out-of-support actions give +∞.
pub fn regularizer_rate(env: &EnvModel, policy: &Policy, x: &[f64], a: f64) -> f64 {
    match env.regularizer {
        RegularizerKind::None => 0.0,
        RegularizerKind::Entropy => -policy.log_density(x, a).value,
    }
}

/// Exploratory-SDE coefficients b̃(x, π) and σ̃²(x, π) = ∫ σσᵀ π(da).
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregated {
    pub drift: Vec<f64>,
    /// Row-major n × n.
    pub diffusion_sq: Vec<f64>,
}

const GH_TOLERANCE: f64 = 1e-6;
const MC_SAMPLES: usize = 10_000;
const MC_TOLERANCE: f64 = 5e-2;
const MC_SEED: u64 = 0x00A6_6E6A_7ED0;

pub fn aggregated_coefficients(env: &EnvModel, policy: &Policy, x: &[f64]) -> Result<Aggregated> {
    let n = env.state_dim;
    if let (EnvKind::Lq(p), Policy::Gaussian(g)) = (&env.kind, policy) {
        let m = g.mean(x[0]);
        let v = g.variance();
        let s = p.c * x[0] + p.d * m;
        return Ok(Aggregated {
            drift: vec![p.a * x[0] + p.b * m],
            diffusion_sq: vec![s * s + p.d * p.d * v],
        });
    }
    let accumulate = |a: f64, weight: f64, drift: &mut [f64], dsq: &mut [f64], b: &mut [f64], s: &mut [f64]| {
        env.drift(x, a, b);
        env.diffusion(x, a, s);
        for i in 0..n {
            drift[i] += weight * b[i];
        }
        let m = env.noise_dim;
        for i in 0..n {
            for j in 0..n {
                let sij: f64 = (0..m).map(|k| s[i * m + k] * s[j * m + k]).sum();
                dsq[i * n + j] += weight * sij;
            }
        }
    };
    let mut bbuf = vec![0.0; n];
    let mut sbuf = vec![0.0; n * env.noise_dim];
    match policy {
        Policy::Gaussian(g) => {
            let mean = g.mean(x[0]);
            let sd = g.variance().sqrt();
            let rule = |gh: &crate::quadrature::GaussHermite, bbuf: &mut [f64], sbuf: &mut [f64]| {
                let mut drift = vec![0.0; n];
                let mut dsq = vec![0.0; n * n];
                let norm = std::f64::consts::PI.sqrt();
                for (&z, &w) in gh.nodes.iter().zip(&gh.weights) {
                    let a = mean + std::f64::consts::SQRT_2 * sd * z;
                    accumulate(a, w / norm, &mut drift, &mut dsq, bbuf, sbuf);
                }
                (drift, dsq)
            };
            let (d32, s32) = rule(hermite32(), &mut bbuf, &mut sbuf);
            let (d16, s16) = rule(hermite16(), &mut bbuf, &mut sbuf);
            let gap = d32
                .iter()
                .zip(&d16)
                .chain(s32.iter().zip(&s16))
                .map(|(a, b)| (a - b).abs() / (1.0 + a.abs()))
                .fold(0.0, f64::max);
            if gap > GH_TOLERANCE {
                return Err(Error::Quadrature {
                    estimate: s32[0],
                    error: gap,
                    tolerance: GH_TOLERANCE,
                });
            }
            Ok(Aggregated {
                drift: d32,
                diffusion_sq: s32,
            })
        }
        Policy::Beta(_) => {
            let mut r = rng::indexed(MC_SEED, 0);
            let mut drift = vec![0.0; n];
            let mut dsq = vec![0.0; n * n];
            let mut sum_sq = vec![0.0; n + n * n];
            let w = 1.0 / MC_SAMPLES as f64;
            for _ in 0..MC_SAMPLES {
                let a = policy.sample_action(x, &mut r)?;
                let mut d1 = vec![0.0; n];
                let mut s1 = vec![0.0; n * n];
                accumulate(a, 1.0, &mut d1, &mut s1, &mut bbuf, &mut sbuf);
                for (k, val) in d1.iter().chain(s1.iter()).enumerate() {
                    sum_sq[k] += val * val;
                }
                drift.iter_mut().zip(&d1).for_each(|(d, v)| *d += w * v);
                dsq.iter_mut().zip(&s1).for_each(|(d, v)| *d += w * v);
            }
            for (k, mean) in drift.iter().chain(dsq.iter()).enumerate() {
                let var = (sum_sq[k] * w - mean * mean).max(0.0);
                let se = (var / MC_SAMPLES as f64).sqrt();
                let rel = se / (1.0 + mean.abs());
                if rel > MC_TOLERANCE {
                    return Err(Error::Quadrature {
                        estimate: *mean,
                        error: se,
                        tolerance: MC_TOLERANCE,
                    });
                }
            }
            Ok(Aggregated {
                drift,
                diffusion_sq: dsq,
            })
        }
    }
}
