use rand::Rng;
use rand_distr::{Beta, Distribution};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::digamma;

use crate::nn::{Mlp, Tape};

/// Lower bound added after softplus so both shape parameters stay positive.
pub const SHAPE_FLOOR: f64 = 1e-3;

/// Inward nudge for actions sampled exactly on ±ℓ.
pub const BOUNDARY_EPS: f64 = f64::EPSILON;

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Beta policy on [−ℓ, ℓ] whose shape parameters are the two outputs of a
/// tanh network, passed through softplus(·) + `SHAPE_FLOOR`.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaMlpPolicy {
    pub net: Mlp,
    pub ell: f64,
}

pub(crate) struct Heads {
    pub alpha: f64,
    pub beta: f64,
    pub z: [f64; 2],
    pub tape: Tape,
}

impl BetaMlpPolicy {
    pub fn new(net: Mlp, ell: f64) -> Self {
        assert_eq!(net.output_dim(), 2, "beta policy network needs two outputs");
        Self { net, ell }
    }

    pub(crate) fn heads(&self, x: &[f64]) -> Heads {
        let tape = self.net.forward_tape(x);
        let out = tape.output();
        let z = [out[0], out[1]];
        Heads {
            alpha: softplus(z[0]) + SHAPE_FLOOR,
            beta: softplus(z[1]) + SHAPE_FLOOR,
            z,
            tape,
        }
    }

    pub fn shapes(&self, x: &[f64]) -> (f64, f64) {
        let h = self.heads(x);
        (h.alpha, h.beta)
    }

    /// Maps an action to the unit interval; `None` when outside [−ℓ, ℓ].
    pub fn unit(&self, a: f64) -> Option<f64> {
        if !(a.is_finite() && a.abs() <= self.ell) {
            return None;
        }
        let u = (a + self.ell) / (2.0 * self.ell);
        Some(u.clamp(BOUNDARY_EPS, 1.0 - BOUNDARY_EPS))
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> f64 {
        let (alpha, beta) = self.shapes(x);
        let u: f64 = Beta::new(alpha, beta)
            .expect("shape parameters are positive")
            .sample(rng);
        2.0 * self.ell * u - self.ell
    }

    pub(crate) fn log_density_unit(&self, alpha: f64, beta: f64, u: f64) -> f64 {
        (alpha - 1.0) * u.ln() + (beta - 1.0) * (1.0 - u).ln() - ln_beta(alpha, beta) - (2.0 * self.ell).ln()
    }

    pub fn score(&self, x: &[f64], u: f64) -> Vec<f64> {
        let h = self.heads(x);
        let common = digamma(h.alpha + h.beta);
        let d_alpha = u.ln() - digamma(h.alpha) + common;
        let d_beta = (1.0 - u).ln() - digamma(h.beta) + common;
        let upstream = [d_alpha * sigmoid(h.z[0]), d_beta * sigmoid(h.z[1])];
        let mut grad = vec![0.0; self.net.n_params()];
        self.net.backward(&h.tape, &upstream, &mut grad);
        grad
    }

    pub fn kl(&self, other: &Self, x: &[f64]) -> f64 {
        let (a1, b1) = self.shapes(x);
        let (a2, b2) = other.shapes(x);
        beta_kl(a1, b1, a2, b2)
    }

    /// ∂/∂θ_other of KL(self ‖ other).
    pub fn kl_grad_other(&self, other: &Self, x: &[f64]) -> Vec<f64> {
        let (a1, b1) = self.shapes(x);
        let h = other.heads(x);
        let (a2, b2) = (h.alpha, h.beta);
        let base = digamma(a1 + b1) - digamma(a2 + b2);
        let d_a2 = digamma(a2) - digamma(a1) + base;
        let d_b2 = digamma(b2) - digamma(b1) + base;
        let upstream = [d_a2 * sigmoid(h.z[0]), d_b2 * sigmoid(h.z[1])];
        let mut grad = vec![0.0; other.net.n_params()];
        other.net.backward(&h.tape, &upstream, &mut grad);
        grad
    }
}

/// KL(Beta(a1,b1) ‖ Beta(a2,b2)); invariant under the affine map to [−ℓ, ℓ].
pub fn beta_kl(a1: f64, b1: f64, a2: f64, b2: f64) -> f64 {
    let kl = ln_beta(a2, b2) - ln_beta(a1, b1)
        + (a1 - a2) * digamma(a1)
        + (b1 - b2) * digamma(b1)
        + (a2 - a1 + b2 - b1) * digamma(a1 + b1);
    kl.max(0.0)
}
