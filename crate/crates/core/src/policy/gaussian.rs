use std::f64::consts::{E, PI};

/// π_θ(·|x) = Normal(θ₁x + θ₂, exp(θ₃)); exp(θ₃) is the variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianLinearPolicy {
    pub theta: [f64; 3],
}

impl GaussianLinearPolicy {
    pub fn new(theta1: f64, theta2: f64, theta3: f64) -> Self {
        Self {
            theta: [theta1, theta2, theta3],
        }
    }

    /// Policy with the given mean coefficients and variance.
    pub fn from_moments(slope: f64, intercept: f64, variance: f64) -> Self {
        Self::new(slope, intercept, variance.ln())
    }

    pub fn mean(&self, x: f64) -> f64 {
        self.theta[0] * x + self.theta[1]
    }

    pub fn variance(&self) -> f64 {
        self.theta[2].exp()
    }

    pub fn log_density(&self, x: f64, a: f64) -> f64 {
        let v = self.variance();
        let d = a - self.mean(x);
        -0.5 * (2.0 * PI * v).ln() - d * d / (2.0 * v)
    }

    pub fn score(&self, x: f64, a: f64) -> [f64; 3] {
        let v = self.variance();
        let d = a - self.mean(x);
        [d * x / v, d / v, -0.5 + d * d / (2.0 * v)]
    }

    /// Differential entropy ½ log(2πe·v).
    pub fn entropy(&self) -> f64 {
        0.5 * (2.0 * PI * E * self.variance()).ln()
    }

    /// KL(self(·|x) ‖ other(·|x)).
    pub fn kl(&self, other: &Self, x: f64) -> f64 {
        let (v1, v2) = (self.variance(), other.variance());
        let d = self.mean(x) - other.mean(x);
        let kl = 0.5 * (other.theta[2] - self.theta[2]) + (v1 + d * d) / (2.0 * v2) - 0.5;
        kl.max(0.0)
    }

    /// ∂/∂θ_other of KL(self ‖ other).
    pub fn kl_grad_other(&self, other: &Self, x: f64) -> [f64; 3] {
        let (v1, v2) = (self.variance(), other.variance());
        let d = self.mean(x) - other.mean(x);
        [-d * x / v2, -d / v2, 0.5 - (v1 + d * d) / (2.0 * v2)]
    }
}
