//! Value-function approximators, the online MSTDE update and the one-step
//! q-rate estimator.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::sde::Trajectory;

/// V_φ(x) = ½φ₂x² + φ₁x + φ₀, stored as `[φ₀, φ₁, φ₂]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuadraticCritic {
    pub phi: [f64; 3],
}

impl QuadraticCritic {
    pub fn new(phi0: f64, phi1: f64, phi2: f64) -> Self {
        Self { phi: [phi0, phi1, phi2] }
    }

    pub fn value(&self, x: f64) -> f64 {
        0.5 * self.phi[2] * x * x + self.phi[1] * x + self.phi[0]
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.phi[2] * x + self.phi[1]
    }

    pub fn second_derivative(&self) -> f64 {
        self.phi[2]
    }

    pub fn gradient(&self, x: f64) -> [f64; 3] {
        [1.0, x, 0.5 * x * x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpCritic {
    pub net: Mlp,
}

impl MlpCritic {
    pub fn new(net: Mlp) -> Self {
        assert_eq!(net.output_dim(), 1, "critic network must have a scalar output");
        Self { net }
    }

    pub fn uniform<R: Rng + ?Sized>(state_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self::new(Mlp::uniform(&[state_dim, hidden, hidden, 1], -0.5, 0.5, rng))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Critic {
    Quadratic(QuadraticCritic),
    Mlp(MlpCritic),
}

impl From<QuadraticCritic> for Critic {
    fn from(c: QuadraticCritic) -> Self {
        Critic::Quadratic(c)
    }
}

impl From<MlpCritic> for Critic {
    fn from(c: MlpCritic) -> Self {
        Critic::Mlp(c)
    }
}

impl Critic {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Critic::Quadratic(c) => c.value(x[0]),
            Critic::Mlp(c) => c.net.forward(x)[0],
        }
    }

    /// ∂V_φ(x)/∂φ.
    pub fn value_gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Critic::Quadratic(c) => c.gradient(x[0]).to_vec(),
            Critic::Mlp(c) => {
                let tape = c.net.forward_tape(x);
                let mut g = vec![0.0; c.net.n_params()];
                c.net.backward(&tape, &[1.0], &mut g);
                g
            }
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Critic::Quadratic(_) => 3,
            Critic::Mlp(c) => c.net.n_params(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            Critic::Quadratic(c) => c.phi.to_vec(),
            Critic::Mlp(c) => c.net.params().to_vec(),
        }
    }

    pub fn with_params(&self, params: &[f64]) -> Result<Critic> {
        if params.len() != self.n_params() {
            return Err(Error::Parameter(format!(
                "critic expects {} parameters, got {}",
                self.n_params(),
                params.len()
            )));
        }
        let mut out = self.clone();
        out.params_mut().copy_from_slice(params);
        Ok(out)
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Critic::Quadratic(c) => &mut c.phi,
            Critic::Mlp(c) => c.net.params_mut(),
        }
    }

    /// Value and parameter gradient at `x` in one pass.
    pub(crate) fn value_and_gradient(&self, x: &[f64], grad: &mut Vec<f64>) -> f64 {
        match self {
            Critic::Quadratic(c) => {
                grad.clear();
                grad.extend_from_slice(&c.gradient(x[0]));
                c.value(x[0])
            }
            Critic::Mlp(c) => {
                let tape = c.net.forward_tape(x);
                grad.clear();
                grad.resize(c.net.n_params(), 0.0);
                c.net.backward(&tape, &[1.0], grad);
                tape.output()[0]
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }
}

/// TD bracket dV + r·δ + γ·p·δ − β·V·δ realized on the grid between steps
/// `i` and `i+1`, given V at both points.
pub fn td_bracket(traj: &Trajectory, i: usize, v_now: f64, v_next: f64, beta: f64, gamma: f64) -> f64 {
    let dt = traj.dt;
    v_next - v_now + traj.rewards[i] * dt + gamma * traj.reg_values[i] * dt - beta * v_now * dt
}

/// Step-size rule for the per-step critic updates inside a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticStep {
    /// α as given.
    Plain,
    /// α / max(1, ‖∇V‖²): normalized LMS. Keeps the sweep stable when the
    /// features are unbounded in x (the quadratic critic under heavy-tailed
    /// states); identical to `Plain` whenever ‖∇V‖ ≤ 1.
    Normalized,
}

impl CriticStep {
    pub fn name(&self) -> &'static str {
        match self {
            CriticStep::Plain => "plain",
            CriticStep::Normalized => "normalized",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "plain" => Some(CriticStep::Plain),
            "normalized" => Some(CriticStep::Normalized),
            _ => None,
        }
    }

    pub(crate) fn scale(&self, grad: &[f64]) -> f64 {
        match self {
            CriticStep::Plain => 1.0,
            CriticStep::Normalized => 1.0 / grad.iter().map(|g| g * g).sum::<f64>().max(1.0),
        }
    }
}

/// One MSTDE step at grid index `i` (requires `i + 1 < n_steps`).
pub fn mstde_update(critic: &Critic, traj: &Trajectory, i: usize, alpha: f64, beta: f64, gamma: f64) -> Critic {
    let mut next = critic.clone();
    let mut grad = Vec::new();
    mstde_step_in_place(&mut next, traj, i, alpha, beta, gamma, CriticStep::Plain, &mut grad);
    next
}

#[allow(clippy::too_many_arguments)]
fn mstde_step_in_place(
    critic: &mut Critic,
    traj: &Trajectory,
    i: usize,
    alpha: f64,
    beta: f64,
    gamma: f64,
    step: CriticStep,
    grad: &mut Vec<f64>,
) {
    assert!(i + 1 < traj.n_steps, "MSTDE needs a successor state (i = {i}, n = {})", traj.n_steps);
    if alpha == 0.0 {
        return;
    }
    let v_now = critic.value_and_gradient(traj.state(i), grad);
    let v_next = critic.value(traj.state(i + 1));
    let bracket = td_bracket(traj, i, v_now, v_next, beta, gamma) * step.scale(grad);
    for (p, g) in critic.params_mut().iter_mut().zip(grad.iter()) {
        *p += alpha * g * bracket;
    }
}

/// Sweeps the MSTDE update over i = 0..N−2 in order.
pub fn mstde_sweep(critic: &mut Critic, traj: &Trajectory, alpha: f64, beta: f64, gamma: f64, step: CriticStep) {
    let mut grad = Vec::with_capacity(critic.n_params());
    for i in 0..traj.n_steps.saturating_sub(1) {
        mstde_step_in_place(critic, traj, i, alpha, beta, gamma, step, &mut grad);
    }
}

/// Estimated q-rate at grid index `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QEstimate {
    pub value: f64,
    pub index: usize,
    pub action: f64,
}

/// (r·δ + e^{−βδ}·V(X_{i+1}) − V(X_i)) / δ.
pub fn q_estimate(critic: &Critic, traj: &Trajectory, i: usize, beta: f64) -> QEstimate {
    assert!(i + 1 < traj.n_steps, "q estimate needs a successor state (i = {i}, n = {})", traj.n_steps);
    let dt = traj.dt;
    let v_now = critic.value(traj.state(i));
    let v_next = critic.value(traj.state(i + 1));
    QEstimate {
        value: (traj.rewards[i] * dt + (-beta * dt).exp() * v_next - v_now) / dt,
        index: i,
        action: traj.actions[i],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn two_state(x0: f64, x1: f64, r: f64, p: f64, dt: f64) -> Trajectory {
        Trajectory {
            dt,
            n_steps: 2,
            state_dim: 1,
            states: vec![x0, x1],
            actions: vec![0.0, 0.0],
            rewards: vec![r, 0.0],
            reg_values: vec![p, 0.0],
        }
    }

    #[test]
    fn quadratic_value_examples() {
        assert_eq!(Critic::from(QuadraticCritic::default()).value(&[3.0]), 0.0);
        let c = QuadraticCritic::new(0.71914874, -0.10555128, -0.53518376);
        assert_eq!(c.value(0.0), 0.71914874);
        assert!((c.value(1.0) - 0.34600558).abs() < 1e-8);
        let c: Critic = c.into();
        assert_eq!(c.value_gradient(&[0.0]), vec![1.0, 0.0, 0.0]);
        assert_eq!(c.value_gradient(&[2.0]), vec![1.0, 2.0, 2.0]);
    }

    #[test]
    fn mstde_zero_rate_and_zero_residual() {
        let c: Critic = QuadraticCritic::new(0.3, -0.2, 0.5).into();
        let traj = two_state(1.0, 0.9, 2.0, 0.4, 0.005);
        assert_eq!(mstde_update(&c, &traj, 0, 0.0, 1.0, 0.1), c);
        // constant V = 1 with r = β·V − γ·p makes the bracket vanish
        let c: Critic = QuadraticCritic::new(1.0, 0.0, 0.0).into();
        let traj = two_state(1.0, 0.9, 1.0 - 0.1 * 0.4, 0.4, 0.005);
        let next = mstde_update(&c, &traj, 0, 0.5, 1.0, 0.1);
        for (a, b) in next.params().iter().zip(c.params()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn mstde_hand_computed_update() {
        let c: Critic = QuadraticCritic::new(0.2, -0.1, 0.4).into();
        let traj = two_state(1.5, 1.4, -0.7, 0.3, 0.01);
        let (alpha, beta, gamma) = (0.05, 1.0, 0.1);
        let v = |x: f64| 0.5 * 0.4 * x * x - 0.1 * x + 0.2;
        let bracket = v(1.4) - v(1.5) + (-0.7) * 0.01 + gamma * 0.3 * 0.01 - beta * v(1.5) * 0.01;
        let expected = [
            0.2 + alpha * bracket,
            -0.1 + alpha * 1.5 * bracket,
            0.4 + alpha * 0.5 * 1.5 * 1.5 * bracket,
        ];
        let next = mstde_update(&c, &traj, 0, alpha, beta, gamma);
        for (a, b) in next.params().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn q_estimate_examples() {
        let zero: Critic = QuadraticCritic::default().into();
        let traj = two_state(0.2, 0.3, 0.0, 0.0, 0.005);
        assert_eq!(q_estimate(&zero, &traj, 0, 1.0).value, 0.0);
        let one: Critic = QuadraticCritic::new(1.0, 0.0, 0.0).into();
        let q = q_estimate(&one, &traj, 0, 1.0).value;
        let expected = ((-0.005f64).exp() - 1.0) / 0.005;
        assert!((q - expected).abs() < 1e-12);
        assert!((q + 0.9975).abs() < 1e-4);
    }

    #[test]
    fn mlp_value_gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let c = Critic::from(MlpCritic::uniform(2, 8, &mut rng));
        let x = [0.7, -0.4];
        let g = c.value_gradient(&x);
        let p = c.params();
        let h = 1e-6;
        for i in 0..p.len() {
            let mut up = p.clone();
            up[i] += h;
            let mut dn = p.clone();
            dn[i] -= h;
            let fd = (c.with_params(&up).unwrap().value(&x) - c.with_params(&dn).unwrap().value(&x)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-8 + 1e-5 * fd.abs());
        }
    }
}
