//! Python module `ctrl_py`: LQ oracle, Gaussian policy, critic update,
//! penalty controller and config-driven runs.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ctrl_core::algorithms::{penalty_adapt as adapt, PenaltyState};
use ctrl_core::critic::{mstde_sweep, Critic, CriticStep, QuadraticCritic};
use ctrl_core::harness::{self, parse_config_with};
use ctrl_core::lq;
use ctrl_core::policy::GaussianLinearPolicy;
use ctrl_core::rng::{stream, Purpose};
use ctrl_core::sde::{make_lq_env, rollout_steps, LqParams};

fn py_err(e: ctrl_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[allow(clippy::too_many_arguments)]
fn lq_params(
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    m: f64,
    n: f64,
    r: f64,
    p: f64,
    q: f64,
    beta: f64,
    gamma: f64,
) -> LqParams {
    LqParams {
        a,
        b,
        c,
        d,
        m,
        n,
        r,
        p,
        q,
        beta,
        gamma,
    }
}

/// Closed-form optimal value constants and policy of the scalar LQ problem.
#[pyfunction]
#[pyo3(signature = (a=-1.0, b=0.0, c=0.0, d=1.0, m=2.0, n=2.0, r=1.0, p=1.0, q=2.0, beta=1.0, gamma=0.1))]
#[allow(clippy::too_many_arguments)]
fn solve_lq<'py>(
    py: Python<'py>,
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    m: f64,
    n: f64,
    r: f64,
    p: f64,
    q: f64,
    beta: f64,
    gamma: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let sol = lq::solve_lq(&lq_params(a, b, c, d, m, n, r, p, q, beta, gamma)).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("k0", sol.k0)?;
    out.set_item("k1", sol.k1)?;
    out.set_item("k2", sol.k2)?;
    out.set_item("mean_slope", sol.mean_slope)?;
    out.set_item("mean_intercept", sol.mean_intercept)?;
    out.set_item("variance", sol.variance)?;
    out.set_item("theta", sol.policy().theta.to_vec())?;
    Ok(out)
}

/// Value coefficients (k0, k1, k2) of a Gaussian-linear policy on the benchmark LQ problem.
#[pyfunction]
fn evaluate_policy(theta: [f64; 3]) -> PyResult<(f64, f64, f64)> {
    let pi = GaussianLinearPolicy::new(theta[0], theta[1], theta[2]);
    let v = lq::evaluate_policy(&LqParams::benchmark(), &pi).map_err(py_err)?;
    Ok((v.phi[0], v.phi[1], v.phi[2]))
}

/// a ~ N(θ₁x + θ₂, e^{θ₃}).
#[pyclass(name = "GaussianPolicy", from_py_object)]
#[derive(Clone)]
struct PyGaussianPolicy {
    inner: GaussianLinearPolicy,
}

#[pymethods]
impl PyGaussianPolicy {
    #[new]
    fn new(theta1: f64, theta2: f64, theta3: f64) -> Self {
        Self {
            inner: GaussianLinearPolicy::new(theta1, theta2, theta3),
        }
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.inner.theta.to_vec()
    }

    fn mean(&self, x: f64) -> f64 {
        self.inner.mean(x)
    }

    fn variance(&self) -> f64 {
        self.inner.variance()
    }

    fn log_density(&self, x: f64, a: f64) -> f64 {
        self.inner.log_density(x, a)
    }

    fn score(&self, x: f64, a: f64) -> Vec<f64> {
        self.inner.score(x, a).to_vec()
    }

    fn kl(&self, other: &PyGaussianPolicy, x: f64) -> f64 {
        self.inner.kl(&other.inner, x)
    }

    fn __repr__(&self) -> String {
        let t = self.inner.theta;
        format!("GaussianPolicy({}, {}, {})", t[0], t[1], t[2])
    }
}

/// One normalized MSTDE sweep of a quadratic critic along a
/// benchmark-LQ rollout of `policy`; returns the new (φ₀, φ₁, φ₂).
#[pyfunction]
#[pyo3(signature = (phi, policy, alpha, steps=400, dt=0.005, seed=0))]
fn critic_sweep(
    phi: [f64; 3],
    policy: &PyGaussianPolicy,
    alpha: f64,
    steps: usize,
    dt: f64,
    seed: u64,
) -> PyResult<(f64, f64, f64)> {
    let p = LqParams::benchmark();
    let env = make_lq_env(p).map_err(py_err)?;
    let pi = policy.inner.into();
    let mut rng = stream(seed, Purpose::Rollout);
    let traj = rollout_steps(&env, &pi, &[0.0], steps, dt, &mut rng).map_err(py_err)?;
    let mut critic: Critic = QuadraticCritic::new(phi[0], phi[1], phi[2]).into();
    mstde_sweep(&mut critic, &traj, alpha, p.beta, p.gamma, CriticStep::Normalized);
    let out = critic.params();
    Ok((out[0], out[1], out[2]))
}

/// Doubles, halves or keeps `c` depending on where `measured` falls
/// relative to [δ/(1+ε), (1+ε)δ].
#[pyfunction]
fn penalty_adapt(c: f64, measured: f64, delta: f64, epsilon: f64) -> PyResult<f64> {
    if c <= 0.0 {
        return Err(PyValueError::new_err("penalty must be positive"));
    }
    Ok(adapt(PenaltyState::new(c), measured, delta, epsilon).c)
}

/// Runs a `key = value` config (with optional overrides) and returns the
/// exit code plus one summary dict per seed, or the check rows for `algo = verify`.
#[pyfunction]
#[pyo3(signature = (config, overrides=None))]
fn run<'py>(
    py: Python<'py>,
    config: &str,
    overrides: Option<Vec<(String, String)>>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = parse_config_with(config, &overrides.unwrap_or_default()).map_err(py_err)?;
    let report = py.detach(|| harness::run(&cfg)).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("exit_code", report.exit_code)?;
    let mut seeds = Vec::new();
    for s in &report.seeds {
        let d = PyDict::new(py);
        d.set_item("seed", s.seed)?;
        d.set_item("initial_eta", s.initial.eta.mean)?;
        d.set_item("final_eta", s.last.map(|e| e.eta.mean))?;
        d.set_item("final_l2_to_theta_star", s.last.and_then(|e| e.l2_to_theta_star))?;
        d.set_item("final_kl_to_optimal", s.last.and_then(|e| e.kl_to_optimal))?;
        d.set_item("theta", s.final_state.policy.params())?;
        d.set_item("diverged", s.diverged.clone())?;
        seeds.push(d);
    }
    out.set_item("seeds", seeds)?;
    let checks: Vec<(String, f64, f64, f64, bool)> = report
        .checks
        .iter()
        .map(|c| (c.check.clone(), c.lhs, c.rhs, c.se, c.passed()))
        .collect();
    out.set_item("checks", checks)?;
    Ok(out)
}

#[pymodule]
fn ctrl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(solve_lq, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_policy, m)?)?;
    m.add_function(wrap_pyfunction!(critic_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(penalty_adapt, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_class::<PyGaussianPolicy>()?;
    Ok(())
}
