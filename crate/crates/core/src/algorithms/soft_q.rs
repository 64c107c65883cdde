use crate::critic::QuadraticCritic;
use crate::error::{Error, Result};
use crate::lq::q_action_polynomial;
use crate::policy::GaussianLinearPolicy;
use crate::sde::LqParams;

/// Maximizer of ∫ v(a)(q(x,a) − γ log v(a)) da over densities v.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Improvement {
    Gaussian { mean: f64, variance: f64 },
    PointMass(f64),
}

/// Improvement for q(x, ·) = c₂a² + c₁a + c₀ given as `[c₂, c₁, c₀]`:
/// v ∝ exp(q/γ), or the argmax when γ = 0.
pub fn soft_q_improvement(q_coeffs: [f64; 3], gamma: f64) -> Result<Improvement> {
    let [c2, c1, _] = q_coeffs;
    if !(c2 < 0.0) {
        return Err(Error::ImprovementUndefined(c2));
    }
    let mean = -c1 / (2.0 * c2);
    if gamma == 0.0 {
        Ok(Improvement::PointMass(mean))
    } else {
        Ok(Improvement::Gaussian {
            mean,
            variance: gamma / (-2.0 * c2),
        })
    }
}

/// Gaussian-linear policy whose law at every x is the soft improvement of the
/// LQ q-function induced by `value`. Requires γ > 0.
pub fn soft_q_policy(value: &QuadraticCritic, p: &LqParams) -> Result<GaussianLinearPolicy> {
    let at = |x: f64| soft_q_improvement(q_action_polynomial(value, p, x), p.gamma);
    match (at(0.0)?, at(1.0)?) {
        (Improvement::Gaussian { mean: m0, variance }, Improvement::Gaussian { mean: m1, .. }) => {
            Ok(GaussianLinearPolicy::from_moments(m1 - m0, m0, variance))
        }
        _ => Err(Error::Parameter("soft improvement with gamma = 0 is a point mass".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lq::solve_lq;

    #[test]
    fn centered_quadratic() {
        assert_eq!(
            soft_q_improvement([-0.5, 0.0, 0.0], 0.1).unwrap(),
            Improvement::Gaussian {
                mean: 0.0,
                variance: 0.1
            }
        );
    }

    #[test]
    fn greedy_limit() {
        // −(a−3)² = −a² + 6a − 9
        assert_eq!(soft_q_improvement([-1.0, 6.0, -9.0], 0.0).unwrap(), Improvement::PointMass(3.0));
    }

    #[test]
    fn convex_q_is_rejected() {
        assert!(matches!(
            soft_q_improvement([0.0, 1.0, 0.0], 0.1),
            Err(Error::ImprovementUndefined(_))
        ));
    }

    #[test]
    fn optimal_policy_is_fixed_point() {
        let p = LqParams::benchmark();
        let sol = solve_lq(&p).unwrap();
        let pi = soft_q_policy(&sol.value(), &p).unwrap();
        let star = sol.policy();
        for (a, b) in pi.theta.iter().zip(star.theta) {
            assert!((a - b).abs() < 1e-9, "{:?} vs {:?}", pi.theta, star.theta);
        }
        for x in [-2.0, -0.5, 0.0, 1.3, 4.0] {
            match soft_q_improvement(q_action_polynomial(&sol.value(), &p, x), p.gamma).unwrap() {
                Improvement::Gaussian { mean, variance } => {
                    assert!((mean - star.mean(x)).abs() < 1e-9);
                    assert!((variance - sol.variance).abs() < 1e-12);
                }
                other => panic!("{other:?}"),
            }
        }
    }
}
