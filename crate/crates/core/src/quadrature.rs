//! Gauss–Hermite rules for expectations under a normal law.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Nodes and weights for ∫ e^{-x²} f(x) dx ≈ Σ w_i f(x_i), computed by Newton
/// iteration on the orthonormal Hermite recurrence.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 2, "Gauss-Hermite rule needs at least 2 points");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let pim4 = PI.powf(-0.25);
        let m = n.div_ceil(2);
        let nf = n as f64;
        let mut z = 0.0_f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        Self { nodes, weights }
    }

    /// E[f(mean + sd·Z)] for Z ~ N(0,1).
    pub fn normal_expectation<F: FnMut(f64) -> f64>(&self, mean: f64, sd: f64, mut f: F) -> f64 {
        let scale = std::f64::consts::SQRT_2 * sd;
        let sum: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mean + scale * x))
            .sum();
        sum / PI.sqrt()
    }
}

pub fn hermite32() -> &'static GaussHermite {
    static RULE: OnceLock<GaussHermite> = OnceLock::new();
    RULE.get_or_init(|| GaussHermite::new(32))
}

pub fn hermite16() -> &'static GaussHermite {
    static RULE: OnceLock<GaussHermite> = OnceLock::new();
    RULE.get_or_init(|| GaussHermite::new(16))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_normal_moments() {
        let gh = hermite32();
        assert!((gh.weights.iter().sum::<f64>() - PI.sqrt()).abs() < 1e-12);
        assert!((gh.normal_expectation(0.0, 1.0, |z| z * z) - 1.0).abs() < 1e-12);
        assert!((gh.normal_expectation(0.5, 2.0, |z| z) - 0.5).abs() < 1e-12);
        assert!((gh.normal_expectation(0.0, 1.0, |z| z.powi(4)) - 3.0).abs() < 1e-10);
        // E cos(Z) = e^{-1/2}
        assert!((gh.normal_expectation(0.0, 1.0, f64::cos) - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn odd_rule_has_center_node() {
        let gh = GaussHermite::new(5);
        assert!(gh.nodes[2].abs() < 1e-14);
        assert!((gh.normal_expectation(0.0, 1.0, |z| z * z) - 1.0).abs() < 1e-12);
    }
}
