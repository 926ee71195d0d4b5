//! Gaussian perturbation of the outer update and the network-DP accountant.
//!
//! Noise variance: `sigma^2 = 8 M^2 ln(1.25/delta) / epsilon^2`, where `M` is
//! the meta-gradient sensitivity. The simulator enforces `M` by clipping.
//!
//! After `T` token steps over `n` clients the accountant reports
//!
//! ```text
//! N_u      = T/n + sqrt(3 T ln(1/delta_hat) / n)
//! q        = max(2 N_u, 2 ln(1/delta))
//! epsilon' = sqrt(2 q ln(1/delta)) * epsilon / sqrt(ln(1.25/delta))
//! ```
//!
//! with total failure probability `delta + delta_hat`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyParams {
    #[serde(default = "default_enabled")]
    pub enabled: bool,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Sensitivity bound, enforced as an l2 clipping norm.
    #[serde(default = "default_m_meta")]
    pub m_meta: f64,
    /// Slack probability used by the accountant.
    #[serde(default = "default_delta_hat")]
    pub delta_hat: f64,
}

fn default_enabled() -> bool {
    true
}
fn default_epsilon() -> f64 {
    0.5
}
fn default_delta() -> f64 {
    0.3
}
fn default_m_meta() -> f64 {
    10.0
}
fn default_delta_hat() -> f64 {
    0.1
}

impl Default for PrivacyParams {
    fn default() -> Self {
        PrivacyParams {
            enabled: default_enabled(),
            epsilon: default_epsilon(),
            delta: default_delta(),
            m_meta: default_m_meta(),
            delta_hat: default_delta_hat(),
        }
    }
}

impl PrivacyParams {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            out.push(format!("epsilon must satisfy 0 < epsilon < 1, got {}", self.epsilon));
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            out.push(format!("delta must satisfy 0 < delta < 1/2, got {}", self.delta));
        }
        if !(self.m_meta > 0.0 && self.m_meta.is_finite()) {
            out.push(format!("m_meta must be > 0, got {}", self.m_meta));
        }
        if !(self.delta_hat > 0.0 && self.delta_hat < 1.0) {
            out.push(format!("delta_hat must satisfy 0 < delta_hat < 1, got {}", self.delta_hat));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.join("; ")))
        }
    }
}

fn check_epsilon_delta(epsilon: f64, delta: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::param("epsilon", format!("requires 0 < epsilon < 1, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::param("delta", format!("requires 0 < delta < 1/2, got {delta}")));
    }
    Ok(())
}

/// Per-coordinate noise variance `8 M^2 ln(1.25/delta) / epsilon^2`.
pub fn noise_variance(epsilon: f64, delta: f64, m_meta: f64) -> Result<f64> {
    check_epsilon_delta(epsilon, delta)?;
    if !(m_meta > 0.0 && m_meta.is_finite()) {
        return Err(Error::param("m_meta", format!("requires m_meta > 0, got {m_meta}")));
    }
    Ok(8.0 * m_meta * m_meta * (1.25 / delta).ln() / (epsilon * epsilon))
}

/// i.i.d. `N(0, sigma2)` vector.
pub fn sample_perturbation<R: Rng + ?Sized>(sigma2: f64, dim: usize, rng: &mut R) -> Result<Vec<f64>> {
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::param("sigma2", format!("variance must be finite and >= 0, got {sigma2}")));
    }
    if sigma2 == 0.0 {
        return Ok(vec![0.0; dim]);
    }
    let sd = sigma2.sqrt();
    Ok((0..dim).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DpReport {
    pub epsilon: f64,
    pub delta: f64,
    pub delta_hat: f64,
    pub epsilon_prime: f64,
    pub delta_total: f64,
    pub n_u: f64,
    pub q: f64,
    pub iterations: u64,
    pub clients: usize,
}

impl DpReport {
    /// `key=value` pairs for run headers.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("dp_epsilon", format!("{:?}", self.epsilon)),
            ("dp_delta", format!("{:?}", self.delta)),
            ("dp_delta_hat", format!("{:?}", self.delta_hat)),
            ("dp_epsilon_prime", format!("{:?}", self.epsilon_prime)),
            ("dp_delta_total", format!("{:?}", self.delta_total)),
            ("dp_n_u", format!("{:?}", self.n_u)),
            ("dp_q", format!("{:?}", self.q)),
            ("dp_iterations", self.iterations.to_string()),
            ("dp_clients", self.clients.to_string()),
        ]
    }
}

/// Network-DP guarantee of the perturbed token walk after `iterations` steps
/// over `clients` clients.
pub fn account_network_dp(epsilon: f64, delta: f64, delta_hat: f64, iterations: u64, clients: usize) -> Result<DpReport> {
    check_epsilon_delta(epsilon, delta)?;
    if !(delta_hat > 0.0 && delta_hat < 1.0) {
        return Err(Error::param("delta_hat", format!("requires 0 < delta_hat < 1, got {delta_hat}")));
    }
    if iterations == 0 {
        return Err(Error::param("iterations", "requires T >= 1"));
    }
    if clients == 0 {
        return Err(Error::param("clients", "requires n >= 1"));
    }
    let t = iterations as f64;
    let n = clients as f64;
    let n_u = t / n + (3.0 / n * t * (1.0 / delta_hat).ln()).sqrt();
    let ln_inv_delta = (1.0 / delta).ln();
    let q = (2.0 * n_u).max(2.0 * ln_inv_delta);
    let epsilon_prime = (2.0 * q * ln_inv_delta).sqrt() * epsilon / (1.25 / delta).ln().sqrt();
    Ok(DpReport {
        epsilon,
        delta,
        delta_hat,
        epsilon_prime,
        delta_total: delta + delta_hat,
        n_u,
        q,
        iterations,
        clients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Domain};
    use approx::assert_abs_diff_eq;

    #[test]
    fn variance_formula() {
        let s = noise_variance(0.5, 0.3, 1.0).unwrap();
        assert_abs_diff_eq!(s, 32.0 * (25.0f64 / 6.0).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(s, 45.6677, epsilon = 1e-4);
        assert_abs_diff_eq!(noise_variance(0.5, 0.3, 2.0).unwrap(), 4.0 * s, epsilon = 1e-12);
        assert!(noise_variance(0.999_999, 0.499_999, 1e-3).unwrap() > 0.0);
    }

    #[test]
    fn variance_domain_errors() {
        assert!(matches!(noise_variance(1.5, 0.3, 1.0), Err(Error::Parameter { name: "epsilon", .. })));
        assert!(matches!(noise_variance(0.5, 0.5, 1.0), Err(Error::Parameter { name: "delta", .. })));
        assert!(matches!(noise_variance(0.5, 0.3, 0.0), Err(Error::Parameter { name: "m_meta", .. })));
    }

    #[test]
    fn variance_decreases_in_epsilon_and_delta() {
        let grid: Vec<f64> = (1..20).map(|i| i as f64 * 0.05 - 0.01).collect();
        for w in grid.windows(2) {
            assert!(noise_variance(w[1], 0.3, 1.0).unwrap() < noise_variance(w[0], 0.3, 1.0).unwrap());
        }
        let deltas: Vec<f64> = (1..10).map(|i| i as f64 * 0.05).collect();
        for w in deltas.windows(2) {
            assert!(noise_variance(0.5, w[1], 1.0).unwrap() < noise_variance(0.5, w[0], 1.0).unwrap());
        }
    }

    #[test]
    fn perturbation_moments() {
        let mut rng = substream(1, Domain::Noise, 0);
        assert_eq!(sample_perturbation(0.0, 5, &mut rng).unwrap(), vec![0.0; 5]);
        assert!(sample_perturbation(-1.0, 5, &mut rng).is_err());
        let draws = sample_perturbation(4.0, 200_000, &mut rng).unwrap();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!(mean.abs() < 0.03);
        assert!((var - 4.0).abs() < 0.08);
    }

    #[test]
    fn accountant_reference_point() {
        // Recomputed by hand: N_u = 1 + sqrt(3 ln 10).
        let r = account_network_dp(0.5, 0.3, 0.1, 100, 100).unwrap();
        let n_u = 1.0 + (3.0 * 10f64.ln()).sqrt();
        assert_abs_diff_eq!(r.n_u, n_u, epsilon = 1e-12);
        assert_abs_diff_eq!(r.q, 2.0 * n_u, epsilon = 1e-12);
        assert_abs_diff_eq!(r.epsilon_prime, 1.7496, epsilon = 1e-4);
        assert_abs_diff_eq!(r.delta_total, 0.4, epsilon = 1e-15);
    }

    #[test]
    fn accountant_floor_on_q() {
        // Large n: 2 N_u falls below 2 ln(1/delta).
        let r = account_network_dp(0.5, 0.01, 0.1, 1, 10_000).unwrap();
        assert_abs_diff_eq!(r.q, 2.0 * 100f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn accountant_domain_errors() {
        assert!(matches!(account_network_dp(1.0, 0.3, 0.1, 10, 10), Err(Error::Parameter { name: "epsilon", .. })));
        assert!(matches!(account_network_dp(0.5, 0.6, 0.1, 10, 10), Err(Error::Parameter { name: "delta", .. })));
        assert!(matches!(account_network_dp(0.5, 0.3, 0.0, 10, 10), Err(Error::Parameter { name: "delta_hat", .. })));
        assert!(account_network_dp(0.5, 0.3, 0.1, 0, 10).is_err());
        assert!(account_network_dp(0.5, 0.3, 0.1, 10, 0).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(PrivacyParams::default().validate().is_ok());
        let bad = PrivacyParams {
            epsilon: 1.5,
            ..PrivacyParams::default()
        };
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("epsilon < 1"));
    }
}
