//! Adaptive outer update with explicit auxiliary state.
//!
//! The update has no bias correction:
//!
//! ```text
//! m' = theta * m + (1 - theta) * g
//! v' = beta * v + (1 - beta) * g^2
//! w' = w - eta * (m' + noise) / sqrt(v' + lambda)
//! ```
//!
//! Whether `AuxState` lives with a client or travels with the token is decided
//! by the caller; the step itself is a pure function of its inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::norm;

/// Momentum `m`, preconditioner `v` and the number of steps taken.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
}

impl AuxState {
    pub fn zeros(dim: usize) -> Self {
        AuxState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step_count: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    /// Outer learning rate.
    #[serde(default = "defaults::eta")]
    pub eta: f64,
    /// First-moment weight.
    #[serde(default = "defaults::theta")]
    pub theta: f64,
    /// Second-moment weight.
    #[serde(default = "defaults::beta")]
    pub beta: f64,
    /// Denominator offset.
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    /// Inner learning rate.
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    /// Inner steps.
    #[serde(default = "defaults::inner_steps")]
    pub inner_steps: usize,
}

pub(crate) mod defaults {
    pub fn eta() -> f64 {
        0.001
    }
    pub fn theta() -> f64 {
        0.0
    }
    pub fn beta() -> f64 {
        0.99
    }
    pub fn lambda() -> f64 {
        1e-8
    }
    pub fn alpha() -> f64 {
        0.01
    }
    pub fn inner_steps() -> usize {
        5
    }
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            eta: defaults::eta(),
            theta: defaults::theta(),
            beta: defaults::beta(),
            lambda: defaults::lambda(),
            alpha: defaults::alpha(),
            inner_steps: defaults::inner_steps(),
        }
    }
}

impl HyperParams {
    /// Every violated bound, by field name.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        // eta = 0 is accepted so a run can be frozen for diagnostics.
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            out.push(format!("eta must be >= 0, got {}", self.eta));
        }
        if !(0.0..1.0).contains(&self.theta) {
            out.push(format!("theta must satisfy 0 <= theta < 1, got {}", self.theta));
        }
        if !(0.0..1.0).contains(&self.beta) {
            out.push(format!("beta must satisfy 0 <= beta < 1, got {}", self.beta));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            out.push(format!("lambda must be > 0, got {}", self.lambda));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            out.push(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if self.inner_steps == 0 {
            out.push("inner_steps must be >= 1".to_string());
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

/// One adaptive step. Returns the advanced state and the parameter delta.
/// `noise` enters the numerator only; the denominator uses the clean `v'`.
pub fn adam_step(state: &AuxState, g: &[f64], noise: &[f64], h: &HyperParams) -> Result<(AuxState, Vec<f64>)> {
    let d = state.m.len();
    if g.len() != d || noise.len() != d || state.v.len() != d {
        return Err(Error::param(
            "gradient",
            format!("shape mismatch: state {d}, gradient {}, noise {}", g.len(), noise.len()),
        ));
    }
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("gradient passed to adam_step is not finite".into()));
    }
    let mut next = AuxState {
        m: Vec::with_capacity(d),
        v: Vec::with_capacity(d),
        step_count: state.step_count + 1,
    };
    let mut delta = Vec::with_capacity(d);
    for i in 0..d {
        let m = h.theta * state.m[i] + (1.0 - h.theta) * g[i];
        let v = h.beta * state.v[i] + (1.0 - h.beta) * g[i] * g[i];
        delta.push(-h.eta * (m + noise[i]) / (v + h.lambda).sqrt());
        next.m.push(m);
        next.v.push(v);
    }
    Ok((next, delta))
}

pub fn sgd_step(g: &[f64], eta: f64) -> Vec<f64> {
    g.iter().map(|g| -eta * g).collect()
}

/// Rescales `g` onto the l2 ball of radius `bound` when it lies outside.
pub fn clip(g: &[f64], bound: f64) -> Result<Vec<f64>> {
    if bound.is_nan() || bound <= 0.0 {
        return Err(Error::param("bound", format!("clipping bound must be positive, got {bound}")));
    }
    let n = norm(g);
    if n <= bound {
        Ok(g.to_vec())
    } else {
        Ok(g.iter().map(|x| x * bound / n).collect())
    }
}
