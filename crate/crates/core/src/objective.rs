//! Reward accounting, the Lagrangian relaxation of the budgeted objective and
//! the active-cost parameterization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cost parameters seen by one decision step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub alpha2: f64,
    pub alpha3_true: f64,
    pub gamma: f64,
    pub budget: usize,
    pub multiplier: f64,
    pub alpha3_active: f64,
}

impl CostParams {
    pub fn new(alpha2: f64, alpha3_true: f64, gamma: f64, budget: usize, multiplier: f64) -> Result<Self> {
        if !(alpha2 >= 0.0) {
            return Err(Error::param("alpha2", "must be >= 0"));
        }
        if !(alpha3_true >= 0.0) {
            return Err(Error::param("alpha3_true", "must be >= 0"));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::param("gamma", "must lie in (0, 1]"));
        }
        Ok(Self {
            alpha2,
            alpha3_true,
            gamma,
            budget,
            multiplier,
            alpha3_active: active_cost(multiplier, alpha3_true)?,
        })
    }

    /// Same parameters under a different multiplier.
    pub fn with_multiplier(self, m: f64) -> Result<Self> {
        Ok(Self {
            multiplier: m,
            alpha3_active: active_cost(m, self.alpha3_true)?,
            ..self
        })
    }
}

/// Per-capita reward components of one cluster over some period.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub s1_norm: f64,
    pub s2_norm: f64,
    pub s3_norm: f64,
    pub reward: f64,
}

/// Cluster reward `-(S1 + a2*S2 + a3*S3) / N`, always scored with the true test cost.
pub fn cluster_reward(s1: f64, s2: f64, s3: f64, n: usize, alpha2: f64, alpha3_true: f64) -> Result<RewardBreakdown> {
    if n == 0 {
        return Err(Error::param("n", "cluster size must be at least 1"));
    }
    if s1 < 0.0 || s2 < 0.0 || s3 < 0.0 {
        return Err(Error::param("counters", "must be non-negative"));
    }
    let nf = n as f64;
    let (s1_norm, s2_norm, s3_norm) = (s1 / nf, s2 / nf, s3 / nf);
    Ok(RewardBreakdown {
        s1_norm,
        s2_norm,
        s3_norm,
        reward: recompose(s1_norm, s2_norm, s3_norm, alpha2, alpha3_true),
    })
}

/// Reward from already normalized components.
#[inline]
pub fn recompose(s1_norm: f64, s2_norm: f64, s3_norm: f64, alpha2: f64, alpha3: f64) -> f64 {
    -(s1_norm + alpha2 * s2_norm + alpha3 * s3_norm)
}

/// `alpha3_active = m * alpha3_true`.
pub fn active_cost(m: f64, alpha3_true: f64) -> Result<f64> {
    if !(m >= 0.0) || !m.is_finite() {
        return Err(Error::param("multiplier", format!("must be finite and >= 0, got {m}")));
    }
    Ok(m * alpha3_true)
}

/// One cluster's contribution at one step of a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmStep {
    pub reward: f64,
    pub tests: usize,
}

/// `sum_t gamma^t sum_n (R - lambda*C) + lambda*B / (1 - gamma)`.
///
/// `trajectory[t]` lists the per-cluster rewards and tests at step `t`.
pub fn lagrangian_value(trajectory: &[Vec<ArmStep>], lambda: f64, gamma: f64, budget: usize) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::param("gamma", "the relaxation needs gamma in (0, 1)"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::param("lambda", "must be >= 0"));
    }
    let mut discount = 1.0;
    let mut total = 0.0;
    for step in trajectory {
        let inner: f64 = step.iter().map(|a| a.reward - lambda * a.tests as f64).sum();
        total += discount * inner;
        discount *= gamma;
    }
    Ok(total + lambda * budget as f64 / (1.0 - gamma))
}
