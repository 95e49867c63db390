//! Cost-conditioned marginal-value estimation for the test action.

mod analytic;
pub mod checkpoint;
mod env;
mod learned;
mod replay;
mod train;

pub use analytic::AnalyticScorer;
pub use env::{evaluate_single_cluster, EvalPolicy, EvalStats, SingleClusterEnv};
pub use learned::{grad_penalty, grad_penalty_fd, hinge_penalty, EstimatorMeta, LearnedQ};
pub use replay::{ReplayBuffer, Transition};
pub use train::{epsilon_at, td_train, TrainConfig, TrainReport};

use serde::{Deserialize, Serialize};

use crate::belief::{HypothesisSpace, Posterior};
use crate::obs::LocalObs;
use crate::params::Day;

/// Everything a backend may use to score one individual.
#[derive(Clone, Copy, Debug)]
pub struct ScoringInput<'a> {
    pub obs: &'a LocalObs,
    pub posterior: &'a Posterior,
    pub space: &'a HypothesisSpace,
    /// Current local decision day.
    pub day: Day,
}

/// `Q(o, a)` for `a` in {no-test, test}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QPair {
    pub no_test: f64,
    pub test: f64,
}

impl QPair {
    pub fn delta(&self) -> f64 {
        self.test - self.no_test
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum QEstimator {
    Analytic(AnalyticScorer),
    Learned(LearnedQ),
}

impl QEstimator {
    pub fn analytic(alpha2: f64) -> Self {
        QEstimator::Analytic(AnalyticScorer::new(alpha2))
    }

    pub fn backend_name(&self) -> &'static str {
        match self {
            QEstimator::Analytic(_) => "analytic",
            QEstimator::Learned(_) => "learned",
        }
    }

    /// The quarantine weight the estimator was built for.
    pub fn alpha2(&self) -> f64 {
        match self {
            QEstimator::Analytic(a) => a.alpha2,
            QEstimator::Learned(l) => l.meta.alpha2,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            QEstimator::Analytic(_) => crate::obs::LOCAL_DIM,
            QEstimator::Learned(l) => l.meta.obs_dim,
        }
    }

    pub fn q_values(&self, input: &ScoringInput<'_>) -> QPair {
        match self {
            QEstimator::Analytic(a) => a.q_values(input),
            QEstimator::Learned(l) => l.q_values(input.obs),
        }
    }

    /// `Q(o, test) - Q(o, no-test)`.
    pub fn delta_q(&self, input: &ScoringInput<'_>) -> f64 {
        match self {
            QEstimator::Analytic(a) => a.value_of_information(input) - input.obs.alpha3_active(),
            QEstimator::Learned(l) => l.q_values(input.obs).delta(),
        }
    }

    /// Score many individuals, overriding the active test cost of every observation.
    pub fn delta_q_batch(&self, inputs: &[ScoringInput<'_>], alpha3_active: f64) -> Vec<f64> {
        match self {
            QEstimator::Analytic(a) => inputs
                .iter()
                .map(|inp| a.value_of_information(inp) - alpha3_active)
                .collect(),
            QEstimator::Learned(l) => l.delta_q_batch(inputs.iter().map(|i| i.obs), alpha3_active),
        }
    }
}

/// The delta-Q of an estimator as a plain function of one observation.
pub fn delta_q(estimator: &QEstimator, input: &ScoringInput<'_>) -> f64 {
    estimator.delta_q(input)
}
