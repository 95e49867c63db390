use serde::{Deserialize, Serialize};

use super::{QPair, ScoringInput};
use crate::belief::decision_cost;
use crate::obs::ALPHA2_SLOT;

/// Scores a test by the quarantine cost it is expected to save.
///
/// A test taken today splits the belief into a positive and a negative
/// branch; the expected one-day cost of the threshold rule drops by
/// `c(q) - E[c(q_y)]`, which is credited for each remaining decision day up
/// to `lookahead`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScorer {
    pub alpha2: f64,
    pub lookahead: usize,
}

impl AnalyticScorer {
    pub fn new(alpha2: f64) -> Self {
        Self { alpha2, lookahead: 3 }
    }

    fn alpha2_for(&self, input: &ScoringInput<'_>) -> f64 {
        input.obs.0.get(ALPHA2_SLOT).copied().unwrap_or(self.alpha2)
    }

    /// Number of future decision days that can use today's result.
    pub fn horizon(&self, input: &ScoringInput<'_>) -> usize {
        let days_left = input
            .space
            .epi()
            .episode_days
            .saturating_sub(input.day + 1);
        self.lookahead.min(days_left)
    }

    /// Expected saving from the test before paying for it; never negative.
    pub fn value_of_information(&self, input: &ScoringInput<'_>) -> f64 {
        let a2 = self.alpha2_for(input);
        let q = input.posterior.q_infected(input.space);
        let (p_pos, q_pos, q_neg) = input.posterior.test_branches(input.space, input.day);
        let now = decision_cost(q, a2);
        let after = p_pos * decision_cost(q_pos, a2) + (1.0 - p_pos) * decision_cost(q_neg, a2);
        self.horizon(input) as f64 * (now - after).max(0.0)
    }

    pub fn q_values(&self, input: &ScoringInput<'_>) -> QPair {
        let a2 = self.alpha2_for(input);
        let l = self.horizon(input) as f64;
        let q = input.posterior.q_infected(input.space);
        let no_test = -l * decision_cost(q, a2);
        QPair {
            no_test,
            test: no_test + self.value_of_information(input) - input.obs.alpha3_active(),
        }
    }
}
