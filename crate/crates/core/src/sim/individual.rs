use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::params::{Day, EpiParams};

/// A reported test outcome for one test day.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestResult {
    #[default]
    None,
    Negative,
    Positive,
}

impl TestResult {
    /// Observation encoding: -1 missing, 0 negative, +1 positive.
    pub fn code(self) -> f64 {
        match self {
            TestResult::None => -1.0,
            TestResult::Negative => 0.0,
            TestResult::Positive => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingResult {
    pub available_day: Day,
    pub test_day: Day,
    pub positive: bool,
}

/// Latent and observed trajectory of one contact. Days are cluster-local.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IndividualState {
    pub infected: bool,
    pub infection_day: Option<Day>,
    /// Day the incubation period ends. Also set for asymptomatic infections,
    /// where it anchors the infectious window.
    pub symptom_onset_day: Option<Day>,
    pub will_be_symptomatic: bool,
    pub quarantined: bool,
    pub quarantine_start_day: Option<Day>,
    pub symptom_observed_history: Vec<bool>,
    pub tested_history: Vec<bool>,
    pub pending_results: VecDeque<PendingResult>,
    /// Indexed by test day; set once the result has been delivered.
    pub reported_results: Vec<TestResult>,
}

impl IndividualState {
    pub fn infected_on(&self, day: Day) -> bool {
        matches!(self.infection_day, Some(d) if d <= day)
    }

    pub fn infectious_on(&self, day: Day, epi: &EpiParams) -> bool {
        match (self.infection_day, self.symptom_onset_day) {
            (Some(inf), Some(onset)) => epi.infectious_window(inf, onset, day),
            _ => false,
        }
    }

    pub fn true_symptoms_on(&self, day: Day, epi: &EpiParams) -> bool {
        match self.symptom_onset_day {
            Some(onset) if self.will_be_symptomatic && self.infected_on(day) => {
                epi.symptom_window(onset, day)
            }
            _ => false,
        }
    }

    /// Result visible for `test_day`, if it has been delivered.
    pub fn result_for(&self, test_day: Day) -> TestResult {
        self.reported_results
            .get(test_day)
            .copied()
            .unwrap_or_default()
    }
}
