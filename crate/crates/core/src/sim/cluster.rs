use serde::{Deserialize, Serialize};

use super::individual::{IndividualState, PendingResult, TestResult};
use crate::error::{Error, Result};
use crate::params::{ClusterId, Day, EpiParams};
use crate::rng::{Channel, StreamKey};

/// Per-individual decision for one day.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndividualAction {
    pub test: bool,
    pub quarantine: bool,
}

/// Aggregates recorded for one simulated cluster day.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterDay {
    pub tests: u32,
    pub symptomatic: u32,
    /// Positive results delivered at the end of this day.
    pub positives: u32,
    pub s1: u32,
    pub s2: u32,
    pub s3: u32,
}

/// Cost flags of one individual for one day.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndividualDayCost {
    /// Infectious and not quarantined.
    pub s1: bool,
    /// Quarantined while not infected.
    pub s2: bool,
    pub tested: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterStepOutcome {
    pub local_day: Day,
    pub delta: ClusterDay,
    pub per_individual: Vec<IndividualDayCost>,
}

/// A cohort of contacts of one index case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    pub id: ClusterId,
    pub size: usize,
    /// Global day on which this cluster's local day 0 happens.
    pub activation_day: Day,
    pub index_high_transmissive: bool,
    pub individuals: Vec<IndividualState>,
    pub s1_days: u64,
    pub s2_days: u64,
    pub s3_tests: u64,
    pub active: bool,
    pub finished: bool,
    /// Next local day to simulate.
    pub local_day: Day,
    pub daily: Vec<ClusterDay>,
    root_seed: u64,
}

/// Create a cluster: draws the index type, exposes every contact once and
/// samples incubation and symptom status for the infected ones.
pub fn spawn_cluster(
    root_seed: u64,
    id: ClusterId,
    activation_day: Day,
    epi: &EpiParams,
    size: usize,
) -> Result<ClusterState> {
    if size < epi.cluster_size_min || size > epi.cluster_size_max {
        return Err(Error::param(
            "size",
            format!(
                "cluster size {size} outside [{}, {}]",
                epi.cluster_size_min, epi.cluster_size_max
            ),
        ));
    }
    let high = StreamKey::new(root_seed, id, 0, 0, Channel::IndexFlag)
        .stream()
        .bernoulli(epi.p_high_transmissive_index);
    let p_exposure = epi.exposure_prob(high);
    let mut cluster = ClusterState {
        id,
        size,
        activation_day,
        index_high_transmissive: high,
        individuals: vec![IndividualState::default(); size],
        s1_days: 0,
        s2_days: 0,
        s3_tests: 0,
        active: false,
        finished: false,
        local_day: 0,
        daily: Vec::with_capacity(epi.episode_days),
        root_seed,
    };
    for i in 0..size {
        let exposed = StreamKey::new(root_seed, id, i, 0, Channel::Exposure)
            .stream()
            .bernoulli(p_exposure);
        if exposed {
            cluster.infect(i, 0, epi);
        }
    }
    Ok(cluster)
}

impl ClusterState {
    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    /// Incubation and symptom status are keyed by individual only, so an
    /// individual infected later under a different policy reuses the same draws.
    fn infect(&mut self, i: usize, day: Day, epi: &EpiParams) {
        let (mu, sigma) = epi.lognormal_params();
        let z = StreamKey::new(self.root_seed, self.id, i, 0, Channel::Incubation)
            .stream()
            .standard_normal();
        let incubation = (mu + sigma * z).exp();
        let symptomatic = StreamKey::new(self.root_seed, self.id, i, 0, Channel::Symptomatic)
            .stream()
            .bernoulli(epi.p_symptomatic_given_infected);
        let ind = &mut self.individuals[i];
        ind.infected = true;
        ind.infection_day = Some(day);
        ind.symptom_onset_day = Some(day + incubation.round() as Day);
        ind.will_be_symptomatic = symptomatic;
    }

    /// Incubation draw (days) for individual `i`, regardless of infection.
    pub fn incubation_draw(&self, i: usize, epi: &EpiParams) -> f64 {
        let (mu, sigma) = epi.lognormal_params();
        let z = StreamKey::new(self.root_seed, self.id, i, 0, Channel::Incubation)
            .stream()
            .standard_normal();
        (mu + sigma * z).exp()
    }

    pub fn in_decision_phase(&self, epi: &EpiParams) -> bool {
        self.active && self.local_day >= epi.decision_start_day
    }

    /// Advance the cluster by one day under the given per-individual actions.
    pub fn step(&mut self, actions: &[IndividualAction], epi: &EpiParams) -> Result<ClusterStepOutcome> {
        if !self.active {
            return Err(Error::State(format!("cluster {} is not active", self.id)));
        }
        if actions.len() != self.size {
            return Err(Error::Input(format!(
                "cluster {} has {} individuals but {} actions were given",
                self.id,
                self.size,
                actions.len()
            )));
        }
        let day = self.local_day;
        if day < epi.decision_start_day && actions.iter().any(|a| a.test || a.quarantine) {
            return Err(Error::State(format!(
                "cluster {} is not traced yet (local day {day} < {})",
                self.id, epi.decision_start_day
            )));
        }

        let mut delta = ClusterDay::default();
        let mut per_individual = vec![IndividualDayCost::default(); self.size];

        for (i, action) in actions.iter().enumerate() {
            let infectious = self.individuals[i].infectious_on(day, epi);
            let infected = self.individuals[i].infected_on(day);
            let ind = &mut self.individuals[i];

            if action.quarantine && !ind.quarantined {
                ind.quarantine_start_day = Some(day);
            }
            if !action.quarantine {
                ind.quarantine_start_day = None;
            }
            ind.quarantined = action.quarantine;

            ind.tested_history.push(action.test);
            ind.reported_results.push(TestResult::None);
            if action.test {
                let p_pos = if infectious {
                    epi.test_sensitivity
                } else {
                    1.0 - epi.test_specificity
                };
                let positive = StreamKey::new(self.root_seed, self.id, i, day, Channel::TestOutcome)
                    .stream()
                    .bernoulli(p_pos);
                ind.pending_results.push_back(PendingResult {
                    available_day: day + epi.result_delay_days,
                    test_day: day,
                    positive,
                });
                delta.tests += 1;
                delta.s3 += 1;
                per_individual[i].tested = true;
            }

            if infectious && !ind.quarantined {
                delta.s1 += 1;
                per_individual[i].s1 = true;
            }
            if ind.quarantined && !infected {
                delta.s2 += 1;
                per_individual[i].s2 = true;
            }
        }

        for i in 0..self.size {
            let true_symptoms = self.individuals[i].true_symptoms_on(day, epi);
            let observed = true_symptoms
                || StreamKey::new(self.root_seed, self.id, i, day, Channel::FalseSymptom)
                    .stream()
                    .bernoulli(epi.p_false_symptom_per_day);
            self.individuals[i].symptom_observed_history.push(observed);
            if observed {
                delta.symptomatic += 1;
            }
        }

        if epi.onward_transmission && epi.base_transmission_prob > 0.0 {
            let spreaders = self
                .individuals
                .iter()
                .filter(|ind| !ind.quarantined && ind.infectious_on(day, epi))
                .count();
            if spreaders > 0 {
                let p = 1.0 - (1.0 - epi.base_transmission_prob).powi(spreaders as i32);
                for i in 0..self.size {
                    let ind = &self.individuals[i];
                    if ind.infected || ind.quarantined {
                        continue;
                    }
                    let hit = StreamKey::new(self.root_seed, self.id, i, day, Channel::Transmission)
                        .stream()
                        .bernoulli(p);
                    if hit {
                        self.infect(i, day + 1, epi);
                    }
                }
            }
        }

        // Deliver results that become visible for tomorrow's decisions.
        for ind in &mut self.individuals {
            while let Some(front) = ind.pending_results.front() {
                if front.available_day > day + 1 {
                    break;
                }
                let r = ind.pending_results.pop_front().expect("front exists");
                ind.reported_results[r.test_day] = if r.positive {
                    TestResult::Positive
                } else {
                    TestResult::Negative
                };
                if r.positive {
                    delta.positives += 1;
                }
            }
        }

        self.s1_days += delta.s1 as u64;
        self.s2_days += delta.s2 as u64;
        self.s3_tests += delta.s3 as u64;
        self.daily.push(delta);
        self.local_day += 1;
        if self.local_day >= epi.episode_days {
            self.active = false;
            self.finished = true;
        }
        Ok(ClusterStepOutcome {
            local_day: day,
            delta,
            per_individual,
        })
    }

    pub fn infected_count(&self) -> usize {
        self.individuals.iter().filter(|i| i.infected).count()
    }
}
