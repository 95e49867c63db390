use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::cluster::{spawn_cluster, ClusterState, ClusterStepOutcome, IndividualAction};
use super::schedule::make_schedule;
use crate::error::{Error, Result};
use crate::objective::{cluster_reward, RewardBreakdown};
use crate::params::{ClusterId, Day, EpiParams, SimConfig};
use crate::rng::{Channel, StreamKey};

/// Actions for every active cluster plus the controller signals of this step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JointAction {
    /// Clusters missing from the map take no action.
    pub actions: BTreeMap<ClusterId, Vec<IndividualAction>>,
    /// Unconstrained testing demand proposed before ranking.
    pub demand: usize,
    pub multiplier: f64,
}

impl JointAction {
    pub fn total_tests(&self) -> usize {
        self.actions
            .values()
            .map(|a| a.iter().filter(|x| x.test).count())
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterStepRecord {
    pub cluster: ClusterId,
    pub size: usize,
    pub outcome: ClusterStepOutcome,
    pub reward: RewardBreakdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemStepReport {
    pub day: Day,
    pub tests: usize,
    pub records: Vec<ClusterStepRecord>,
}

/// All clusters of one episode plus the budget and price-signal history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiClusterState {
    pub day: Day,
    pub clusters: Vec<ClusterState>,
    pub activation_schedule: Vec<(ClusterId, Day)>,
    pub budget: usize,
    /// Budget the configuration was created with; the budget may be overridden per step.
    pub budget_nominal: usize,
    pub root_seed: u64,
    pub last_demand: usize,
    pub last_multiplier: f64,
    pub last_shortage: bool,
    pub n_max: usize,
    pub epi: EpiParams,
}

impl MultiClusterState {
    pub fn new(config: &SimConfig, root_seed: u64) -> Result<Self> {
        config.validate()?;
        let schedule = make_schedule(
            config.mode,
            config.n_clusters,
            config.n_max,
            config.stagger_window,
            root_seed,
        )?;
        let mut clusters = Vec::with_capacity(config.n_clusters);
        let mut activation = vec![0; config.n_clusters];
        for &(id, day) in &schedule {
            activation[id] = day;
        }
        for (id, &day) in activation.iter().enumerate() {
            let size = match config.fixed_cluster_size {
                Some(s) => s,
                None => StreamKey::new(root_seed, id, 0, 0, Channel::ClusterSize)
                    .stream()
                    .int_inclusive(config.epi.cluster_size_min, config.epi.cluster_size_max),
            };
            let epi = if size > config.epi.cluster_size_max {
                EpiParams {
                    cluster_size_max: size,
                    ..config.epi.clone()
                }
            } else {
                config.epi.clone()
            };
            clusters.push(spawn_cluster(root_seed, id, day, &epi, size)?);
        }
        let mut state = Self {
            day: 0,
            clusters,
            activation_schedule: schedule,
            budget: config.budget,
            budget_nominal: config.budget,
            root_seed,
            last_demand: 0,
            last_multiplier: 1.0,
            last_shortage: false,
            n_max: config.n_max,
            epi: config.epi.clone(),
        };
        state.activate_due()?;
        Ok(state)
    }

    fn activate_due(&mut self) -> Result<()> {
        let day = self.day;
        for c in &mut self.clusters {
            if c.activation_day == day && !c.active && !c.finished {
                c.active = true;
            }
        }
        let active = self.active_count();
        if active > self.n_max {
            return Err(Error::Capacity(format!(
                "{active} active clusters exceed n_max = {}",
                self.n_max
            )));
        }
        Ok(())
    }

    /// Last global day on which any cluster is still active.
    pub fn horizon(&self) -> Day {
        self.activation_schedule
            .iter()
            .map(|&(_, d)| d + self.epi.episode_days)
            .max()
            .unwrap_or(0)
    }

    pub fn is_done(&self) -> bool {
        self.clusters.iter().all(|c| c.finished)
    }

    pub fn active_ids(&self) -> Vec<ClusterId> {
        self.clusters.iter().filter(|c| c.active).map(|c| c.id).collect()
    }

    pub fn active_count(&self) -> usize {
        self.clusters.iter().filter(|c| c.active).count()
    }

    /// Active clusters in their decision phase (contacts traced).
    pub fn deciding_ids(&self) -> Vec<ClusterId> {
        self.clusters
            .iter()
            .filter(|c| c.in_decision_phase(&self.epi))
            .map(|c| c.id)
            .collect()
    }

    pub fn cluster(&self, id: ClusterId) -> Result<&ClusterState> {
        self.clusters
            .get(id)
            .ok_or_else(|| Error::NotFound(format!("cluster {id}")))
    }

    /// Advance every active cluster by one day.
    ///
    /// Exceeding the budget is a hard invariant failure: nothing is mutated
    /// and [`Error::BudgetViolated`] is returned.
    pub fn step(&mut self, joint: &JointAction, alpha2: f64, alpha3_true: f64) -> Result<SystemStepReport> {
        let tests = joint.total_tests();
        if tests > self.budget {
            return Err(Error::BudgetViolated {
                day: self.day,
                tests,
                budget: self.budget,
            });
        }
        for (id, actions) in &joint.actions {
            let c = self.cluster(*id)?;
            if !c.active {
                return Err(Error::State(format!("cluster {id} is not active on day {}", self.day)));
            }
            if actions.len() != c.size {
                return Err(Error::Input(format!(
                    "cluster {id} has {} individuals but {} actions were given",
                    c.size,
                    actions.len()
                )));
            }
            if !c.in_decision_phase(&self.epi) && actions.iter().any(|a| a.test || a.quarantine) {
                return Err(Error::State(format!("cluster {id} is not traced yet on day {}", self.day)));
            }
        }
        let mut records = Vec::new();
        let epi = self.epi.clone();
        for c in self.clusters.iter_mut().filter(|c| c.active) {
            let idle;
            let actions = match joint.actions.get(&c.id) {
                Some(a) => a.as_slice(),
                None => {
                    idle = vec![IndividualAction::default(); c.size];
                    idle.as_slice()
                }
            };
            let outcome = c.step(actions, &epi)?;
            let d = outcome.delta;
            let reward = cluster_reward(d.s1 as f64, d.s2 as f64, d.s3 as f64, c.size, alpha2, alpha3_true)?;
            records.push(ClusterStepRecord {
                cluster: c.id,
                size: c.size,
                outcome,
                reward,
            });
        }
        let report = SystemStepReport {
            day: self.day,
            tests,
            records,
        };
        self.last_demand = joint.demand;
        self.last_multiplier = joint.multiplier;
        self.last_shortage = joint.demand > self.budget;
        self.day += 1;
        self.activate_due()?;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ActivationMode;

    fn idle() -> JointAction {
        JointAction {
            multiplier: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn no_clusters_advances_day_only() {
        let cfg = SimConfig {
            n_clusters: 0,
            ..SimConfig::default()
        };
        let mut s = MultiClusterState::new(&cfg, 1).unwrap();
        let r = s.step(&idle(), 0.1, 0.05).unwrap();
        assert!(r.records.is_empty());
        assert_eq!(s.day, 1);
    }

    #[test]
    fn synchronous_activates_everything_on_day_zero() {
        let cfg = SimConfig {
            mode: ActivationMode::Synchronous,
            n_clusters: 7,
            ..SimConfig::default()
        };
        let s = MultiClusterState::new(&cfg, 2).unwrap();
        assert_eq!(s.active_count(), 7);
    }

    #[test]
    fn async_active_count_follows_schedule() {
        let cfg = SimConfig {
            n_clusters: 20,
            stagger_window: 19,
            ..SimConfig::default()
        };
        let mut s = MultiClusterState::new(&cfg, 4).unwrap();
        let first_deactivation = s.activation_schedule[0].1 + cfg.epi.episode_days;
        let mut prev = s.active_count();
        while !s.is_done() {
            let expected = s
                .activation_schedule
                .iter()
                .filter(|&&(_, a)| a <= s.day && s.day < a + cfg.epi.episode_days)
                .count();
            assert_eq!(s.active_count(), expected);
            if s.day < first_deactivation {
                assert!(s.active_count() >= prev);
            }
            prev = s.active_count();
            s.step(&idle(), 0.1, 0.05).unwrap();
        }
        assert_eq!(s.day, s.horizon());
    }

    #[test]
    fn over_budget_is_rejected_without_mutation() {
        let cfg = SimConfig {
            mode: ActivationMode::Synchronous,
            n_clusters: 2,
            budget: 1,
            ..SimConfig::default()
        };
        let mut s = MultiClusterState::new(&cfg, 3).unwrap();
        for _ in 0..cfg.epi.decision_start_day {
            s.step(&idle(), 0.1, 0.05).unwrap();
        }
        let before = s.clone();
        let mut joint = idle();
        for c in &s.clusters {
            let mut a = vec![IndividualAction::default(); c.size];
            a[0].test = true;
            joint.actions.insert(c.id, a);
        }
        let err = s.step(&joint, 0.1, 0.05).unwrap_err();
        assert!(err.is_invariant_violation());
        assert_eq!(s, before);
    }
}
