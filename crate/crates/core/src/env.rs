//! Multi-cluster environment: simulator state plus per-cluster belief trackers.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::belief::{ClusterBeliefs, HypothesisSpace, QuarantinePolicy};
use crate::error::Result;
use crate::obs::{build_global, build_local, GlobalObs, GlobalObsConfig, LocalObs};
use crate::params::{ClusterId, CostConfig, SimConfig};
use crate::sim::{JointAction, MultiClusterState, SystemStepReport};
use crate::value::ScoringInput;

/// Running totals of one cluster over an episode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterTotals {
    pub size: usize,
    pub s1: u64,
    pub s2: u64,
    pub s3: u64,
    pub reward: f64,
}

/// Local observations of every individual in a traced cluster.
#[derive(Clone, Debug)]
pub struct DecisionInputs {
    pub entries: Vec<(ClusterId, usize)>,
    pub obs: Vec<LocalObs>,
}

#[derive(Clone, Debug)]
pub struct MultiEnv {
    pub state: MultiClusterState,
    /// Indexed by cluster id; created when the cluster activates.
    pub beliefs: Vec<Option<ClusterBeliefs>>,
    pub space: Arc<HypothesisSpace>,
    pub costs: CostConfig,
    pub quarantine: QuarantinePolicy,
    pub obs_cfg: GlobalObsConfig,
    pub totals: Vec<ClusterTotals>,
    pub tests_executed: u64,
    pub steps: u64,
}

impl MultiEnv {
    pub fn new(sim: &SimConfig, costs: &CostConfig, root_seed: u64) -> Result<Self> {
        Self::with_space(sim, costs, root_seed, HypothesisSpace::shared(&sim.epi))
    }

    pub fn with_space(sim: &SimConfig, costs: &CostConfig, root_seed: u64, space: Arc<HypothesisSpace>) -> Result<Self> {
        costs.validate()?;
        let state = MultiClusterState::new(sim, root_seed)?;
        let totals = state
            .clusters
            .iter()
            .map(|c| ClusterTotals {
                size: c.size,
                ..Default::default()
            })
            .collect();
        let mut env = Self {
            beliefs: vec![None; state.clusters.len()],
            state,
            space,
            costs: costs.clone(),
            quarantine: QuarantinePolicy::new(costs.alpha2)?,
            obs_cfg: GlobalObsConfig {
                n_max: sim.n_max,
                size_max: sim.max_cluster_size(),
                alpha3_true: costs.alpha3_true,
            },
            totals,
            tests_executed: 0,
            steps: 0,
        };
        env.sync_beliefs()?;
        Ok(env)
    }

    fn sync_beliefs(&mut self) -> Result<()> {
        for c in &self.state.clusters {
            if !c.active && !c.finished {
                continue;
            }
            let slot = &mut self.beliefs[c.id];
            if slot.is_none() {
                *slot = Some(ClusterBeliefs::new(self.space.clone(), c.size));
            }
            if c.active {
                slot.as_mut().expect("just created").sync(c)?;
            }
        }
        Ok(())
    }

    pub fn is_done(&self) -> bool {
        self.state.is_done()
    }

    pub fn budget(&self) -> usize {
        self.state.budget
    }

    pub fn global_obs(&self) -> Result<GlobalObs> {
        build_global(&self.state, &self.beliefs, &self.obs_cfg)
    }

    /// Local observations of every individual in a traced cluster, in
    /// `(cluster, individual)` order, with the active cost set to `alpha3_active`.
    /// With `with_alpha2` the quarantine weight is appended.
    pub fn decision_inputs(&self, alpha3_active: f64, with_alpha2: bool) -> DecisionInputs {
        let alpha2 = with_alpha2.then_some(self.costs.alpha2);
        let mut entries = Vec::new();
        let mut obs = Vec::new();
        for id in self.state.deciding_ids() {
            let c = &self.state.clusters[id];
            let bel = self.beliefs[id].as_ref().expect("active clusters have beliefs");
            for (i, ind) in c.individuals.iter().enumerate() {
                entries.push((id, i));
                obs.push(build_local(ind, &bel.record(i), alpha3_active, c.local_day, alpha2));
            }
        }
        DecisionInputs { entries, obs }
    }

    pub fn scoring_inputs<'a>(&'a self, inputs: &'a DecisionInputs) -> Vec<ScoringInput<'a>> {
        inputs
            .entries
            .iter()
            .zip(&inputs.obs)
            .map(|(&(c, i), o)| {
                let bel = self.beliefs[c].as_ref().expect("active clusters have beliefs");
                ScoringInput {
                    obs: o,
                    posterior: bel.posterior(i),
                    space: &self.space,
                    day: self.state.clusters[c].local_day,
                }
            })
            .collect()
    }

    pub fn q_now(&self, cluster: ClusterId, i: usize) -> f64 {
        self.beliefs[cluster].as_ref().map(|b| b.q_now(i)).unwrap_or(0.0)
    }

    /// Threshold quarantine flags of a traced cluster.
    pub fn threshold_quarantine(&self, cluster: ClusterId) -> Vec<bool> {
        let size = self.state.clusters[cluster].size;
        (0..size).map(|i| self.quarantine.quarantine(self.q_now(cluster, i))).collect()
    }

    /// Step the simulator and absorb the new observations.
    pub fn step(&mut self, joint: &JointAction) -> Result<SystemStepReport> {
        let report = self.state.step(joint, self.costs.alpha2, self.costs.alpha3_true)?;
        for r in &report.records {
            let t = &mut self.totals[r.cluster];
            t.s1 += r.outcome.delta.s1 as u64;
            t.s2 += r.outcome.delta.s2 as u64;
            t.s3 += r.outcome.delta.s3 as u64;
            t.reward += r.reward.reward;
        }
        self.tests_executed += report.tests as u64;
        self.steps += 1;
        self.sync_beliefs()?;
        Ok(report)
    }
}
