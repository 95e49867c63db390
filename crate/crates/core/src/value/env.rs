use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{QEstimator, ScoringInput};
use crate::belief::{ClusterBeliefs, HypothesisSpace, QuarantinePolicy};
use crate::error::Result;
use crate::obs::{build_local, LocalObs};
use crate::params::EpiParams;
use crate::rng::{hash_words, Channel, StreamKey, StreamRng};
use crate::sim::{spawn_cluster, ClusterState, IndividualAction};

/// One cluster run on its own with an unlimited budget, used for training
/// and evaluating value estimators. Quarantine follows the threshold rule.
#[derive(Clone, Debug)]
pub struct SingleClusterEnv {
    pub cluster: ClusterState,
    pub beliefs: ClusterBeliefs,
    pub quarantine: QuarantinePolicy,
    pub alpha3: f64,
    /// Append the quarantine weight to observations.
    pub joint_alpha2: bool,
    pub epi: EpiParams,
    /// Undiscounted per-capita return so far.
    pub episode_return: f64,
    pub tests: u64,
    pub decision_steps: u64,
}

impl SingleClusterEnv {
    /// Episode `episode` of the stream rooted at `seed`. The cluster size is
    /// drawn uniformly from the configured range.
    pub fn new(
        space: Arc<HypothesisSpace>,
        seed: u64,
        episode: u64,
        alpha2: f64,
        alpha3: f64,
        joint_alpha2: bool,
    ) -> Result<Self> {
        let epi = space.epi().clone();
        let root = hash_words(&[seed, episode]);
        let size = StreamKey::new(root, 0, 0, 0, Channel::ClusterSize)
            .stream()
            .int_inclusive(epi.cluster_size_min, epi.cluster_size_max);
        let mut cluster = spawn_cluster(root, 0, 0, &epi, size)?;
        cluster.active = true;
        let beliefs = ClusterBeliefs::new(space, size);
        let mut env = Self {
            cluster,
            beliefs,
            quarantine: QuarantinePolicy::new(alpha2)?,
            alpha3,
            joint_alpha2,
            epi,
            episode_return: 0.0,
            tests: 0,
            decision_steps: 0,
        };
        let idle = vec![IndividualAction::default(); size];
        while env.cluster.local_day < env.epi.decision_start_day {
            let out = env.cluster.step(&idle, &env.epi)?;
            env.episode_return -= out.delta.s1 as f64 / size as f64;
            env.beliefs.sync(&env.cluster)?;
        }
        Ok(env)
    }

    pub fn size(&self) -> usize {
        self.cluster.size
    }

    pub fn done(&self) -> bool {
        self.cluster.finished
    }

    pub fn observations(&self) -> Vec<LocalObs> {
        let t = self.cluster.local_day;
        let a2 = self.joint_alpha2.then_some(self.quarantine.alpha2);
        self.cluster
            .individuals
            .iter()
            .enumerate()
            .map(|(i, ind)| build_local(ind, &self.beliefs.record(i), self.alpha3, t, a2))
            .collect()
    }

    pub fn scoring_inputs<'a>(&'a self, obs: &'a [LocalObs]) -> Vec<ScoringInput<'a>> {
        obs.iter()
            .enumerate()
            .map(|(i, o)| ScoringInput {
                obs: o,
                posterior: self.beliefs.posterior(i),
                space: self.beliefs.space(),
                day: self.cluster.local_day,
            })
            .collect()
    }

    /// Apply the test decisions, quarantine by belief, and return the
    /// per-individual rewards of the day.
    pub fn step(&mut self, tests: &[bool]) -> Result<Vec<f64>> {
        let n = self.size();
        let actions: Vec<IndividualAction> = (0..n)
            .map(|i| IndividualAction {
                test: tests[i],
                quarantine: self.quarantine.quarantine(self.beliefs.q_now(i)),
            })
            .collect();
        let out = self.cluster.step(&actions, &self.epi)?;
        self.beliefs.sync(&self.cluster)?;
        let a2 = self.quarantine.alpha2;
        let rewards: Vec<f64> = out
            .per_individual
            .iter()
            .map(|c| -(f64::from(u8::from(c.s1)) + a2 * f64::from(u8::from(c.s2)) + self.alpha3 * f64::from(u8::from(c.tested))))
            .collect();
        self.episode_return += rewards.iter().sum::<f64>() / n as f64;
        self.tests += out.delta.tests as u64;
        self.decision_steps += 1;
        Ok(rewards)
    }
}

/// Testing rule used when evaluating single clusters.
#[derive(Clone, Copy, Debug)]
pub enum EvalPolicy<'a> {
    /// Test whenever `delta_q > 0`.
    Greedy(&'a QEstimator),
    /// Test each individual independently with this probability.
    Random(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub mean_return: f64,
    pub std_return: f64,
    pub tests_per_step: f64,
    pub returns: Vec<f64>,
    pub tests: Vec<u64>,
    pub steps: Vec<u64>,
    pub sizes: Vec<usize>,
}

/// Run `episodes` single-cluster episodes with common random numbers keyed
/// by `(seed, episode)` and test cost `alpha3`.
pub fn evaluate_single_cluster(
    policy: EvalPolicy<'_>,
    space: &Arc<HypothesisSpace>,
    alpha2: f64,
    alpha3: f64,
    episodes: u64,
    seed: u64,
) -> Result<EvalStats> {
    let joint = matches!(policy, EvalPolicy::Greedy(e) if e.obs_dim() > crate::obs::LOCAL_DIM);
    let runs: Vec<Result<(f64, u64, u64, usize)>> = (0..episodes)
        .into_par_iter()
        .map(|ep| {
            let mut env = SingleClusterEnv::new(space.clone(), seed, ep, alpha2, alpha3, joint)?;
            let mut rng = StreamRng::from_key(hash_words(&[seed, ep, Channel::HeuristicSample as u64]));
            while !env.done() {
                let tests: Vec<bool> = match policy {
                    EvalPolicy::Greedy(est) => {
                        let obs = env.observations();
                        let inputs = env.scoring_inputs(&obs);
                        est.delta_q_batch(&inputs, alpha3).iter().map(|&d| d > 0.0).collect()
                    }
                    EvalPolicy::Random(p) => (0..env.size()).map(|_| rng.bernoulli(p)).collect(),
                };
                env.step(&tests)?;
            }
            Ok((env.episode_return, env.tests, env.decision_steps, env.size()))
        })
        .collect();
    let mut returns = Vec::with_capacity(runs.len());
    let mut tests = Vec::with_capacity(runs.len());
    let mut steps = Vec::with_capacity(runs.len());
    let mut sizes = Vec::with_capacity(runs.len());
    for r in runs {
        let (ret, t, s, n) = r?;
        returns.push(ret);
        tests.push(t);
        steps.push(s);
        sizes.push(n);
    }
    let n = returns.len().max(1) as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let total_tests: u64 = tests.iter().sum();
    let total_steps: u64 = steps.iter().sum();
    Ok(EvalStats {
        mean_return: mean,
        std_return: var.sqrt(),
        tests_per_step: total_tests as f64 / total_steps.max(1) as f64,
        returns,
        tests,
        steps,
        sizes,
    })
}
