//! The six comparison policies behind one decision interface.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::allocator::{demand, q_rank_allocate, Allocation, CandidateAction};
use crate::baselines::{heuristic_allocate, symptom_quarantine, HeuristicKind};
use crate::controllers::{bin_search_m, PpoController, DEFAULT_TOL_ITERS};
use crate::env::MultiEnv;
use crate::error::{Error, Result};
use crate::obs::LOCAL_DIM_JOINT;
use crate::params::{ClusterId, CostConfig};
use crate::sim::{IndividualAction, JointAction, SystemStepReport};
use crate::value::QEstimator;

/// Default symptom-free window before the symptom rule releases someone.
pub const SYMPTOM_WINDOW: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    Heuristic { heuristic: HeuristicKind },
    FixedMQr { m: f64 },
    BinMQr { tol_iters: usize },
    HierPpo,
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Heuristic { heuristic } => heuristic.name(),
            PolicyKind::FixedMQr { .. } => "fixed_m_qr",
            PolicyKind::BinMQr { .. } => "bin_m_qr",
            PolicyKind::HierPpo => "hier_ppo",
        }
    }

    pub fn uses_estimator(&self) -> bool {
        !matches!(self, PolicyKind::Heuristic { .. })
    }

    /// All six policies with their default settings.
    pub fn all() -> [PolicyKind; 6] {
        [
            PolicyKind::Heuristic {
                heuristic: HeuristicKind::SympAvgRand,
            },
            PolicyKind::Heuristic {
                heuristic: HeuristicKind::ThresAvgRand,
            },
            PolicyKind::Heuristic {
                heuristic: HeuristicKind::ThresSizeRand,
            },
            PolicyKind::FixedMQr { m: 1.0 },
            PolicyKind::BinMQr {
                tol_iters: DEFAULT_TOL_ITERS,
            },
            PolicyKind::HierPpo,
        ]
    }
}

impl FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed_m_qr" => Ok(PolicyKind::FixedMQr { m: 1.0 }),
            "bin_m_qr" => Ok(PolicyKind::BinMQr {
                tol_iters: DEFAULT_TOL_ITERS,
            }),
            "hier_ppo" => Ok(PolicyKind::HierPpo),
            other => other
                .parse::<HeuristicKind>()
                .map(|heuristic| PolicyKind::Heuristic { heuristic })
                .map_err(|_| Error::param("policy", format!("unknown policy `{other}`"))),
        }
    }
}

/// Per-step manual steering. A multiplier replaces the controller for the step;
/// a budget replaces the configured budget for the step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepOverrides {
    #[serde(default, alias = "m_t", alias = "m")]
    pub multiplier: Option<f64>,
    #[serde(default)]
    pub budget: Option<usize>,
}

/// One policy decision with its instrumentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub joint: JointAction,
    pub multiplier: f64,
    /// Proposed tests before ranking.
    pub demand: usize,
    pub executed: usize,
    pub candidates: usize,
    pub budget: usize,
    /// Controller evaluations: PPO forward passes or search demand evaluations.
    pub controller_evals: usize,
    /// Full passes of the estimator over the population.
    pub scoring_passes: usize,
    pub latency_ns: u64,
}

/// A policy bound to its estimator and controller.
#[derive(Clone, Debug)]
pub struct Policy {
    pub kind: PolicyKind,
    pub estimator: Option<Arc<QEstimator>>,
    pub controller: Option<Arc<PpoController>>,
    pub symptom_window: usize,
}

impl Policy {
    pub fn heuristic(heuristic: HeuristicKind) -> Self {
        Self {
            kind: PolicyKind::Heuristic { heuristic },
            estimator: None,
            controller: None,
            symptom_window: SYMPTOM_WINDOW,
        }
    }

    pub fn new(kind: PolicyKind, estimator: Option<Arc<QEstimator>>, controller: Option<Arc<PpoController>>) -> Result<Self> {
        if kind.uses_estimator() && estimator.is_none() {
            return Err(Error::Config(format!("policy `{}` needs a value estimator", kind.name())));
        }
        if kind == PolicyKind::HierPpo && controller.is_none() {
            return Err(Error::Config("policy `hier_ppo` needs a trained controller".into()));
        }
        if let PolicyKind::BinMQr { tol_iters } = kind {
            if tol_iters == 0 {
                return Err(Error::param("tol_iters", "must be at least 1"));
            }
        }
        Ok(Self {
            kind,
            estimator,
            controller,
            symptom_window: SYMPTOM_WINDOW,
        })
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// Refuse estimators and controllers built for other costs.
    pub fn check_costs(&self, costs: &CostConfig) -> Result<()> {
        if let PolicyKind::FixedMQr { m } = self.kind {
            if !(m >= costs.m_min && m <= costs.m_max) {
                return Err(Error::param("m", format!("{m} outside [{}, {}]", costs.m_min, costs.m_max)));
            }
        }
        if let Some(est) = &self.estimator {
            if est.obs_dim() != LOCAL_DIM_JOINT && (est.alpha2() - costs.alpha2).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "estimator was built for alpha2 = {} but the experiment uses alpha2 = {}",
                    est.alpha2(),
                    costs.alpha2
                )));
            }
        }
        if let Some(c) = &self.controller {
            if c.m_min != costs.m_min || c.m_max != costs.m_max {
                return Err(Error::Config(format!(
                    "controller range [{}, {}] differs from the configured [{}, {}]",
                    c.m_min, c.m_max, costs.m_min, costs.m_max
                )));
            }
        }
        Ok(())
    }

    /// Decide the joint action for the current day of `env`.
    ///
    /// The budget override is read from `overrides`; [`step_policy`] also
    /// applies it to the environment.
    pub fn decide(&self, env: &MultiEnv, overrides: &StepOverrides) -> Result<Decision> {
        let budget = overrides.budget.unwrap_or_else(|| env.budget());
        if let Some(m) = overrides.multiplier {
            if !(m >= env.costs.m_min && m <= env.costs.m_max) {
                return Err(Error::param(
                    "multiplier",
                    format!("{m} outside [{}, {}]", env.costs.m_min, env.costs.m_max),
                ));
            }
        }
        match self.kind {
            PolicyKind::Heuristic { heuristic } => Ok(self.decide_heuristic(env, heuristic, budget)),
            _ => self.decide_ranked(env, overrides.multiplier, budget),
        }
    }

    fn decide_heuristic(&self, env: &MultiEnv, kind: HeuristicKind, budget: usize) -> Decision {
        let start = Instant::now();
        let ids = env.state.deciding_ids();
        let clusters: Vec<_> = ids.iter().map(|&id| &env.state.clusters[id]).collect();
        let picks = heuristic_allocate(kind, &clusters, budget, env.state.root_seed, env.state.day);
        let mut actions = BTreeMap::new();
        let mut executed = 0;
        for (id, tested) in picks {
            let c = &env.state.clusters[id];
            let quarantine = if kind.uses_symptom_quarantine() {
                symptom_quarantine(c, self.symptom_window)
            } else {
                env.threshold_quarantine(id)
            };
            let mut acts: Vec<IndividualAction> = quarantine
                .into_iter()
                .map(|q| IndividualAction {
                    test: false,
                    quarantine: q,
                })
                .collect();
            for i in tested {
                acts[i].test = true;
                executed += 1;
            }
            actions.insert(id, acts);
        }
        let candidates = clusters.iter().map(|c| c.size).sum();
        Decision {
            joint: JointAction {
                actions,
                demand: executed,
                multiplier: 1.0,
            },
            multiplier: 1.0,
            demand: executed,
            executed,
            candidates,
            budget,
            controller_evals: 0,
            scoring_passes: 0,
            latency_ns: start.elapsed().as_nanos() as u64,
        }
    }

    fn decide_ranked(&self, env: &MultiEnv, manual: Option<f64>, budget: usize) -> Result<Decision> {
        let est = self.estimator.as_deref().expect("checked at construction");
        let a3 = env.costs.alpha3_true;
        let inputs = env.decision_inputs(a3, est.obs_dim() == LOCAL_DIM_JOINT);
        let scoring = env.scoring_inputs(&inputs);

        let start = Instant::now();
        let mut scoring_passes = 0;
        let mut controller_evals = 0;
        let mut cached: Option<(f64, Vec<f64>)> = None;
        let m = match (manual, self.kind) {
            (Some(m), _) => m,
            (None, PolicyKind::FixedMQr { m }) => m,
            (None, PolicyKind::BinMQr { tol_iters }) => {
                let r = bin_search_m(
                    |m| {
                        let scores = est.delta_q_batch(&scoring, m * a3);
                        scoring_passes += 1;
                        let d = demand(scores.iter().copied());
                        if d <= budget {
                            cached = Some((m, scores));
                        }
                        d
                    },
                    budget,
                    env.costs.m_min,
                    env.costs.m_max,
                    tol_iters,
                );
                controller_evals = r.evaluations;
                r.m
            }
            (None, PolicyKind::HierPpo) => {
                let ctrl = self.controller.as_deref().expect("checked at construction");
                let g = env.global_obs()?;
                controller_evals = 1;
                ctrl.decide(&g).m
            }
            (None, PolicyKind::Heuristic { .. }) => unreachable!("heuristics are not ranked"),
        };
        let scores = match cached {
            Some((cm, s)) if cm == m => s,
            _ => {
                scoring_passes += 1;
                est.delta_q_batch(&scoring, m * a3)
            }
        };
        let candidates: Vec<CandidateAction> = inputs
            .entries
            .iter()
            .zip(&scores)
            .map(|(&(cluster_id, individual_id), &delta_q)| CandidateAction {
                cluster_id,
                individual_id,
                delta_q,
            })
            .collect();
        let alloc = q_rank_allocate(&candidates, budget)?;
        let joint = ranked_joint(env, &alloc, m);
        let latency_ns = start.elapsed().as_nanos() as u64;
        Ok(Decision {
            multiplier: m,
            demand: alloc.positive,
            executed: alloc.executed(),
            candidates: alloc.candidates,
            budget,
            controller_evals,
            scoring_passes,
            latency_ns,
            joint,
        })
    }
}

/// Joint action of a ranking: selected tests plus threshold quarantine in
/// every traced cluster.
pub fn ranked_joint(env: &MultiEnv, alloc: &Allocation, m: f64) -> JointAction {
    let selected: BTreeSet<(ClusterId, usize)> = alloc.selected.iter().copied().collect();
    let actions = env
        .state
        .deciding_ids()
        .into_iter()
        .map(|id| {
            let acts = env
                .threshold_quarantine(id)
                .into_iter()
                .enumerate()
                .map(|(i, q)| IndividualAction {
                    test: selected.contains(&(id, i)),
                    quarantine: q,
                })
                .collect();
            (id, acts)
        })
        .collect();
    JointAction {
        actions,
        demand: alloc.positive,
        multiplier: m,
    }
}

/// Decide and step once, applying any budget override to this step only.
pub fn step_policy(env: &mut MultiEnv, policy: &Policy, overrides: &StepOverrides) -> Result<(Decision, SystemStepReport)> {
    let nominal = env.state.budget;
    if let Some(b) = overrides.budget {
        env.state.budget = b;
    }
    let out = policy
        .decide(env, overrides)
        .and_then(|d| env.step(&d.joint).map(|r| (d, r)));
    env.state.budget = nominal;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::SimConfig;

    fn env(budget: usize) -> MultiEnv {
        let sim = SimConfig {
            n_clusters: 4,
            budget,
            ..SimConfig::default()
        };
        MultiEnv::new(&sim, &CostConfig::default(), 11).unwrap()
    }

    fn run(policy: &Policy, budget: usize, overrides: StepOverrides) -> Vec<Decision> {
        let mut e = env(budget);
        let mut out = Vec::new();
        while !e.is_done() {
            let (d, r) = step_policy(&mut e, policy, &overrides).unwrap();
            assert!(r.tests <= overrides.budget.unwrap_or(budget));
            out.push(d);
        }
        out
    }

    #[test]
    fn parse_names() {
        for k in PolicyKind::all() {
            let parsed: PolicyKind = k.name().parse().unwrap();
            assert_eq!(parsed.name(), k.name());
        }
        assert!("nope".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn ranked_policies_respect_budget() {
        let est = Arc::new(QEstimator::analytic(0.1));
        for kind in [PolicyKind::FixedMQr { m: 1.0 }, PolicyKind::BinMQr { tol_iters: 30 }] {
            let p = Policy::new(kind, Some(est.clone()), None).unwrap();
            let ds = run(&p, 2, StepOverrides::default());
            assert!(ds.iter().all(|d| d.executed <= 2 && d.controller_evals <= 30));
        }
    }

    #[test]
    fn zero_budget_override_blocks_tests() {
        let est = Arc::new(QEstimator::analytic(0.1));
        let p = Policy::new(PolicyKind::FixedMQr { m: 1.0 }, Some(est), None).unwrap();
        let ds = run(
            &p,
            5,
            StepOverrides {
                multiplier: Some(0.25),
                budget: Some(0),
            },
        );
        assert!(ds.iter().all(|d| d.executed == 0));
    }

    #[test]
    fn bin_search_keeps_demand_within_budget_when_possible() {
        let est = Arc::new(QEstimator::analytic(0.1));
        let p = Policy::new(PolicyKind::BinMQr { tol_iters: 30 }, Some(est), None).unwrap();
        for d in run(&p, 1, StepOverrides::default()) {
            if d.multiplier < 4.0 {
                assert!(d.demand <= 1, "demand {} at m {}", d.demand, d.multiplier);
            }
        }
    }

    #[test]
    fn missing_estimator_rejected() {
        assert!(Policy::new(PolicyKind::BinMQr { tol_iters: 30 }, None, None).is_err());
        assert!(Policy::new(PolicyKind::HierPpo, Some(Arc::new(QEstimator::analytic(0.1))), None).is_err());
    }
}
