//! Interactive simulation sessions: create, step with manual steering, fork,
//! inspect and compare.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controllers::PpoController;
use crate::env::MultiEnv;
use crate::error::{Error, Result};
use crate::params::{CostConfig, SimConfig};
use crate::policy::{step_policy, Policy, PolicyKind, StepOverrides};
use crate::sim::MultiClusterState;
use crate::value::QEstimator;

/// Version of every session payload; sent as a header by the service.
pub const SERVICE_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SESSION_CAP: usize = 16;

/// Who chooses the multiplier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "binding", rename_all = "snake_case")]
pub enum Binding {
    Policy { policy: PolicyKind },
    /// Q-ranking at the last manually chosen multiplier (initially 1).
    Manual,
}

impl Binding {
    pub fn name(&self) -> &'static str {
        match self {
            Binding::Policy { policy } => policy.name(),
            Binding::Manual => "manual",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub costs: CostConfig,
    pub seed: u64,
    pub binding: Binding,
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.costs.validate()
    }

    /// Content hash of the configuration, hex encoded.
    pub fn content_hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex::encode(&Sha256::digest(&bytes)[..8]))
    }
}

/// Per-cluster change over one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterDelta {
    pub cluster: usize,
    pub s1: u32,
    pub s2: u32,
    pub s3: u32,
    /// Per-capita reward of the step under the true test cost.
    pub reward: f64,
}

/// Belief summary of an active cluster after a step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterView {
    pub cluster: usize,
    pub size: usize,
    pub local_day: usize,
    pub mean_q: f64,
    pub max_q: f64,
    pub quarantined: usize,
}

/// One step as logged and pushed to subscribers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDelta {
    pub session: String,
    pub step: usize,
    /// Simulation day that was stepped.
    pub day: usize,
    pub binding: Binding,
    pub overrides: StepOverrides,
    pub multiplier: f64,
    pub budget: usize,
    pub demand: usize,
    pub executed: usize,
    pub controller_evals: usize,
    pub active_clusters: usize,
    pub clusters: Vec<ClusterDelta>,
    pub beliefs: Vec<ClusterView>,
    pub done: bool,
}

/// Running totals of a session.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub session: String,
    pub steps: usize,
    pub day: usize,
    pub s1: u64,
    pub s2: u64,
    pub s3: u64,
    pub tests: u64,
    /// Sum over clusters of per-capita return so far.
    pub total_reward: f64,
    pub multipliers: Vec<f64>,
    pub tests_per_step: Vec<usize>,
    pub done: bool,
}

/// Full snapshot of a session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub session: String,
    pub config: SessionConfig,
    pub binding: Binding,
    pub parent: Option<String>,
    pub steps: usize,
    pub state: MultiClusterState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreateResponse {
    pub session: String,
    /// False when an identical session already existed.
    pub created: bool,
    /// Session dropped to make room, if any.
    pub evicted: Option<String>,
}

/// Step-by-step comparison of two sessions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionDiff {
    pub a: String,
    pub b: String,
    /// Steps the two logs have in common.
    pub compared_steps: usize,
    pub first_divergence: Option<usize>,
    pub steps: Vec<StepDiff>,
    pub return_a: f64,
    pub return_b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiff {
    pub step: usize,
    pub multiplier: (f64, f64),
    pub executed: (usize, usize),
    /// Clusters whose step deltas differ.
    pub clusters: Vec<usize>,
    pub reward: (f64, f64),
}

#[derive(Clone, Debug)]
struct Session {
    id: String,
    config: SessionConfig,
    binding: Binding,
    manual_m: f64,
    parent: Option<String>,
    env: MultiEnv,
    log: Vec<StepDelta>,
    last_used: u64,
}

/// Estimator and controller shared by every session.
#[derive(Clone, Debug)]
pub struct SessionResources {
    pub estimator: Arc<QEstimator>,
    pub controller: Option<Arc<PpoController>>,
}

/// Owns all sessions. Each session has its own lock, so distinct sessions
/// step concurrently.
pub struct SessionManager {
    cap: usize,
    resources: SessionResources,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    clock: Mutex<u64>,
    fork_counter: Mutex<u64>,
}

fn total_reward(log: &[StepDelta]) -> f64 {
    log.iter().flat_map(|d| d.clusters.iter()).map(|c| c.reward).sum()
}

impl SessionManager {
    pub fn new(cap: usize, resources: SessionResources) -> Self {
        Self {
            cap: cap.max(1),
            resources,
            sessions: Mutex::new(HashMap::new()),
            clock: Mutex::new(0),
            fork_counter: Mutex::new(0),
        }
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().expect("session map").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ids(&self) -> Vec<String> {
        let mut v: Vec<String> = self.sessions.lock().expect("session map").keys().cloned().collect();
        v.sort();
        v
    }

    pub fn resources(&self) -> &SessionResources {
        &self.resources
    }

    fn tick(&self) -> u64 {
        let mut c = self.clock.lock().expect("clock");
        *c += 1;
        *c
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.sessions
            .lock()
            .expect("session map")
            .get(id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("session `{id}`")))
    }

    fn policy_for(&self, binding: Binding) -> Result<Policy> {
        let kind = match binding {
            Binding::Policy { policy } => policy,
            Binding::Manual => PolicyKind::FixedMQr { m: 1.0 },
        };
        if let PolicyKind::Heuristic { heuristic } = kind {
            return Ok(Policy::heuristic(heuristic));
        }
        let controller = match kind {
            PolicyKind::HierPpo => Some(
                self.resources
                    .controller
                    .clone()
                    .ok_or_else(|| Error::Config("no PPO controller is loaded".into()))?,
            ),
            _ => None,
        };
        Policy::new(kind, Some(self.resources.estimator.clone()), controller)
    }

    /// Insert, evicting the least recently used session when full.
    fn insert(&self, session: Session) -> Result<Option<String>> {
        let mut map = self.sessions.lock().expect("session map");
        let mut evicted = None;
        if map.len() >= self.cap {
            // Sessions being stepped right now are not eligible.
            let victim = map
                .iter()
                .filter_map(|(id, s)| s.try_lock().ok().map(|s| (s.last_used, id.clone())))
                .min()
                .map(|(_, id)| id)
                .ok_or_else(|| Error::Resource(format!("all {} sessions are busy", self.cap)))?;
            map.remove(&victim);
            log::info!("session `{victim}` evicted to respect the cap of {}", self.cap);
            evicted = Some(victim);
        }
        map.insert(session.id.clone(), Arc::new(Mutex::new(session)));
        Ok(evicted)
    }

    fn fresh(&self, id: String, config: SessionConfig, parent: Option<String>) -> Result<Session> {
        let env = MultiEnv::new(&config.sim, &config.costs, config.seed)?;
        self.policy_for(config.binding)?.check_costs(&config.costs)?;
        Ok(Session {
            id,
            binding: config.binding,
            manual_m: 1.0,
            config,
            parent,
            env,
            log: Vec::new(),
            last_used: self.tick(),
        })
    }

    /// Create a session; identical configurations map to the same id.
    pub fn create(&self, config: SessionConfig) -> Result<CreateResponse> {
        config.validate()?;
        let id = config.content_hash()?;
        if let Ok(s) = self.get(&id) {
            s.lock().expect("session").last_used = self.tick();
            return Ok(CreateResponse {
                session: id,
                created: false,
                evicted: None,
            });
        }
        let session = self.fresh(id.clone(), config, None)?;
        let evicted = self.insert(session)?;
        Ok(CreateResponse {
            session: id,
            created: true,
            evicted,
        })
    }

    /// Deep copy with the same random streams: identical actions on both
    /// branches give identical states.
    pub fn fork(&self, id: &str) -> Result<CreateResponse> {
        let src = self.get(id)?;
        let mut copy = src.lock().expect("session").clone();
        let n = {
            let mut c = self.fork_counter.lock().expect("fork counter");
            *c += 1;
            *c
        };
        let digest = Sha256::digest(format!("{id}/{}/{n}", copy.log.len()).as_bytes());
        copy.id = format!("{}-{}", &id[..id.len().min(16)], hex::encode(&digest[..4]));
        copy.parent = Some(id.to_string());
        copy.last_used = self.tick();
        for d in &mut copy.log {
            d.session = copy.id.clone();
        }
        let new_id = copy.id.clone();
        let evicted = self.insert(copy)?;
        Ok(CreateResponse {
            session: new_id,
            created: true,
            evicted,
        })
    }

    pub fn set_binding(&self, id: &str, binding: Binding) -> Result<()> {
        let s = self.get(id)?;
        let mut s = s.lock().expect("session");
        self.policy_for(binding)?.check_costs(&s.config.costs)?;
        s.binding = binding;
        s.last_used = self.tick();
        Ok(())
    }

    /// Advance one day. A multiplier override replaces the bound controller
    /// for this step; under the manual binding it is remembered.
    pub fn step(&self, id: &str, overrides: StepOverrides) -> Result<StepDelta> {
        let s = self.get(id)?;
        let mut s = s.lock().expect("session");
        s.last_used = self.tick();
        if s.env.is_done() {
            return Err(Error::State(format!("session `{id}` has finished its episode")));
        }
        let mut effective = overrides;
        if s.binding == Binding::Manual {
            if let Some(m) = overrides.multiplier {
                s.manual_m = m;
            }
            effective.multiplier = Some(s.manual_m);
        }
        let policy = self.policy_for(s.binding)?;
        let day = s.env.state.day;
        let (decision, report) = step_policy(&mut s.env, &policy, &effective)?;
        let clusters = report
            .records
            .iter()
            .map(|r| ClusterDelta {
                cluster: r.cluster,
                s1: r.outcome.delta.s1,
                s2: r.outcome.delta.s2,
                s3: r.outcome.delta.s3,
                reward: r.reward.reward,
            })
            .collect();
        let beliefs = s
            .env
            .state
            .active_ids()
            .into_iter()
            .map(|c| {
                let cl = &s.env.state.clusters[c];
                let qs: Vec<f64> = (0..cl.size).map(|i| s.env.q_now(c, i)).collect();
                ClusterView {
                    cluster: c,
                    size: cl.size,
                    local_day: cl.local_day,
                    mean_q: qs.iter().sum::<f64>() / cl.size as f64,
                    max_q: qs.iter().copied().fold(0.0, f64::max),
                    quarantined: cl.individuals.iter().filter(|i| i.quarantined).count(),
                }
            })
            .collect();
        let delta = StepDelta {
            session: s.id.clone(),
            step: s.log.len(),
            day,
            binding: s.binding,
            overrides,
            multiplier: decision.multiplier,
            budget: decision.budget,
            demand: decision.demand,
            executed: report.tests,
            controller_evals: decision.controller_evals,
            active_clusters: s.env.state.active_count(),
            clusters,
            beliefs,
            done: s.env.is_done(),
        };
        s.log.push(delta.clone());
        Ok(delta)
    }

    pub fn state(&self, id: &str) -> Result<SessionSnapshot> {
        let s = self.get(id)?;
        let mut s = s.lock().expect("session");
        s.last_used = self.tick();
        Ok(SessionSnapshot {
            session: s.id.clone(),
            config: s.config.clone(),
            binding: s.binding,
            parent: s.parent.clone(),
            steps: s.log.len(),
            state: s.env.state.clone(),
        })
    }

    pub fn log(&self, id: &str) -> Result<Vec<StepDelta>> {
        let s = self.get(id)?;
        let s = s.lock().expect("session");
        Ok(s.log.clone())
    }

    pub fn metrics(&self, id: &str) -> Result<SessionMetrics> {
        let s = self.get(id)?;
        let mut s = s.lock().expect("session");
        s.last_used = self.tick();
        let mut m = SessionMetrics {
            session: s.id.clone(),
            steps: s.log.len(),
            day: s.env.state.day,
            done: s.env.is_done(),
            total_reward: total_reward(&s.log),
            ..Default::default()
        };
        for d in &s.log {
            m.multipliers.push(d.multiplier);
            m.tests_per_step.push(d.executed);
            m.tests += d.executed as u64;
            for c in &d.clusters {
                m.s1 += c.s1 as u64;
                m.s2 += c.s2 as u64;
                m.s3 += c.s3 as u64;
            }
        }
        Ok(m)
    }

    /// Back to day 0 of the configuration, clearing the log.
    pub fn reset(&self, id: &str) -> Result<()> {
        let s = self.get(id)?;
        let mut s = s.lock().expect("session");
        let fresh = self.fresh(s.id.clone(), s.config.clone(), s.parent.clone())?;
        *s = fresh;
        Ok(())
    }

    pub fn remove(&self, id: &str) -> Result<()> {
        self.sessions
            .lock()
            .expect("session map")
            .remove(id)
            .map(|_| ())
            .ok_or_else(|| Error::NotFound(format!("session `{id}`")))
    }

    /// Compare two sessions step by step over their common prefix.
    pub fn diff(&self, a: &str, b: &str) -> Result<SessionDiff> {
        let (la, lb) = (self.log(a)?, self.log(b)?);
        let (sa, sb) = (self.state(a)?, self.state(b)?);
        let related = sa.config.seed == sb.config.seed && sa.config.sim == sb.config.sim && sa.config.costs == sb.config.costs;
        if !related {
            return Err(Error::Input(format!("sessions `{a}` and `{b}` do not share a configuration")));
        }
        Ok(diff_logs(a, b, &la, &lb))
    }

    /// Rebuild a session from its configuration and log; used to audit
    /// replayability.
    pub fn replay(&self, config: &SessionConfig, log: &[StepDelta]) -> Result<MultiClusterState> {
        let mut env = MultiEnv::new(&config.sim, &config.costs, config.seed)?;
        let mut manual_m = 1.0;
        for d in log {
            let mut eff = d.overrides;
            if d.binding == Binding::Manual {
                if let Some(m) = d.overrides.multiplier {
                    manual_m = m;
                }
                eff.multiplier = Some(manual_m);
            }
            step_policy(&mut env, &self.policy_for(d.binding)?, &eff)?;
        }
        Ok(env.state)
    }
}

/// Step-level differences of two logs over their common prefix.
pub fn diff_logs(a: &str, b: &str, la: &[StepDelta], lb: &[StepDelta]) -> SessionDiff {
    let n = la.len().min(lb.len());
    let mut steps = Vec::new();
    for k in 0..n {
        let (x, y) = (&la[k], &lb[k]);
        let clusters: Vec<usize> = x
            .clusters
            .iter()
            .zip(&y.clusters)
            .filter(|(p, q)| p != q)
            .map(|(p, _)| p.cluster)
            .collect();
        let rx: f64 = x.clusters.iter().map(|c| c.reward).sum();
        let ry: f64 = y.clusters.iter().map(|c| c.reward).sum();
        let same = x.multiplier == y.multiplier && x.executed == y.executed && clusters.is_empty() && x.clusters.len() == y.clusters.len();
        if !same {
            steps.push(StepDiff {
                step: k,
                multiplier: (x.multiplier, y.multiplier),
                executed: (x.executed, y.executed),
                clusters,
                reward: (rx, ry),
            });
        }
    }
    SessionDiff {
        a: a.into(),
        b: b.into(),
        compared_steps: n,
        first_divergence: steps.first().map(|d| d.step),
        steps,
        return_a: total_reward(&la[..n]),
        return_b: total_reward(&lb[..n]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manager(cap: usize) -> SessionManager {
        SessionManager::new(
            cap,
            SessionResources {
                estimator: Arc::new(QEstimator::analytic(0.1)),
                controller: None,
            },
        )
    }

    fn config(seed: u64) -> SessionConfig {
        SessionConfig {
            sim: SimConfig {
                n_clusters: 3,
                budget: 3,
                ..SimConfig::default()
            },
            costs: CostConfig::default(),
            seed,
            binding: Binding::Manual,
        }
    }

    #[test]
    fn create_is_idempotent() {
        let m = manager(4);
        let a = m.create(config(1)).unwrap();
        let b = m.create(config(1)).unwrap();
        assert_eq!(a.session, b.session);
        assert!(a.created && !b.created);
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn invalid_alpha2_names_field() {
        let m = manager(4);
        let mut c = config(1);
        c.costs.alpha2 = -0.1;
        match m.create(c) {
            Err(Error::Param { field, .. }) => assert_eq!(field, "alpha2"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fork_then_same_steps_stay_identical() {
        let m = manager(4);
        let id = m.create(config(2)).unwrap().session;
        for _ in 0..5 {
            m.step(&id, StepOverrides::default()).unwrap();
        }
        let f = m.fork(&id).unwrap().session;
        for _ in 0..10 {
            m.step(&id, StepOverrides::default()).unwrap();
            m.step(&f, StepOverrides::default()).unwrap();
        }
        assert_eq!(m.state(&id).unwrap().state, m.state(&f).unwrap().state);
        assert!(m.diff(&id, &f).unwrap().steps.is_empty());
    }

    #[test]
    fn divergence_starts_at_the_override() {
        let m = manager(4);
        let id = m.create(config(3)).unwrap().session;
        for _ in 0..4 {
            m.step(&id, StepOverrides::default()).unwrap();
        }
        let f = m.fork(&id).unwrap().session;
        let mut first = true;
        while !m.state(&id).unwrap().state.is_done() {
            let o = StepOverrides {
                multiplier: Some(if first { 0.25 } else { 1.0 }),
                budget: None,
            };
            first = false;
            m.step(&id, StepOverrides::default()).unwrap();
            m.step(&f, o).unwrap();
        }
        let d = m.diff(&id, &f).unwrap();
        if let Some(k) = d.first_divergence {
            assert!(k >= 4);
        }
    }

    #[test]
    fn zero_budget_override() {
        let m = manager(4);
        let id = m.create(config(4)).unwrap().session;
        for _ in 0..10 {
            let d = m
                .step(
                    &id,
                    StepOverrides {
                        multiplier: Some(0.25),
                        budget: Some(0),
                    },
                )
                .unwrap();
            assert_eq!(d.executed, 0);
        }
    }

    #[test]
    fn lru_eviction_reports_victim() {
        let m = manager(2);
        let a = m.create(config(1)).unwrap().session;
        let b = m.create(config(2)).unwrap().session;
        m.step(&a, StepOverrides::default()).unwrap();
        let c = m.create(config(3)).unwrap();
        assert_eq!(c.evicted.as_deref(), Some(b.as_str()));
        assert!(matches!(m.step(&b, StepOverrides::default()), Err(Error::NotFound(_))));
        let mut last = c.session;
        for _ in 0..5 {
            last = m.fork(&last).unwrap().session;
            assert!(m.len() <= 2);
        }
    }

    #[test]
    fn replay_reconstructs_state() {
        let m = manager(4);
        let id = m.create(config(5)).unwrap().session;
        for k in 0..12 {
            let o = StepOverrides {
                multiplier: (k % 3 == 0).then_some(0.5 + k as f64 * 0.1),
                budget: (k % 4 == 1).then_some(1),
            };
            m.step(&id, o).unwrap();
        }
        m.set_binding(
            &id,
            Binding::Policy {
                policy: PolicyKind::BinMQr { tol_iters: 30 },
            },
        )
        .unwrap();
        for _ in 0..5 {
            m.step(&id, StepOverrides::default()).unwrap();
        }
        let snap = m.state(&id).unwrap();
        let replayed = m.replay(&snap.config, &m.log(&id).unwrap()).unwrap();
        assert_eq!(replayed, snap.state);
    }

    #[test]
    fn unknown_session() {
        let m = manager(2);
        assert!(matches!(m.step("nope", StepOverrides::default()), Err(Error::NotFound(_))));
        assert!(matches!(m.fork("nope"), Err(Error::NotFound(_))));
    }
}
