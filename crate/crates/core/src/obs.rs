//! Local (per-individual) and global (controller) observation vectors.

use serde::{Deserialize, Serialize};

use crate::belief::{BeliefRecord, ClusterBeliefs, WINDOW};
use crate::error::{Error, Result};
use crate::params::Day;
use crate::sim::{ClusterState, IndividualState, MultiClusterState, TestResult};

pub const LOCAL_DIM: usize = 16;
/// Local observation with the quarantine weight appended.
pub const LOCAL_DIM_JOINT: usize = 17;
pub const GLOBAL_DIM: usize = 8;
pub const CLUSTER_DIM: usize = 17;
/// Version of the column layouts below; bumped on any change.
pub const OBS_SCHEMA_VERSION: u32 = 1;

/// Index of the active test cost in the local observation.
pub const ALPHA3_SLOT: usize = 15;
pub const ALPHA2_SLOT: usize = 16;

pub const LOCAL_COLUMNS: [&str; LOCAL_DIM_JOINT] = [
    "q_past_3", "q_past_2", "q_past_1", "q_future_1", "q_future_2", "q_future_3", "sym_3", "sym_2", "sym_1",
    "tested_3", "tested_2", "tested_1", "result_3", "result_2", "result_1", "alpha3_active", "alpha2",
];

pub const GLOBAL_COLUMNS: [&str; GLOBAL_DIM] = [
    "time_frac",
    "active_frac",
    "active_individuals_frac",
    "budget_ratio",
    "budget_per_individual",
    "demand_ratio",
    "last_multiplier",
    "shortage",
];

pub const CLUSTER_COLUMNS: [&str; CLUSTER_DIM] = [
    "size_frac",
    "age_frac",
    "tests_3",
    "tests_2",
    "tests_1",
    "symptoms_3",
    "symptoms_2",
    "symptoms_1",
    "positives_3",
    "positives_2",
    "positives_1",
    "cost_feature",
    "q_past_mean",
    "q_past_max",
    "q_future_mean",
    "q_future_max",
    "active",
];

/// Feature range enforced on global observations.
pub const FEATURE_MIN: f64 = -1.0;
pub const FEATURE_MAX: f64 = 4.0;

/// Observation of one individual at decision day `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalObs(pub Vec<f64>);

impl LocalObs {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn alpha3_active(&self) -> f64 {
        self.0[ALPHA3_SLOT]
    }

    pub fn set_alpha3_active(&mut self, a: f64) {
        self.0[ALPHA3_SLOT] = a;
    }

    pub fn with_alpha3(&self, a: f64) -> Self {
        let mut o = self.clone();
        o.set_alpha3_active(a);
        o
    }

    /// Comma-separated text; every value round-trips exactly.
    pub fn to_text(&self) -> String {
        self.0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let values = text
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Input(format!("bad observation entry `{s}`: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != LOCAL_DIM && values.len() != LOCAL_DIM_JOINT {
            return Err(Error::Input(format!(
                "local observation must have {LOCAL_DIM} or {LOCAL_DIM_JOINT} entries, got {}",
                values.len()
            )));
        }
        Ok(Self(values))
    }
}

/// Build the local observation of `ind` at decision day `t`.
///
/// Flags of days before activation are 0 and their result codes are -1.
pub fn build_local(ind: &IndividualState, belief: &BeliefRecord, alpha3_active: f64, t: Day, alpha2: Option<f64>) -> LocalObs {
    let mut v = Vec::with_capacity(LOCAL_DIM_JOINT);
    v.extend_from_slice(&belief.q_past);
    v.extend_from_slice(&belief.q_future);
    let past_days = (1..=WINDOW).rev().map(|back| t.checked_sub(back));
    let flag = |h: &[bool], d: Option<Day>| match d.and_then(|d| h.get(d)) {
        Some(true) => 1.0,
        _ => 0.0,
    };
    for d in past_days.clone() {
        v.push(flag(&ind.symptom_observed_history, d));
    }
    for d in past_days.clone() {
        v.push(flag(&ind.tested_history, d));
    }
    for d in past_days {
        v.push(match d {
            Some(d) => ind.result_for(d).code(),
            None => TestResult::None.code(),
        });
    }
    v.push(alpha3_active);
    if let Some(a2) = alpha2 {
        v.push(a2);
    }
    LocalObs(v)
}

/// Normalization constants of the global observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalObsConfig {
    pub n_max: usize,
    /// Largest cluster size used to normalize sizes and populations.
    pub size_max: usize,
    pub alpha3_true: f64,
}

/// Global controller observation: 8 global entries then `n_max` cluster blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalObs {
    pub values: Vec<f64>,
    pub n_max: usize,
    /// Number of entries that had to be clipped into range.
    pub clipped: usize,
}

impl GlobalObs {
    pub fn global(&self) -> &[f64] {
        &self.values[..GLOBAL_DIM]
    }

    pub fn block(&self, k: usize) -> &[f64] {
        let s = GLOBAL_DIM + k * CLUSTER_DIM;
        &self.values[s..s + CLUSTER_DIM]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn per_capita_history(c: &ClusterState, pick: impl Fn(&crate::sim::ClusterDay) -> u32) -> [f64; WINDOW] {
    let mut out = [-1.0; WINDOW];
    let t = c.local_day;
    for (k, back) in (1..=WINDOW).rev().enumerate() {
        if let Some(d) = t.checked_sub(back) {
            if let Some(day) = c.daily.get(d) {
                out[k] = pick(day) as f64 / c.size as f64;
            }
        }
    }
    out
}

fn cluster_block(c: &ClusterState, beliefs: Option<&ClusterBeliefs>, cfg: &GlobalObsConfig, alpha3_active: f64, episode_days: usize) -> [f64; CLUSTER_DIM] {
    let mut b = [0.0; CLUSTER_DIM];
    let n = c.size as f64;
    b[0] = n / cfg.size_max as f64;
    b[1] = c.local_day as f64 / episode_days as f64;
    b[2..5].copy_from_slice(&per_capita_history(c, |d| d.tests));
    b[5..8].copy_from_slice(&per_capita_history(c, |d| d.symptomatic));
    b[8..11].copy_from_slice(&per_capita_history(c, |d| d.positives));
    let recent_tests: u32 = c.daily.iter().rev().take(WINDOW).map(|d| d.tests).sum();
    b[11] = alpha3_active * recent_tests as f64 / n;
    if let Some(bel) = beliefs {
        let recs = bel.records();
        let (mut ps, mut pm, mut fs, mut fm) = (0.0, 0.0f64, 0.0, 0.0f64);
        for r in recs {
            for &q in &r.q_past {
                ps += q;
                pm = pm.max(q);
            }
            for &q in &r.q_future {
                fs += q;
                fm = fm.max(q);
            }
        }
        let count = (recs.len() * WINDOW).max(1) as f64;
        b[12] = ps / count;
        b[13] = pm;
        b[14] = fs / count;
        b[15] = fm;
    }
    b[16] = 1.0;
    b
}

/// Build the global observation. Active clusters fill the first blocks in
/// ascending id order; the rest are zero.
///
/// `beliefs[id]` holds the tracker of cluster `id` once it is active.
pub fn build_global(state: &MultiClusterState, beliefs: &[Option<ClusterBeliefs>], cfg: &GlobalObsConfig) -> Result<GlobalObs> {
    let active: Vec<&ClusterState> = state.clusters.iter().filter(|c| c.active).collect();
    if active.len() > cfg.n_max {
        return Err(Error::Capacity(format!(
            "{} active clusters exceed n_max = {}",
            active.len(),
            cfg.n_max
        )));
    }
    let mut values = vec![0.0; GLOBAL_DIM + CLUSTER_DIM * cfg.n_max];
    let horizon = state.horizon().max(1) as f64;
    let individuals: usize = active.iter().map(|c| c.size).sum();
    let budget = state.budget as f64;
    values[0] = state.day as f64 / horizon;
    values[1] = active.len() as f64 / cfg.n_max as f64;
    values[2] = individuals as f64 / (cfg.n_max * cfg.size_max) as f64;
    values[3] = if state.budget_nominal > 0 {
        budget / state.budget_nominal as f64
    } else {
        1.0
    };
    values[4] = if individuals > 0 { budget / individuals as f64 } else { 0.0 };
    values[5] = if state.budget > 0 {
        (state.last_demand as f64 / budget).min(FEATURE_MAX)
    } else if state.last_demand > 0 {
        FEATURE_MAX
    } else {
        0.0
    };
    values[6] = state.last_multiplier;
    values[7] = if state.last_shortage { 1.0 } else { 0.0 };

    let alpha3_active = state.last_multiplier * cfg.alpha3_true;
    for (k, c) in active.iter().enumerate() {
        let bel = beliefs.get(c.id).and_then(|b| b.as_ref());
        let block = cluster_block(c, bel, cfg, alpha3_active, state.epi.episode_days);
        let s = GLOBAL_DIM + k * CLUSTER_DIM;
        values[s..s + CLUSTER_DIM].copy_from_slice(&block);
    }

    let mut clipped = 0;
    for (i, v) in values.iter_mut().enumerate() {
        if !(*v >= FEATURE_MIN && *v <= FEATURE_MAX) {
            log::warn!("global observation entry {i} = {v} clipped into [{FEATURE_MIN}, {FEATURE_MAX}]");
            *v = if v.is_nan() { 0.0 } else { v.clamp(FEATURE_MIN, FEATURE_MAX) };
            clipped += 1;
        }
    }
    Ok(GlobalObs {
        values,
        n_max: cfg.n_max,
        clipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::HypothesisSpace;
    use crate::params::{ActivationMode, EpiParams, SimConfig};
    use crate::sim::{spawn_cluster, JointAction};

    #[test]
    fn never_tested_individual_encoding() {
        let epi = EpiParams::desk();
        let mut c = spawn_cluster(1, 0, 0, &epi, 4).unwrap();
        c.active = true;
        for _ in 0..3 {
            c.step(&vec![Default::default(); 4], &epi).unwrap();
        }
        let rec = BeliefRecord::default();
        let o = build_local(&c.individuals[0], &rec, 0.05, 3, None);
        assert_eq!(o.0.len(), LOCAL_DIM);
        assert_eq!(&o.0[9..15], &[0.0, 0.0, 0.0, -1.0, -1.0, -1.0]);
        assert_eq!(o.alpha3_active(), 0.05);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let o = LocalObs(vec![
            0.1 + 0.2,
            1.0 / 3.0,
            f64::MIN_POSITIVE,
            1e-300,
            0.0,
            -1.0,
            1.0,
            0.0,
            0.0,
            1.0,
            0.0,
            1.0,
            -1.0,
            0.0,
            1.0,
            0.049999999999999996,
        ]);
        assert_eq!(LocalObs::parse(&o.to_text()).unwrap(), o);
        assert!(LocalObs::parse("1,2,3").is_err());
    }

    fn cfg() -> GlobalObsConfig {
        GlobalObsConfig {
            n_max: 40,
            size_max: 10,
            alpha3_true: 0.05,
        }
    }

    #[test]
    fn empty_system_global_block() {
        let sim = SimConfig {
            n_clusters: 3,
            stagger_window: 0,
            ..SimConfig::default()
        };
        let mut state = MultiClusterState::new(&sim, 0).unwrap();
        for c in &mut state.clusters {
            c.active = false;
        }
        let g = build_global(&state, &[], &cfg()).unwrap();
        assert_eq!(g.global(), &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(g.values[GLOBAL_DIM..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn demand_ratio_and_shortage() {
        let sim = SimConfig {
            n_clusters: 0,
            budget: 40,
            ..SimConfig::default()
        };
        let mut state = MultiClusterState::new(&sim, 0).unwrap();
        state
            .step(
                &JointAction {
                    demand: 80,
                    multiplier: 1.5,
                    ..Default::default()
                },
                0.1,
                0.05,
            )
            .unwrap();
        let g = build_global(&state, &[], &cfg()).unwrap();
        assert_eq!(g.global()[5], 2.0);
        assert_eq!(g.global()[6], 1.5);
        assert_eq!(g.global()[7], 1.0);
    }

    #[test]
    fn twenty_active_clusters_fill_twenty_blocks() {
        let sim = SimConfig {
            mode: ActivationMode::Synchronous,
            n_clusters: 20,
            ..SimConfig::default()
        };
        let state = MultiClusterState::new(&sim, 5).unwrap();
        let space = HypothesisSpace::shared(&sim.epi);
        let beliefs: Vec<_> = state
            .clusters
            .iter()
            .map(|c| Some(ClusterBeliefs::new(space.clone(), c.size)))
            .collect();
        let g = build_global(&state, &beliefs, &cfg()).unwrap();
        assert_eq!(g.len(), 688);
        assert_eq!((0..40).filter(|&k| g.block(k)[16] == 1.0).count(), 20);
        for k in 20..40 {
            assert!(g.block(k).iter().all(|&v| v == 0.0));
        }
        assert_eq!(g.clipped, 0);
    }
}
