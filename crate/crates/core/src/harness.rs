//! Experiment orchestration: episode rollouts, aggregation, persistence,
//! latency benchmarks and the monotonicity sweep.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::HypothesisSpace;
use crate::controllers::PpoController;
use crate::env::MultiEnv;
use crate::error::{Error, Result};
use crate::objective::cluster_reward;
use crate::params::{ActivationMode, CostConfig, Day, SimConfig};
use crate::policy::{Decision, Policy, PolicyKind, StepOverrides};
use crate::rng::{hash_words, Channel};
use crate::value::checkpoint::Checkpoint;
use crate::value::{evaluate_single_cluster, EvalPolicy, QEstimator};

/// Version of the result and dump layouts written by the harness.
pub const RESULTS_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub policy: PolicyKind,
    /// Estimator checkpoint; the analytic scorer when absent.
    pub estimator: Option<PathBuf>,
    /// Controller checkpoint for `hier_ppo`.
    pub controller: Option<PathBuf>,
    pub sim: SimConfig,
    pub costs: CostConfig,
    /// Episodes per seed.
    pub episodes: u64,
    pub seeds: Vec<u64>,
    /// Individual-level trajectory dumps for the first episodes of each seed.
    pub dump_episodes: u64,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            policy: PolicyKind::FixedMQr { m: 1.0 },
            estimator: None,
            controller: None,
            sim: SimConfig::default(),
            costs: CostConfig::default(),
            episodes: 200,
            seeds: vec![0, 1, 2, 3, 4],
            dump_episodes: 1,
            output: None,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.costs.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::param("seeds", "at least one seed is required"));
        }
        if self.episodes == 0 {
            return Err(Error::param("episodes", "must be at least 1"));
        }
        Ok(())
    }

    /// Bind the policy, loading checkpoints and checking them against the costs.
    pub fn load_policy(&self) -> Result<Policy> {
        if let PolicyKind::Heuristic { heuristic } = self.policy {
            return Ok(Policy::heuristic(heuristic));
        }
        let estimator = match &self.estimator {
            Some(p) => Checkpoint::load(p)?.to_estimator()?,
            None => QEstimator::analytic(self.costs.alpha2),
        };
        let controller = match (&self.controller, self.policy) {
            (Some(p), PolicyKind::HierPpo) => Some(Arc::new(PpoController::load(p)?)),
            _ => None,
        };
        let policy = Policy::new(self.policy, Some(Arc::new(estimator)), controller)?;
        policy.check_costs(&self.costs)?;
        Ok(policy)
    }
}

/// Aggregate result of one experiment. Spreads are taken across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub policy: String,
    pub backend: String,
    pub mode: ActivationMode,
    pub n_clusters: usize,
    pub budget: usize,
    pub alpha2: f64,
    pub alpha3_true: f64,
    pub episodes: u64,
    pub seeds: usize,
    pub return_mean: f64,
    /// Sample standard deviation of per-seed means (0 for one seed).
    pub return_std: f64,
    pub s1_mean: f64,
    pub s2_mean: f64,
    pub s3_mean: f64,
    pub tests_per_step: f64,
    pub multiplier_mean: f64,
}

/// Means of one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub return_mean: f64,
    pub s1_mean: f64,
    pub s2_mean: f64,
    pub s3_mean: f64,
    pub tests_per_step: f64,
    pub multiplier_mean: f64,
}

/// Counters and reward of one cluster over one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterEpisodeRecord {
    pub seed: u64,
    pub episode: u64,
    pub cluster: usize,
    pub size: usize,
    pub activation_day: Day,
    pub s1: u64,
    pub s2: u64,
    pub s3: u64,
    pub s1_norm: f64,
    pub s2_norm: f64,
    pub s3_norm: f64,
    /// `-(s1 + alpha2 s2 + alpha3_true s3) / size`.
    pub reward: f64,
}

/// One individual on one day. Field order is the dump column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub day: Day,
    pub cluster: usize,
    pub individual: usize,
    pub local_day: Day,
    pub infected: bool,
    pub infection_day: Option<Day>,
    pub onset_day: Option<Day>,
    pub will_be_symptomatic: bool,
    pub infectious: bool,
    pub q_now: Option<f64>,
    /// Local observation at the applied active cost, on decision days.
    pub obs: Option<Vec<f64>>,
    pub multiplier: f64,
    pub test: bool,
    pub quarantine: bool,
    pub s1: bool,
    pub s2: bool,
    pub tested: bool,
}

/// Streaming decision-latency statistics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub decisions: u64,
    pub sum_ns: f64,
    pub sum_sq_ns: f64,
    pub controller_evals: u64,
    pub controller_evals_max: usize,
    pub scoring_passes: u64,
}

impl LatencyStats {
    pub fn record(&mut self, d: &Decision) {
        let ns = d.latency_ns as f64;
        self.decisions += 1;
        self.sum_ns += ns;
        self.sum_sq_ns += ns * ns;
        self.controller_evals += d.controller_evals as u64;
        self.controller_evals_max = self.controller_evals_max.max(d.controller_evals);
        self.scoring_passes += d.scoring_passes as u64;
    }

    pub fn merge(&mut self, o: &LatencyStats) {
        self.decisions += o.decisions;
        self.sum_ns += o.sum_ns;
        self.sum_sq_ns += o.sum_sq_ns;
        self.controller_evals += o.controller_evals;
        self.controller_evals_max = self.controller_evals_max.max(o.controller_evals_max);
        self.scoring_passes += o.scoring_passes;
    }

    pub fn mean_ns(&self) -> f64 {
        self.sum_ns / self.decisions.max(1) as f64
    }

    pub fn std_ns(&self) -> f64 {
        let n = self.decisions.max(1) as f64;
        let m = self.mean_ns();
        (self.sum_sq_ns / n - m * m).max(0.0).sqrt()
    }

    pub fn controller_evals_mean(&self) -> f64 {
        self.controller_evals as f64 / self.decisions.max(1) as f64
    }
}

/// Outcome of one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub episode: u64,
    pub clusters: Vec<ClusterEpisodeRecord>,
    pub steps: u64,
    pub tests: u64,
    pub max_tests: usize,
    pub multiplier_sum: f64,
    pub decision_steps: u64,
    #[serde(skip)]
    pub latency: LatencyStats,
    #[serde(skip)]
    pub dump: Option<Vec<TrajectoryRecord>>,
}

/// Root seed of episode `episode` under experiment seed `seed`; shared by
/// every policy so comparisons use common random numbers.
pub fn episode_root(seed: u64, episode: u64) -> u64 {
    hash_words(&[seed, episode, Channel::Episode as u64])
}

/// Roll out one episode of `policy`.
pub fn run_episode(
    sim: &SimConfig,
    costs: &CostConfig,
    policy: &Policy,
    space: &Arc<HypothesisSpace>,
    seed: u64,
    episode: u64,
    dump: bool,
) -> Result<EpisodeResult> {
    let mut env = MultiEnv::with_space(sim, costs, episode_root(seed, episode), space.clone())?;
    let mut records = dump.then(Vec::new);
    let mut latency = LatencyStats::default();
    let (mut steps, mut tests, mut max_tests, mut m_sum, mut decision_steps) = (0u64, 0u64, 0usize, 0.0, 0u64);
    while !env.is_done() {
        let d = policy.decide(&env, &StepOverrides::default())?;
        let deciding = !d.joint.actions.is_empty();
        if deciding {
            latency.record(&d);
            m_sum += d.multiplier;
            decision_steps += 1;
        }
        let pre = records.as_ref().map(|_| {
            let inputs = env.decision_inputs(d.multiplier * costs.alpha3_true, false);
            let q: Vec<f64> = inputs.entries.iter().map(|&(c, i)| env.q_now(c, i)).collect();
            (env.state.day, inputs, q)
        });
        let report = env.step(&d.joint)?;
        if report.tests > env.budget() {
            return Err(Error::BudgetViolated {
                day: report.day,
                tests: report.tests,
                budget: env.budget(),
            });
        }
        steps += 1;
        tests += report.tests as u64;
        max_tests = max_tests.max(report.tests);
        if let (Some(out), Some((day, inputs, q))) = (records.as_mut(), pre) {
            for r in &report.records {
                let c = &env.state.clusters[r.cluster];
                let acts = d.joint.actions.get(&r.cluster);
                for (i, cost) in r.outcome.per_individual.iter().enumerate() {
                    let ind = &c.individuals[i];
                    let ld = r.outcome.local_day;
                    let obs_idx = inputs.entries.iter().position(|&e| e == (r.cluster, i));
                    let act = acts.map(|a| a[i]).unwrap_or_default();
                    out.push(TrajectoryRecord {
                        day,
                        cluster: r.cluster,
                        individual: i,
                        local_day: ld,
                        infected: ind.infected_on(ld),
                        infection_day: ind.infection_day,
                        onset_day: ind.symptom_onset_day,
                        will_be_symptomatic: ind.will_be_symptomatic,
                        infectious: ind.infectious_on(ld, &env.state.epi),
                        q_now: obs_idx.map(|k| q[k]),
                        obs: obs_idx.map(|k| inputs.obs[k].0.clone()),
                        multiplier: d.multiplier,
                        test: act.test,
                        quarantine: act.quarantine,
                        s1: cost.s1,
                        s2: cost.s2,
                        tested: cost.tested,
                    });
                }
            }
        }
    }
    let clusters = env
        .state
        .clusters
        .iter()
        .map(|c| {
            let t = env.totals[c.id];
            let rb = cluster_reward(t.s1 as f64, t.s2 as f64, t.s3 as f64, c.size, costs.alpha2, costs.alpha3_true)?;
            Ok(ClusterEpisodeRecord {
                seed,
                episode,
                cluster: c.id,
                size: c.size,
                activation_day: c.activation_day,
                s1: t.s1,
                s2: t.s2,
                s3: t.s3,
                s1_norm: rb.s1_norm,
                s2_norm: rb.s2_norm,
                s3_norm: rb.s3_norm,
                reward: rb.reward,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EpisodeResult {
        seed,
        episode,
        clusters,
        steps,
        tests,
        max_tests,
        multiplier_sum: m_sum,
        decision_steps,
        latency,
        dump: records,
    })
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs.iter().copied());
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Means of one seed from its episodes.
pub fn summarize_seed(seed: u64, episodes: &[EpisodeResult]) -> SeedSummary {
    let cl = || episodes.iter().flat_map(|e| e.clusters.iter());
    let steps: u64 = episodes.iter().map(|e| e.steps).sum();
    let tests: u64 = episodes.iter().map(|e| e.tests).sum();
    let dsteps: u64 = episodes.iter().map(|e| e.decision_steps).sum();
    let msum: f64 = episodes.iter().map(|e| e.multiplier_sum).sum();
    SeedSummary {
        seed,
        return_mean: mean(cl().map(|c| c.reward)),
        s1_mean: mean(cl().map(|c| c.s1_norm)),
        s2_mean: mean(cl().map(|c| c.s2_norm)),
        s3_mean: mean(cl().map(|c| c.s3_norm)),
        tests_per_step: tests as f64 / steps.max(1) as f64,
        multiplier_mean: if dsteps > 0 { msum / dsteps as f64 } else { 1.0 },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub row: ResultRow,
    pub per_seed: Vec<SeedSummary>,
    pub cluster_episodes: Vec<ClusterEpisodeRecord>,
    pub max_tests_per_step: usize,
    #[serde(skip)]
    pub latency: LatencyStats,
    #[serde(skip)]
    pub dumps: Vec<((u64, u64), Vec<TrajectoryRecord>)>,
}

/// Run `spec` with an already bound policy.
pub fn run_with_policy(spec: &ExperimentSpec, policy: &Policy) -> Result<ExperimentOutput> {
    spec.validate()?;
    policy.check_costs(&spec.costs)?;
    let space = HypothesisSpace::shared(&spec.sim.epi);
    let mut per_seed = Vec::with_capacity(spec.seeds.len());
    let mut cluster_episodes = Vec::new();
    let mut latency = LatencyStats::default();
    let mut dumps = Vec::new();
    let mut max_tests = 0;
    for &seed in &spec.seeds {
        let runs: Vec<Result<EpisodeResult>> = (0..spec.episodes)
            .into_par_iter()
            .map(|ep| run_episode(&spec.sim, &spec.costs, policy, &space, seed, ep, ep < spec.dump_episodes))
            .collect();
        let mut eps = runs.into_iter().collect::<Result<Vec<_>>>()?;
        per_seed.push(summarize_seed(seed, &eps));
        for e in &mut eps {
            latency.merge(&e.latency);
            max_tests = max_tests.max(e.max_tests);
            if let Some(d) = e.dump.take() {
                dumps.push(((seed, e.episode), d));
            }
            cluster_episodes.append(&mut e.clusters);
        }
    }
    let col = |f: fn(&SeedSummary) -> f64| per_seed.iter().map(f).collect::<Vec<_>>();
    let returns = col(|s| s.return_mean);
    let row = ResultRow {
        policy: policy.name().into(),
        backend: policy
            .estimator
            .as_ref()
            .map(|e| e.backend_name())
            .unwrap_or("none")
            .into(),
        mode: spec.sim.mode,
        n_clusters: spec.sim.n_clusters,
        budget: spec.sim.budget,
        alpha2: spec.costs.alpha2,
        alpha3_true: spec.costs.alpha3_true,
        episodes: spec.episodes,
        seeds: spec.seeds.len(),
        return_mean: mean(returns.iter().copied()),
        return_std: sample_std(&returns),
        s1_mean: mean(col(|s| s.s1_mean)),
        s2_mean: mean(col(|s| s.s2_mean)),
        s3_mean: mean(col(|s| s.s3_mean)),
        tests_per_step: mean(col(|s| s.tests_per_step)),
        multiplier_mean: mean(col(|s| s.multiplier_mean)),
    };
    Ok(ExperimentOutput {
        row,
        per_seed,
        cluster_episodes,
        max_tests_per_step: max_tests,
        latency,
        dumps,
    })
}

/// Load the policy named by `spec`, run it and write the outputs when
/// `spec.output` is set.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let policy = spec.load_policy()?;
    let out = run_with_policy(spec, &policy)?;
    if let Some(dir) = &spec.output {
        write_outputs(dir, spec, &out)?;
    }
    Ok(out)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.into())
}

/// Write one serializable row per record to a CSV file with a header.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ndjson<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Latency summary written next to the results; kept apart because wall
/// time is not reproducible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub policy: String,
    pub decisions: u64,
    pub mean_ns: f64,
    pub std_ns: f64,
    pub controller_evals_mean: f64,
    pub controller_evals_max: usize,
}

impl LatencyReport {
    pub fn new(policy: &str, s: &LatencyStats) -> Self {
        Self {
            policy: policy.into(),
            decisions: s.decisions,
            mean_ns: s.mean_ns(),
            std_ns: s.std_ns(),
            controller_evals_mean: s.controller_evals_mean(),
            controller_evals_max: s.controller_evals_max,
        }
    }
}

/// Files: `results.csv`, `summary.json`, `cluster_episodes.csv`,
/// `latency.json` and `trajectories/seed_<s>_episode_<e>.ndjson`.
pub fn write_outputs(dir: &Path, spec: &ExperimentSpec, out: &ExperimentOutput) -> Result<()> {
    fs::create_dir_all(dir.join("trajectories"))?;
    write_csv(&dir.join("results.csv"), std::slice::from_ref(&out.row))?;
    write_csv(&dir.join("cluster_episodes.csv"), &out.cluster_episodes)?;
    let summary = serde_json::json!({
        "schema_version": RESULTS_SCHEMA_VERSION,
        "spec": spec,
        "row": out.row,
        "per_seed": out.per_seed,
        "max_tests_per_step": out.max_tests_per_step,
    });
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    let lat = LatencyReport::new(&out.row.policy, &out.latency);
    fs::write(dir.join("latency.json"), serde_json::to_string_pretty(&lat)?)?;
    for ((seed, ep), recs) in &out.dumps {
        write_ndjson(&dir.join(format!("trajectories/seed_{seed}_episode_{ep}.ndjson")), recs)?;
    }
    Ok(())
}

/// Run the same spec under each fixed multiplier.
pub fn fixed_m_ablation(spec: &ExperimentSpec, estimator: Arc<QEstimator>, grid: &[f64]) -> Result<Vec<ResultRow>> {
    grid.iter()
        .map(|&m| {
            let policy = Policy::new(PolicyKind::FixedMQr { m }, Some(estimator.clone()), None)?;
            let s = ExperimentSpec {
                policy: policy.kind,
                ..spec.clone()
            };
            Ok(run_with_policy(&s, &policy)?.row)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyBenchSpec {
    pub n_clusters: Vec<usize>,
    pub cluster_size: usize,
    /// Budgets as multiples of the cluster count.
    pub budget_per_cluster: Vec<usize>,
    pub episodes: u64,
    pub seed: u64,
    pub costs: CostConfig,
    pub sim: SimConfig,
}

impl Default for LatencyBenchSpec {
    fn default() -> Self {
        let mut sim = SimConfig::default();
        sim.epi.cluster_size_max = 20;
        Self {
            n_clusters: vec![10, 20, 40],
            cluster_size: 20,
            budget_per_cluster: vec![2, 10],
            episodes: 2,
            seed: 0,
            costs: CostConfig::default(),
            sim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub n_clusters: usize,
    pub budget: usize,
    pub policy: String,
    pub decisions: u64,
    pub mean_ns: f64,
    pub std_ns: f64,
    pub controller_evals_mean: f64,
    pub controller_evals_max: usize,
}

/// Per-step decision wall time, environment stepping excluded. Episodes run
/// sequentially so timings are not disturbed by other workers.
pub fn bench_latency(spec: &LatencyBenchSpec, policies: &[Policy]) -> Result<Vec<LatencyRow>> {
    let mut rows = Vec::new();
    for &c in &spec.n_clusters {
        let mut sim = spec.sim.clone();
        sim.n_clusters = c;
        sim.n_max = sim.n_max.max(c);
        sim.fixed_cluster_size = Some(spec.cluster_size);
        sim.epi.cluster_size_max = sim.epi.cluster_size_max.max(spec.cluster_size);
        let space = HypothesisSpace::shared(&sim.epi);
        for &k in &spec.budget_per_cluster {
            sim.budget = k * c;
            for p in policies {
                p.check_costs(&spec.costs)?;
            }
            // Episodes are interleaved across policies.
            let mut stats = vec![LatencyStats::default(); policies.len()];
            for ep in 0..spec.episodes {
                for (p, st) in policies.iter().zip(stats.iter_mut()) {
                    let r = run_episode(&sim, &spec.costs, p, &space, spec.seed, ep, false)?;
                    st.merge(&r.latency);
                }
            }
            for (p, stats) in policies.iter().zip(stats) {
                rows.push(LatencyRow {
                    n_clusters: c,
                    budget: sim.budget,
                    policy: p.name().into(),
                    decisions: stats.decisions,
                    mean_ns: stats.mean_ns(),
                    std_ns: stats.std_ns(),
                    controller_evals_mean: stats.controller_evals_mean(),
                    controller_evals_max: stats.controller_evals_max,
                });
            }
        }
    }
    Ok(rows)
}

/// `mean(baseline) / mean(candidate)` for every grid point holding both.
pub fn speedups(rows: &[LatencyRow], baseline: &str, candidate: &str) -> Vec<(usize, usize, f64)> {
    rows.iter()
        .filter(|r| r.policy == baseline)
        .filter_map(|b| {
            rows.iter()
                .find(|r| r.policy == candidate && r.n_clusters == b.n_clusters && r.budget == b.budget)
                .map(|c| (b.n_clusters, b.budget, b.mean_ns / c.mean_ns))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha3: f64,
    /// Inclusive cluster-size range of the bucket.
    pub size_lo: usize,
    pub size_hi: usize,
    pub episodes: usize,
    pub tests_per_step: f64,
}

/// Tests per decision step against the test cost, per cluster-size bucket,
/// on single clusters with an unlimited budget. Every grid point uses the
/// same episodes.
pub fn sweep_monotonicity(
    estimator: &QEstimator,
    epi: &crate::params::EpiParams,
    alpha3_grid: &[f64],
    buckets: &[(usize, usize)],
    episodes: u64,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let space = HypothesisSpace::shared(epi);
    let mut rows = Vec::new();
    for &a3 in alpha3_grid {
        let s = evaluate_single_cluster(EvalPolicy::Greedy(estimator), &space, estimator.alpha2(), a3, episodes, seed)?;
        for &(lo, hi) in buckets {
            let idx: Vec<usize> = (0..s.sizes.len()).filter(|&k| s.sizes[k] >= lo && s.sizes[k] <= hi).collect();
            let tests: u64 = idx.iter().map(|&k| s.tests[k]).sum();
            let steps: u64 = idx.iter().map(|&k| s.steps[k]).sum();
            rows.push(SweepRow {
                alpha3: a3,
                size_lo: lo,
                size_hi: hi,
                episodes: idx.len(),
                tests_per_step: tests as f64 / steps.max(1) as f64,
            });
        }
    }
    Ok(rows)
}

/// Increases along a curve that should not increase: the count and the
/// largest relative rise.
pub fn inversions(curve: &[f64]) -> (usize, f64) {
    let mut count = 0;
    let mut worst = 0.0f64;
    for w in curve.windows(2) {
        if w[1] > w[0] {
            count += 1;
            let rel = if w[0] > 0.0 { (w[1] - w[0]) / w[0] } else { f64::INFINITY };
            worst = worst.max(rel);
        }
    }
    (count, worst)
}
