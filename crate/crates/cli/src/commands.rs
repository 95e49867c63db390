use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use outbreak_core::controllers::{ppo_train, PpoConfig, PpoController};
use outbreak_core::harness::{
    bench_latency, inversions, run_experiment, speedups, sweep_monotonicity, write_csv, ExperimentSpec, LatencyBenchSpec,
};
use outbreak_core::params::{ActivationMode, ConfigDocument};
use outbreak_core::policy::{Policy, PolicyKind};
use outbreak_core::session::{SessionManager, SessionResources};
use outbreak_core::value::checkpoint::Checkpoint;
use outbreak_core::value::{td_train, QEstimator, TrainConfig};

use crate::server::{self, AppState};

/// Directory that relative output paths are resolved against.
pub const OUTPUT_ROOT_VAR: &str = "OUTBREAK_OUTPUT_ROOT";

#[derive(Parser, Debug)]
#[command(name = "outbreak", version, about = "Budget-constrained test allocation across outbreak clusters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Evaluate one policy and write results, summaries and trajectory dumps.
    Run(RunArgs),
    /// Train the cost-conditioned value estimator.
    TrainQ(TrainQArgs),
    /// Train the multiplier controller.
    TrainPpo(TrainPpoArgs),
    /// Decision latency of the searched and learned multipliers.
    Bench(BenchArgs),
    /// Tests per step against the test cost, by cluster size.
    Sweep(SweepArgs),
    /// Serve interactive sessions over HTTP.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Experiment spec (TOML or JSON); flags below override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Config document with the epidemic, system and cost settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub policy: Option<String>,
    /// Multiplier for `fixed_m_qr`.
    #[arg(long)]
    pub m: Option<f64>,
    /// Demand evaluations for `bin_m_qr`.
    #[arg(long)]
    pub tol_iters: Option<usize>,
    #[arg(long)]
    pub estimator: Option<PathBuf>,
    #[arg(long)]
    pub controller: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<ActivationMode>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub alpha2: Option<f64>,
    #[arg(long)]
    pub alpha3: Option<f64>,
    #[arg(long)]
    pub episodes: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub dump_episodes: Option<u64>,
    /// Output directory, relative to the output root.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainQArgs {
    /// Training config (TOML or JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha2: Option<f64>,
    /// Condition on the quarantine weight too, sampled from this range.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub alpha2_range: Option<Vec<f64>>,
    /// Checkpoint path, relative to the output root.
    #[arg(long, default_value = "estimator.json")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainPpoArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Value estimator the controller prices; analytic when absent.
    #[arg(long)]
    pub estimator: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long, default_value = "controller.json")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub estimator: Option<PathBuf>,
    /// Controller checkpoint; without it only the search is timed.
    #[arg(long)]
    pub controller: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [10usize, 20, 40])]
    pub clusters: Vec<usize>,
    /// Budgets as multiples of the cluster count.
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 10])]
    pub budget_per_cluster: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub cluster_size: usize,
    #[arg(long, default_value_t = 2)]
    pub episodes: u64,
    #[arg(long)]
    pub mode: Option<ActivationMode>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "bench")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub estimator: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub alpha2: f64,
    /// Test costs to evaluate.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.01, 0.02, 0.03, 0.05, 0.075, 0.1])]
    pub grid: Vec<f64>,
    /// Inclusive cluster-size buckets such as `2-4`.
    #[arg(long, value_delimiter = ',', default_values_t = ["2-4".to_string(), "5-7".to_string(), "8-10".to_string()])]
    pub buckets: Vec<String>,
    #[arg(long, default_value_t = 200)]
    pub episodes: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "sweep")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub addr: String,
    #[arg(long, default_value_t = outbreak_core::session::DEFAULT_SESSION_CAP)]
    pub cap: usize,
    #[arg(long)]
    pub estimator: Option<PathBuf>,
    #[arg(long)]
    pub controller: Option<PathBuf>,
    /// Quarantine weight of the analytic estimator.
    #[arg(long, default_value_t = 0.1)]
    pub alpha2: f64,
}

/// Exit code for a broken hard invariant, distinct from ordinary failures.
pub const EXIT_INVARIANT: u8 = 3;

pub fn exit_code(e: &anyhow::Error) -> u8 {
    let invariant = e
        .chain()
        .filter_map(|c| c.downcast_ref::<outbreak_core::Error>())
        .any(|c| c.is_invariant_violation());
    if invariant {
        EXIT_INVARIANT
    } else {
        1
    }
}

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("outputs"))
}

pub fn resolve_output(p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        output_root().join(p)
    }
}

/// Read a TOML or JSON document, chosen by extension.
pub fn load_doc<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text).map_err(anyhow::Error::from),
        _ => toml::from_str(&text).map_err(anyhow::Error::from),
    };
    parsed.with_context(|| format!("parsing {}", path.display()))
}

fn load_estimator(path: Option<&Path>, alpha2: f64) -> Result<QEstimator> {
    match path {
        Some(p) => Ok(Checkpoint::load(p)?.to_estimator()?),
        None => Ok(QEstimator::analytic(alpha2)),
    }
}

fn parse_bucket(s: &str) -> Result<(usize, usize)> {
    let (lo, hi) = s.split_once('-').with_context(|| format!("bucket `{s}` is not `lo-hi`"))?;
    Ok((lo.trim().parse()?, hi.trim().parse()?))
}

pub fn build_spec(a: &RunArgs) -> Result<ExperimentSpec> {
    let mut spec: ExperimentSpec = match &a.spec {
        Some(p) => load_doc(p)?,
        None => ExperimentSpec::default(),
    };
    if let Some(p) = &a.config {
        let doc = ConfigDocument::from_toml(&fs::read_to_string(p)?)?;
        spec.sim = doc.sim;
        spec.costs = doc.costs;
        if !doc.seeds.is_empty() {
            spec.seeds = doc.seeds;
        }
    }
    if let Some(name) = &a.policy {
        spec.policy = name.parse()?;
    }
    match (&mut spec.policy, a.m, a.tol_iters) {
        (PolicyKind::FixedMQr { m }, Some(v), _) => *m = v,
        (PolicyKind::BinMQr { tol_iters }, _, Some(v)) => *tol_iters = v,
        (_, None, None) => {}
        _ => bail!("--m applies to fixed_m_qr and --tol-iters to bin_m_qr"),
    }
    if a.estimator.is_some() {
        spec.estimator = a.estimator.clone();
    }
    if a.controller.is_some() {
        spec.controller = a.controller.clone();
    }
    if let Some(v) = a.mode {
        spec.sim.mode = v;
    }
    if let Some(v) = a.clusters {
        spec.sim.n_clusters = v;
        spec.sim.n_max = spec.sim.n_max.max(v);
    }
    if let Some(v) = a.budget {
        spec.sim.budget = v;
    }
    if let Some(v) = a.alpha2 {
        spec.costs.alpha2 = v;
    }
    if let Some(v) = a.alpha3 {
        spec.costs.alpha3_true = v;
    }
    if let Some(v) = a.episodes {
        spec.episodes = v;
    }
    if let Some(v) = &a.seeds {
        spec.seeds = v.clone();
    }
    if let Some(v) = a.dump_episodes {
        spec.dump_episodes = v;
    }
    if let Some(v) = &a.out {
        spec.output = Some(v.clone());
    }
    if let Some(o) = &spec.output {
        spec.output = Some(resolve_output(o));
    }
    spec.validate()?;
    Ok(spec)
}

pub fn run(a: &RunArgs) -> Result<()> {
    let mut spec = build_spec(a)?;
    if spec.output.is_none() {
        spec.output = Some(resolve_output(Path::new(&format!("run_{}", spec.policy.name()))));
    }
    let out = run_experiment(&spec)?;
    let r = &out.row;
    println!(
        "{} ({}): return {:.4} +- {:.4} | s1 {:.3} s2 {:.3} s3 {:.3} | tests/step {:.3} | m {:.3}",
        r.policy, r.backend, r.return_mean, r.return_std, r.s1_mean, r.s2_mean, r.s3_mean, r.tests_per_step, r.multiplier_mean
    );
    println!("wrote {}", spec.output.as_ref().expect("set above").display());
    Ok(())
}

pub fn train_q(a: &TrainQArgs) -> Result<()> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => load_doc(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.steps {
        cfg.total_steps = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.alpha2 {
        cfg.alpha2 = v;
    }
    if let Some(r) = &a.alpha2_range {
        cfg.alpha2_range = Some((r[0], r[1]));
    }
    let (net, report) = td_train(&cfg)?;
    let path = resolve_output(&a.out);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Checkpoint::for_estimator(&QEstimator::Learned(net), Some(&cfg))?.save(&path)?;
    fs::write(path.with_extension("report.json"), serde_json::to_string_pretty(&report)?)?;
    println!(
        "trained {} steps, {} updates; final td loss {:.5}",
        report.steps,
        report.updates,
        report.td_loss.last().copied().unwrap_or(f64::NAN)
    );
    println!("wrote {}", path.display());
    Ok(())
}

pub fn train_ppo(a: &TrainPpoArgs) -> Result<()> {
    let mut cfg: PpoConfig = match &a.config {
        Some(p) => load_doc(p)?,
        None => PpoConfig::default(),
    };
    if let Some(v) = a.steps {
        cfg.total_steps = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.clusters {
        cfg.sim.n_clusters = v;
        cfg.sim.n_max = cfg.sim.n_max.max(v);
    }
    let est = load_estimator(a.estimator.as_deref(), cfg.costs.alpha2)?;
    let (ctrl, report) = ppo_train(&cfg, &est)?;
    let path = resolve_output(&a.out);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    ctrl.save(&path, Some(&cfg))?;
    fs::write(path.with_extension("report.json"), serde_json::to_string_pretty(&report)?)?;
    println!(
        "trained {} steps in {} iterations ({} early stops); final log std {:.3}",
        report.env_steps, report.iterations, report.early_stops, report.log_std
    );
    println!("wrote {}", path.display());
    Ok(())
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let mut spec = LatencyBenchSpec {
        n_clusters: a.clusters.clone(),
        budget_per_cluster: a.budget_per_cluster.clone(),
        cluster_size: a.cluster_size,
        episodes: a.episodes,
        seed: a.seed,
        ..LatencyBenchSpec::default()
    };
    if let Some(m) = a.mode {
        spec.sim.mode = m;
    }
    let est = Arc::new(load_estimator(a.estimator.as_deref(), spec.costs.alpha2)?);
    let mut policies = vec![Policy::new(PolicyKind::BinMQr { tol_iters: 30 }, Some(est.clone()), None)?];
    if let Some(p) = &a.controller {
        let ctrl = Arc::new(PpoController::load(p)?);
        policies.push(Policy::new(PolicyKind::HierPpo, Some(est), Some(ctrl))?);
    }
    let rows = bench_latency(&spec, &policies)?;
    let dir = resolve_output(&a.out);
    fs::create_dir_all(&dir)?;
    write_csv(&dir.join("latency.csv"), &rows)?;
    for r in &rows {
        println!(
            "C={:>3} B={:>4} {:<9} {:>10.0} ns +- {:>9.0} | evals mean {:.2} max {}",
            r.n_clusters, r.budget, r.policy, r.mean_ns, r.std_ns, r.controller_evals_mean, r.controller_evals_max
        );
    }
    for (c, b, s) in speedups(&rows, "bin_m_qr", "hier_ppo") {
        println!("speedup C={c} B={b}: {s:.2}x");
    }
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let est = load_estimator(a.estimator.as_deref(), a.alpha2)?;
    let buckets = a.buckets.iter().map(|b| parse_bucket(b)).collect::<Result<Vec<_>>>()?;
    let epi = outbreak_core::params::EpiParams::desk();
    let rows = sweep_monotonicity(&est, &epi, &a.grid, &buckets, a.episodes, a.seed)?;
    let dir = resolve_output(&a.out);
    fs::create_dir_all(&dir)?;
    write_csv(&dir.join("sweep.csv"), &rows)?;
    for &(lo, hi) in &buckets {
        let curve: Vec<f64> = rows.iter().filter(|r| r.size_lo == lo && r.size_hi == hi).map(|r| r.tests_per_step).collect();
        let (n, worst) = inversions(&curve);
        println!("sizes {lo}-{hi}: {curve:.3?} | {n} inversions, worst {worst:.3}");
    }
    println!("wrote {}", dir.display());
    Ok(())
}

pub async fn serve(a: &ServeArgs) -> Result<()> {
    let estimator = Arc::new(load_estimator(a.estimator.as_deref(), a.alpha2)?);
    let controller = match &a.controller {
        Some(p) => Some(Arc::new(PpoController::load(p)?)),
        None => None,
    };
    let manager = SessionManager::new(a.cap, SessionResources { estimator, controller });
    server::serve(&a.addr, AppState::new(manager)).await
}
