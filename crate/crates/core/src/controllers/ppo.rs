//! Learned global multiplier controller trained with clipped PPO.

use std::path::Path;
use std::sync::{mpsc, Arc};
use std::thread;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::belief::HypothesisSpace;
use crate::env::MultiEnv;
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Adam, Mlp, Trace};
use crate::obs::{GlobalObs, CLUSTER_DIM, GLOBAL_DIM};
use crate::params::{CostConfig, SimConfig};
use crate::policy::{step_policy, Policy, PolicyKind, StepOverrides};
use crate::rng::{hash_words, Channel, StreamKey, StreamRng};
use crate::value::checkpoint::Checkpoint;
use crate::value::QEstimator;

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const ACTIVE_SLOT: usize = CLUSTER_DIM - 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub sim: SimConfig,
    pub costs: CostConfig,
    /// Per-episode budget drawn uniformly from this inclusive range.
    pub budget_range: (usize, usize),
    pub n_envs: usize,
    pub rollout_len: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub kl_stop: f64,
    pub grad_clip: f64,
    pub init_log_std: f64,
    pub encoder_hidden: usize,
    pub trunk_hidden: usize,
    /// Environment steps summed over all workers.
    pub total_steps: u64,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            costs: CostConfig::default(),
            budget_range: (1, 10),
            n_envs: 4,
            rollout_len: 256,
            epochs: 4,
            minibatch: 256,
            gamma: 0.99,
            gae_lambda: 0.9,
            lr: 3e-4,
            weight_decay: 1e-4,
            clip: 0.1,
            value_coef: 0.5,
            entropy_coef: 0.001,
            kl_stop: 0.15,
            grad_clip: 0.5,
            init_log_std: -0.5,
            encoder_hidden: 32,
            trunk_hidden: 64,
            total_steps: 20_480,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.costs.validate()?;
        if self.budget_range.0 > self.budget_range.1 {
            return Err(Error::param("budget_range", "lower bound above upper bound"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::param("gamma", "must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::param("gae_lambda", "must lie in [0, 1]"));
        }
        if !(self.clip > 0.0) {
            return Err(Error::param("clip", "must be positive"));
        }
        if self.n_envs == 0 || self.rollout_len == 0 || self.minibatch == 0 || self.epochs == 0 {
            return Err(Error::param("n_envs", "workers, rollout length, epochs and minibatch must be positive"));
        }
        if !(self.lr > 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::param("lr", "learning rate and gradient clip must be positive"));
        }
        Ok(())
    }

    fn steps_per_iter(&self) -> u64 {
        (self.n_envs * self.rollout_len) as u64
    }
}

/// Set encoder over active cluster blocks, mean-pooled, followed by a trunk
/// emitting the action mean and the state value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoNet {
    pub encoder: Mlp,
    pub trunk: Mlp,
    pub log_std: f64,
}

struct NetCache {
    enc: Option<Trace>,
    n_blocks: usize,
    trunk: Trace,
}

impl PpoNet {
    pub fn new(encoder_hidden: usize, trunk_hidden: usize, init_log_std: f64, rng: &mut StreamRng) -> Self {
        let mut encoder = Mlp::new(
            &[CLUSTER_DIM, encoder_hidden, encoder_hidden],
            vec![1.0; CLUSTER_DIM],
            rng,
        );
        // The encoder feeds the trunk, so its head keeps the full init scale.
        if let Some(last) = encoder.layers.last_mut() {
            last.w *= 10.0;
        }
        let n_in = encoder_hidden + GLOBAL_DIM;
        let trunk = Mlp::new(&[n_in, trunk_hidden, 2], vec![1.0; n_in], rng);
        Self {
            encoder,
            trunk,
            log_std: init_log_std,
        }
    }

    pub fn n_params(&self) -> usize {
        self.encoder.n_params() + self.trunk.n_params() + 1
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut p = self.encoder.params_flat();
        p.extend(self.trunk.params_flat());
        p.push(self.log_std);
        p
    }

    pub fn set_params_flat(&mut self, p: &[f64]) {
        let ne = self.encoder.n_params();
        let nt = self.trunk.n_params();
        self.encoder.set_params_flat(&p[..ne]);
        self.trunk.set_params_flat(&p[ne..ne + nt]);
        self.log_std = p[ne + nt];
    }

    fn active_blocks(obs: &GlobalObs) -> Array2<f64> {
        let rows: Vec<&[f64]> = (0..obs.n_max)
            .map(|k| obs.block(k))
            .filter(|b| b[ACTIVE_SLOT] > 0.5)
            .collect();
        let mut x = Array2::zeros((rows.len(), CLUSTER_DIM));
        for (r, b) in rows.iter().enumerate() {
            x.row_mut(r).assign(&ndarray::ArrayView1::from(*b));
        }
        x
    }

    fn forward_cached(&self, obs: &GlobalObs) -> NetCache {
        let blocks = Self::active_blocks(obs);
        let n_blocks = blocks.nrows();
        let h = self.encoder.n_outputs();
        let mut z = Array2::zeros((1, h + GLOBAL_DIM));
        let enc = if n_blocks > 0 {
            let tr = self.encoder.forward_trace(blocks.view());
            let pooled = tr.out.mean_axis(Axis(0)).expect("non-empty");
            z.slice_mut(ndarray::s![0, ..h]).assign(&pooled);
            Some(tr)
        } else {
            None
        };
        z.slice_mut(ndarray::s![0, h..]).assign(&ndarray::ArrayView1::from(obs.global()));
        let trunk = self.trunk.forward_trace(z.view());
        NetCache {
            enc,
            n_blocks,
            trunk,
        }
    }

    /// Action mean and value.
    pub fn forward(&self, obs: &GlobalObs) -> (f64, f64) {
        let blocks = Self::active_blocks(obs);
        let h = self.encoder.n_outputs();
        let mut z = vec![0.0; h + GLOBAL_DIM];
        if blocks.nrows() > 0 {
            let pooled = self.encoder.forward(blocks.view()).mean_axis(Axis(0)).expect("non-empty");
            z[..h].copy_from_slice(pooled.as_slice().expect("contiguous"));
        }
        z[h..].copy_from_slice(obs.global());
        let out = self.trunk.forward_one(&z);
        (out[0], out[1])
    }

    /// Accumulate the gradient of `g_mu * mu + g_v * v` (log-std excluded).
    fn backward(&self, cache: &NetCache, g_mu: f64, g_v: f64, grads: &mut [f64]) {
        let ne = self.encoder.n_params();
        let nt = self.trunk.n_params();
        let gout = ndarray::array![[g_mu, g_v]];
        let dz = self.trunk.backward(&cache.trunk, &gout, &mut grads[ne..ne + nt]);
        if let Some(tr) = &cache.enc {
            let h = self.encoder.n_outputs();
            let dpool = dz.slice(ndarray::s![0, ..h]).mapv(|v| v / cache.n_blocks as f64);
            let mut gh = Array2::zeros((cache.n_blocks, h));
            for mut row in gh.rows_mut() {
                row.assign(&dpool);
            }
            self.encoder.backward(tr, &gh, &mut grads[..ne]);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.encoder.all_finite() && self.trunk.all_finite() && self.log_std.is_finite()
    }
}

/// One controller output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutput {
    /// Raw Gaussian action.
    pub u: f64,
    pub m: f64,
    pub value: f64,
    pub log_prob: f64,
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

fn gaussian_log_prob(u: f64, mu: f64, log_std: f64) -> f64 {
    let z = (u - mu) / log_std.exp();
    -0.5 * z * z - log_std - 0.5 * LN_2PI
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoController {
    pub net: PpoNet,
    pub m_min: f64,
    pub m_max: f64,
    pub trained_steps: u64,
}

impl PpoController {
    pub fn new(net: PpoNet, m_min: f64, m_max: f64) -> Self {
        Self {
            net,
            m_min,
            m_max,
            trained_steps: 0,
        }
    }

    /// `m_min + sigmoid(u) (m_max - m_min)`.
    pub fn multiplier(&self, u: f64) -> f64 {
        self.m_min + sigmoid(u) * (self.m_max - self.m_min)
    }

    /// Deterministic evaluation: the distribution mean, one forward pass.
    pub fn decide(&self, obs: &GlobalObs) -> PolicyOutput {
        let (mu, value) = self.net.forward(obs);
        PolicyOutput {
            u: mu,
            m: self.multiplier(mu),
            value,
            log_prob: gaussian_log_prob(mu, mu, self.net.log_std),
        }
    }

    pub fn sample(&self, obs: &GlobalObs, rng: &mut StreamRng) -> PolicyOutput {
        let (mu, value) = self.net.forward(obs);
        let u = mu + self.net.log_std.exp() * rng.standard_normal();
        PolicyOutput {
            u,
            m: self.multiplier(u),
            value,
            log_prob: gaussian_log_prob(u, mu, self.net.log_std),
        }
    }

    pub fn to_checkpoint(&self, config: Option<&PpoConfig>) -> Result<Checkpoint> {
        let meta = serde_json::json!({
            "m_min": self.m_min,
            "m_max": self.m_max,
            "trained_steps": self.trained_steps,
            "n_params": self.net.n_params(),
        });
        Checkpoint::new("ppo", meta, config, self, None)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.payload("ppo")
    }

    pub fn save(&self, path: &Path, config: Option<&PpoConfig>) -> Result<()> {
        self.to_checkpoint(config)?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// `-mean(min(r A, clip(r, 1 - eps, 1 + eps) A))`.
pub fn clipped_surrogate(ratios: &[f64], advantages: &[f64], clip: f64) -> f64 {
    assert_eq!(ratios.len(), advantages.len());
    if ratios.is_empty() {
        return 0.0;
    }
    let sum: f64 = ratios
        .iter()
        .zip(advantages)
        .map(|(&r, &a)| (r * a).min(r.clamp(1.0 - clip, 1.0 + clip) * a))
        .sum();
    -sum / ratios.len() as f64
}

/// Generalized advantage estimates and value targets for one worker rollout.
///
/// `dones[t]` marks that step `t` ended an episode; `last_value` bootstraps
/// the final step when it did not.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], last_value: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = last_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Streaming mean and variance (parallel Welford merge).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningMoments {
    pub count: f64,
    pub mean: f64,
    pub m2: f64,
}

impl RunningMoments {
    pub fn update(&mut self, xs: &[f64]) {
        if xs.is_empty() {
            return;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let m2: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
        let total = self.count + n;
        let delta = mean - self.mean;
        self.mean += delta * n / total;
        self.m2 += m2 + delta * delta * self.count * n / total;
        self.count = total;
    }

    pub fn var(&self) -> f64 {
        if self.count > 0.0 {
            self.m2 / self.count
        } else {
            1.0
        }
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / (self.var() + 1e-8).sqrt()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoReport {
    pub iterations: usize,
    pub env_steps: u64,
    pub updates: u64,
    pub episodes: u64,
    /// Iterations cut short by the KL threshold.
    pub early_stops: usize,
    /// Mean undiscounted episode return per iteration.
    pub episode_returns: Vec<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub approx_kl: f64,
    pub log_std: f64,
}

struct Sample {
    obs: GlobalObs,
    u: f64,
    log_prob: f64,
    value: f64,
    reward: f64,
    done: bool,
}

struct Rollout {
    samples: Vec<Sample>,
    last_value: f64,
    finished: Vec<f64>,
}

struct Worker {
    idx: usize,
    episode: u64,
    env: MultiEnv,
    ret: f64,
    rng: StreamRng,
}

fn episode_env(cfg: &PpoConfig, space: &Arc<HypothesisSpace>, idx: usize, episode: u64) -> Result<MultiEnv> {
    let mut brng = StreamKey::new(cfg.seed, idx, 0, episode as usize, Channel::Budget).stream();
    let mut sim = cfg.sim.clone();
    sim.budget = brng.int_inclusive(cfg.budget_range.0, cfg.budget_range.1);
    let root = hash_words(&[cfg.seed, idx as u64, episode, Channel::Episode as u64]);
    MultiEnv::with_space(&sim, &cfg.costs, root, space.clone())
}

impl Worker {
    fn new(cfg: &PpoConfig, space: &Arc<HypothesisSpace>, idx: usize) -> Result<Self> {
        Ok(Self {
            idx,
            episode: 0,
            env: episode_env(cfg, space, idx, 0)?,
            ret: 0.0,
            rng: StreamKey::new(cfg.seed, idx, 0, 0, Channel::PolicySample).stream(),
        })
    }

    fn rollout(&mut self, cfg: &PpoConfig, space: &Arc<HypothesisSpace>, ctrl: &PpoController, executor: &Policy) -> Result<Rollout> {
        let mut samples = Vec::with_capacity(cfg.rollout_len);
        let mut finished = Vec::new();
        for _ in 0..cfg.rollout_len {
            let obs = self.env.global_obs()?;
            let out = ctrl.sample(&obs, &mut self.rng);
            let overrides = StepOverrides {
                multiplier: Some(out.m.clamp(cfg.costs.m_min, cfg.costs.m_max)),
                budget: None,
            };
            let (_, report) = step_policy(&mut self.env, executor, &overrides)?;
            let reward: f64 = report.records.iter().map(|r| r.reward.reward).sum();
            self.ret += reward;
            let done = self.env.is_done();
            samples.push(Sample {
                obs,
                u: out.u,
                log_prob: out.log_prob,
                value: out.value,
                reward,
                done,
            });
            if done {
                finished.push(self.ret);
                self.ret = 0.0;
                self.episode += 1;
                self.env = episode_env(cfg, space, self.idx, self.episode)?;
            }
        }
        let last_value = ctrl.net.forward(&self.env.global_obs()?).1;
        Ok(Rollout {
            samples,
            last_value,
            finished,
        })
    }
}

/// Train the multiplier controller against a fixed value estimator.
///
/// Rollouts run on `n_envs` worker threads that send their trajectories to
/// the learner; batches are assembled in worker order so training is
/// deterministic given the seed.
pub fn ppo_train(cfg: &PpoConfig, estimator: &QEstimator) -> Result<(PpoController, PpoReport)> {
    cfg.validate()?;
    let space = HypothesisSpace::shared(&cfg.sim.epi);
    let executor = Policy::new(PolicyKind::FixedMQr { m: 1.0 }, Some(Arc::new(estimator.clone())), None)?;
    executor.check_costs(&cfg.costs)?;
    let mut init_rng = StreamRng::seeded(cfg.seed, Channel::Init);
    let net = PpoNet::new(cfg.encoder_hidden, cfg.trunk_hidden, cfg.init_log_std, &mut init_rng);
    let mut ctrl = PpoController::new(net, cfg.costs.m_min, cfg.costs.m_max);
    let mut opt = Adam::new(ctrl.net.n_params(), cfg.weight_decay);
    let mut mb_rng = StreamRng::seeded(cfg.seed, Channel::Minibatch);
    let mut workers = (0..cfg.n_envs)
        .map(|i| Worker::new(cfg, &space, i))
        .collect::<Result<Vec<_>>>()?;
    let mut moments = RunningMoments::default();
    let mut report = PpoReport::default();
    let iterations = cfg.total_steps.div_ceil(cfg.steps_per_iter()).max(1) as usize;

    for _ in 0..iterations {
        let snapshot = ctrl.clone();
        let mut rollouts: Vec<Option<Result<Rollout>>> = (0..cfg.n_envs).map(|_| None).collect();
        thread::scope(|s| {
            let (tx, rx) = mpsc::channel();
            for w in workers.iter_mut() {
                let tx = tx.clone();
                let (space, snapshot, executor) = (&space, &snapshot, &executor);
                s.spawn(move || {
                    let r = w.rollout(cfg, space, snapshot, executor);
                    tx.send((w.idx, r)).expect("learner outlives workers");
                });
            }
            drop(tx);
            for (idx, r) in rx {
                rollouts[idx] = Some(r);
            }
        });

        let mut samples = Vec::with_capacity(cfg.steps_per_iter() as usize);
        let mut advantages = Vec::new();
        let mut returns = Vec::new();
        let mut finished = Vec::new();
        for r in rollouts {
            let r = r.expect("every worker reports")?;
            let rewards: Vec<f64> = r.samples.iter().map(|s| s.reward).collect();
            let values: Vec<f64> = r.samples.iter().map(|s| s.value).collect();
            let dones: Vec<bool> = r.samples.iter().map(|s| s.done).collect();
            let (a, ret) = gae(&rewards, &values, &dones, r.last_value, cfg.gamma, cfg.gae_lambda);
            advantages.extend(a);
            returns.extend(ret);
            finished.extend(r.finished);
            samples.extend(r.samples);
        }
        report.env_steps += samples.len() as u64;
        report.episodes += finished.len() as u64;
        if !finished.is_empty() {
            report.episode_returns.push(finished.iter().sum::<f64>() / finished.len() as f64);
        }
        moments.update(&advantages);
        let norm_adv: Vec<f64> = advantages.iter().map(|&a| moments.normalize(a)).collect();

        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut stopped = false;
        'epochs: for _ in 0..cfg.epochs {
            order.shuffle(&mut mb_rng);
            for chunk in order.chunks(cfg.minibatch) {
                let n = chunk.len() as f64;
                let std = ctrl.net.log_std.exp();
                let var = std * std;
                let mut grads = vec![0.0; ctrl.net.n_params()];
                let ls_idx = grads.len() - 1;
                let (mut kl, mut vl) = (0.0, 0.0);
                let mut ratios = Vec::with_capacity(chunk.len());
                let mut advs = Vec::with_capacity(chunk.len());
                let mut caches = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    let s = &samples[i];
                    let cache = ctrl.net.forward_cached(&s.obs);
                    let mu = cache.trunk.out[[0, 0]];
                    let logp = gaussian_log_prob(s.u, mu, ctrl.net.log_std);
                    let r = (logp - s.log_prob).exp();
                    kl += (r - 1.0) - r.ln();
                    ratios.push(r);
                    advs.push(norm_adv[i]);
                    caches.push(cache);
                }
                kl /= n;
                report.approx_kl = kl;
                if kl > cfg.kl_stop {
                    stopped = true;
                    break 'epochs;
                }
                for (j, &i) in chunk.iter().enumerate() {
                    let s = &samples[i];
                    let cache = &caches[j];
                    let (mu, v) = (cache.trunk.out[[0, 0]], cache.trunk.out[[0, 1]]);
                    let (r, a) = (ratios[j], advs[j]);
                    let clipped = (a > 0.0 && r > 1.0 + cfg.clip) || (a < 0.0 && r < 1.0 - cfg.clip);
                    let g_logp = if clipped { 0.0 } else { -r * a / n };
                    let g_mu = g_logp * (s.u - mu) / var;
                    grads[ls_idx] += g_logp * ((s.u - mu) * (s.u - mu) / var - 1.0);
                    let g_v = cfg.value_coef * (v - returns[i]) / n;
                    vl += 0.5 * (v - returns[i]) * (v - returns[i]) / n;
                    ctrl.net.backward(cache, g_mu, g_v, &mut grads);
                }
                let pl = clipped_surrogate(&ratios, &advs, cfg.clip);
                grads[ls_idx] -= cfg.entropy_coef;
                clip_grad_norm(&mut grads, cfg.grad_clip);
                let mut params = ctrl.net.params_flat();
                opt.step_slice(&mut params, &grads, cfg.lr);
                ctrl.net.set_params_flat(&params);
                if !ctrl.net.all_finite() || !pl.is_finite() || !vl.is_finite() {
                    return Err(Error::Divergence(format!(
                        "non-finite PPO update after {} updates (policy loss {pl}, value loss {vl})",
                        report.updates
                    )));
                }
                report.policy_loss = pl;
                report.value_loss = vl;
                report.updates += 1;
            }
        }
        if stopped {
            report.early_stops += 1;
        }
        report.iterations += 1;
    }
    ctrl.trained_steps = report.env_steps;
    report.log_std = ctrl.net.log_std;
    Ok((ctrl, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> PpoConfig {
        PpoConfig {
            sim: SimConfig {
                n_clusters: 3,
                ..SimConfig::default()
            },
            n_envs: 2,
            rollout_len: 32,
            minibatch: 32,
            epochs: 2,
            total_steps: 128,
            seed: 5,
            ..PpoConfig::default()
        }
    }

    #[test]
    fn surrogate_hand_example() {
        let loss = clipped_surrogate(&[0.8, 1.0, 1.3], &[1.0, -1.0, 1.0], 0.1);
        // min(0.8, 0.9) + min(-1, -1) + min(1.3, 1.1) = 0.9
        assert!((loss - (-0.3)).abs() < 1e-12);
    }

    #[test]
    fn multiplier_mapping() {
        let mut rng = StreamRng::seeded(1, Channel::Init);
        let c = PpoController::new(PpoNet::new(8, 8, 0.0, &mut rng), 0.25, 4.0);
        assert_eq!(c.multiplier(0.0), (0.25 + 4.0) / 2.0);
        assert!(c.multiplier(40.0) <= 4.0 && c.multiplier(40.0) > 3.99);
        assert!(c.multiplier(-40.0) >= 0.25);
        assert!(c.multiplier(-700.0).is_finite());
    }

    #[test]
    fn gae_matches_hand_expansion() {
        let (a, r) = gae(&[1.0, 2.0], &[0.5, 0.25], &[false, true], 9.0, 0.9, 0.8);
        let d1 = 2.0 - 0.25;
        let d0 = 1.0 + 0.9 * 0.25 - 0.5;
        assert!((a[1] - d1).abs() < 1e-12);
        assert!((a[0] - (d0 + 0.9 * 0.8 * d1)).abs() < 1e-12);
        assert!((r[0] - (a[0] + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn running_moments_match_batch() {
        let xs: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut m = RunningMoments::default();
        m.update(&xs[..13]);
        m.update(&xs[13..]);
        let mean = xs.iter().sum::<f64>() / 50.0;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 50.0;
        assert!((m.mean - mean).abs() < 1e-12);
        assert!((m.var() - var).abs() < 1e-12);
    }

    #[test]
    fn network_gradient_matches_finite_differences() {
        let cfg = small_cfg();
        let env = MultiEnv::new(&cfg.sim, &cfg.costs, 3).unwrap();
        let obs = env.global_obs().unwrap();
        let mut rng = StreamRng::seeded(2, Channel::Init);
        let mut net = PpoNet::new(6, 7, 0.0, &mut rng);
        let cache = net.forward_cached(&obs);
        let mut g = vec![0.0; net.n_params()];
        net.backward(&cache, 0.7, -1.3, &mut g);
        let p = net.params_flat();
        let f = |n: &PpoNet| {
            let (mu, v) = n.forward(&obs);
            0.7 * mu - 1.3 * v
        };
        let h = 1e-6;
        for i in (0..p.len() - 1).step_by(5) {
            let mut q = p.clone();
            q[i] += h;
            net.set_params_flat(&q);
            let up = f(&net);
            q[i] -= 2.0 * h;
            net.set_params_flat(&q);
            let down = f(&net);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn eval_is_deterministic_and_in_range() {
        let cfg = small_cfg();
        let env = MultiEnv::new(&cfg.sim, &cfg.costs, 3).unwrap();
        let obs = env.global_obs().unwrap();
        let mut rng = StreamRng::seeded(4, Channel::Init);
        let c = PpoController::new(PpoNet::new(8, 8, 0.0, &mut rng), 0.25, 4.0);
        let a = c.decide(&obs);
        assert_eq!(a, c.decide(&obs));
        assert!(a.m > 0.25 && a.m < 4.0);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = small_cfg();
        let est = QEstimator::analytic(0.1);
        let (a, ra) = ppo_train(&cfg, &est).unwrap();
        let (b, rb) = ppo_train(&cfg, &est).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(ra.env_steps, 128);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = StreamRng::seeded(6, Channel::Init);
        let c = PpoController::new(PpoNet::new(8, 8, -0.5, &mut rng), 0.25, 4.0);
        let text = c.to_checkpoint(None).unwrap().to_json().unwrap();
        let back = PpoController::from_checkpoint(&Checkpoint::from_json(&text).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
