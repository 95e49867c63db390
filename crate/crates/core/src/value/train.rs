use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::env::SingleClusterEnv;
use super::learned::{EstimatorMeta, LearnedQ};
use super::replay::{ReplayBuffer, Transition};
use crate::belief::HypothesisSpace;
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, cosine_lr, Adam};
use crate::obs::{ALPHA3_SLOT, LOCAL_DIM, LOCAL_DIM_JOINT};
use crate::params::EpiParams;
use crate::rng::{Channel, StreamRng};

/// Desk-scale TD training settings for the learned estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning-rate warmup, in gradient updates.
    pub warmup_updates: u64,
    /// Final learning rate as a fraction of `lr`.
    pub lr_floor: f64,
    pub grad_clip: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of `total_steps` over which epsilon is annealed.
    pub eps_fraction: f64,
    /// Target network refresh period, in environment steps.
    pub target_update: u64,
    pub lambda_gp: f64,
    pub g_target: f64,
    /// Finite-difference step for the penalty's parameter gradient.
    pub gp_fd_step: f64,
    pub alpha3_range: (f64, f64),
    pub alpha2: f64,
    /// Sample the quarantine weight per episode and append it to the observation.
    pub alpha2_range: Option<(f64, f64)>,
    pub gamma: f64,
    /// Environment steps (cluster decision days).
    pub total_steps: u64,
    pub train_every: u64,
    pub learning_starts: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
    pub epi: EpiParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            replay_capacity: 100_000,
            batch_size: 64,
            lr: 5e-4,
            warmup_updates: 1_000,
            lr_floor: 0.1,
            grad_clip: 1.0,
            eps_start: 1.0,
            eps_end: 0.1,
            eps_fraction: 0.3,
            target_update: 2_000,
            lambda_gp: 1.0,
            g_target: -1.0,
            gp_fd_step: 1e-4,
            alpha3_range: (0.0, 0.1),
            alpha2: 0.1,
            alpha2_range: None,
            gamma: 0.99,
            total_steps: 200_000,
            train_every: 4,
            learning_starts: 1_000,
            hidden: vec![64, 64],
            seed: 0,
            epi: EpiParams::desk(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.epi.validate()?;
        if !(self.g_target < 0.0) {
            return Err(Error::param("g_target", "must be negative"));
        }
        if !(self.eps_end <= self.eps_start) {
            return Err(Error::param("eps_end", "must not exceed eps_start"));
        }
        if self.replay_capacity < self.batch_size {
            return Err(Error::param("replay_capacity", "must be at least batch_size"));
        }
        if self.batch_size == 0 || self.train_every == 0 || self.target_update == 0 {
            return Err(Error::param("batch_size", "batch size and periods must be positive"));
        }
        let (lo, hi) = self.alpha3_range;
        if !(lo >= 0.0 && lo <= hi) {
            return Err(Error::param("alpha3_range", "need 0 <= lo <= hi"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::param("gamma", "must lie in (0, 1)"));
        }
        if !(self.gp_fd_step > 0.0) {
            return Err(Error::param("gp_fd_step", "must be positive"));
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        if self.alpha2_range.is_some() {
            LOCAL_DIM_JOINT
        } else {
            LOCAL_DIM
        }
    }
}

/// Linear annealing of the exploration rate over the first `eps_fraction` of training.
pub fn epsilon_at(step: u64, cfg: &TrainConfig) -> f64 {
    let ramp = (cfg.eps_fraction * cfg.total_steps as f64).round();
    if ramp <= 0.0 {
        return cfg.eps_end;
    }
    let frac = step as f64 / ramp;
    if frac >= 1.0 {
        return cfg.eps_end;
    }
    cfg.eps_start * (1.0 - frac) + cfg.eps_end * frac
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: u64,
    pub episodes: u64,
    pub updates: u64,
    pub transitions: u64,
    /// Mean TD loss and penalty over each block of 500 updates.
    pub td_loss: Vec<f64>,
    pub gp_loss: Vec<f64>,
}

fn to_matrix(flat: Vec<f64>, rows: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_vec((rows, dim), flat).expect("rectangular batch")
}

struct Learner {
    online: LearnedQ,
    target: crate::nn::Mlp,
    opt: Adam,
    updates: u64,
    total_updates: u64,
}

impl Learner {
    fn update(&mut self, buffer: &ReplayBuffer, rng: &mut StreamRng, cfg: &TrainConfig) -> Result<(f64, f64)> {
        let bs = cfg.batch_size;
        let d = cfg.obs_dim();
        let batch = buffer.sample(bs, rng);
        let x = to_matrix(batch.obs, bs, d);
        let xn = to_matrix(batch.next_obs, bs, d);
        let net = &self.online.net;
        let trace = net.forward_trace(x.view());
        let qn_online = net.forward(xn.view());
        let qn_target = self.target.forward(xn.view());

        let mut gout = Array2::<f64>::zeros((bs, 2));
        let mut td_loss = 0.0;
        for i in 0..bs {
            let a_star = if qn_online[[i, 1]] > qn_online[[i, 0]] { 1 } else { 0 };
            let bootstrap = if batch.dones[i] { 0.0 } else { cfg.gamma * qn_target[[i, a_star]] };
            let y = batch.rewards[i] + bootstrap;
            let err = trace.out[[i, batch.actions[i]]] - y;
            td_loss += err * err;
            gout[[i, batch.actions[i]]] = 2.0 * err / bs as f64;
        }
        td_loss /= bs as f64;

        let mut grads = vec![0.0; net.n_params()];
        net.backward(&trace, &gout, &mut grads);

        let mut gp_loss = 0.0;
        if cfg.lambda_gp > 0.0 {
            let (_, tangent) = net.forward_tangent(x.view(), ALPHA3_SLOT);
            let h = cfg.gp_fd_step;
            let mut w_up = Array2::<f64>::zeros((bs, 2));
            let mut any = false;
            for i in 0..bs {
                let a = batch.actions[i];
                let hinge = (tangent[[i, a]] - cfg.g_target).max(0.0);
                gp_loss += hinge * hinge;
                if hinge > 0.0 {
                    any = true;
                    w_up[[i, a]] = cfg.lambda_gp * 2.0 * hinge / bs as f64 / (2.0 * h);
                }
            }
            gp_loss /= bs as f64;
            if any {
                // d(dQ/da3)/dtheta by central differences of parameter gradients.
                let mut up = x.clone();
                up.column_mut(ALPHA3_SLOT).mapv_inplace(|v| v + h);
                let tr_up = net.forward_trace(up.view());
                net.backward(&tr_up, &w_up, &mut grads);
                let mut down = x;
                down.column_mut(ALPHA3_SLOT).mapv_inplace(|v| v - h);
                let tr_down = net.forward_trace(down.view());
                net.backward(&tr_down, &(-&w_up), &mut grads);
            }
        }

        if !td_loss.is_finite() || !gp_loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite loss at update {}: td={td_loss}, gp={gp_loss}",
                self.updates
            )));
        }
        clip_grad_norm(&mut grads, cfg.grad_clip);
        let lr = cosine_lr(self.updates, self.total_updates, cfg.warmup_updates, cfg.lr, cfg.lr_floor);
        self.opt.step(&mut self.online.net, &grads, lr);
        self.updates += 1;
        if !self.online.net.all_finite() {
            return Err(Error::Divergence(format!("non-finite parameters after update {}", self.updates)));
        }
        Ok((td_loss, gp_loss))
    }
}

/// Train the learned estimator on single-cluster episodes.
///
/// The test cost is drawn per episode from `alpha3_range` and written into
/// the observation; rewards use the same cost. Deterministic given the config.
pub fn td_train(cfg: &TrainConfig) -> Result<(LearnedQ, TrainReport)> {
    cfg.validate()?;
    let space = HypothesisSpace::shared(&cfg.epi);
    let dim = cfg.obs_dim();
    let meta = EstimatorMeta {
        alpha2: cfg.alpha2,
        alpha3_range: cfg.alpha3_range,
        alpha2_range: cfg.alpha2_range,
        obs_dim: dim,
        lambda_gp: cfg.lambda_gp,
        g_target: cfg.g_target,
        trained_steps: 0,
        version: 1,
    };
    let online = LearnedQ::new(meta, &cfg.hidden, cfg.seed);
    let n_params = online.net.n_params();
    let mut learner = Learner {
        target: online.net.clone(),
        online,
        opt: Adam::new(n_params, 0.0),
        updates: 0,
        total_updates: cfg.total_steps / cfg.train_every,
    };
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity, dim)?;
    let mut explore = StreamRng::seeded(cfg.seed, Channel::Exploration);
    let mut costs = StreamRng::seeded(cfg.seed, Channel::CostSample);
    let mut replay_rng = StreamRng::seeded(cfg.seed, Channel::Replay);

    let mut report = TrainReport {
        steps: 0,
        episodes: 0,
        updates: 0,
        transitions: 0,
        td_loss: Vec::new(),
        gp_loss: Vec::new(),
    };
    let (mut td_acc, mut gp_acc, mut acc_n) = (0.0, 0.0, 0u64);
    let mut step = 0u64;
    while step < cfg.total_steps {
        let (lo, hi) = cfg.alpha3_range;
        let alpha3 = lo + (hi - lo) * costs.uniform();
        let alpha2 = match cfg.alpha2_range {
            Some((a, b)) => a + (b - a) * costs.uniform(),
            None => cfg.alpha2,
        };
        let mut env = SingleClusterEnv::new(
            space.clone(),
            cfg.seed,
            report.episodes,
            alpha2,
            alpha3,
            cfg.alpha2_range.is_some(),
        )?;
        let mut obs = env.observations();
        while !env.done() && step < cfg.total_steps {
            let eps = epsilon_at(step, cfg);
            let greedy = learner.online.delta_q_batch(obs.iter(), alpha3);
            let tests: Vec<bool> = greedy
                .iter()
                .map(|&dq| {
                    if explore.uniform() < eps {
                        explore.bernoulli(0.5)
                    } else {
                        dq > 0.0
                    }
                })
                .collect();
            let rewards = env.step(&tests)?;
            let next = env.observations();
            let done = env.done();
            for i in 0..env.size() {
                buffer.push(&Transition {
                    obs: obs[i].0.clone(),
                    action: usize::from(tests[i]),
                    reward: rewards[i],
                    next_obs: next[i].0.clone(),
                    done,
                });
                report.transitions += 1;
            }
            obs = next;
            step += 1;
            if step % cfg.target_update == 0 {
                learner.target = learner.online.net.clone();
            }
            if buffer.len() >= cfg.learning_starts.max(cfg.batch_size) && step % cfg.train_every == 0 {
                let (td, gp) = learner.update(&buffer, &mut replay_rng, cfg)?;
                td_acc += td;
                gp_acc += gp;
                acc_n += 1;
                if acc_n == 500 {
                    report.td_loss.push(td_acc / 500.0);
                    report.gp_loss.push(gp_acc / 500.0);
                    td_acc = 0.0;
                    gp_acc = 0.0;
                    acc_n = 0;
                }
            }
        }
        report.episodes += 1;
    }
    report.steps = step;
    report.updates = learner.updates;
    let mut q = learner.online;
    q.meta.trained_steps = step;
    Ok((q, report))
}
