use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::QPair;
use crate::nn::Mlp;
use crate::obs::{LocalObs, ALPHA2_SLOT, ALPHA3_SLOT, LOCAL_DIM, LOCAL_DIM_JOINT};
use crate::rng::{Channel, StreamRng};

/// Description of how a learned estimator was trained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorMeta {
    pub alpha2: f64,
    /// Range the training test cost was drawn from.
    pub alpha3_range: (f64, f64),
    /// Range of the quarantine weight for the joint variant.
    pub alpha2_range: Option<(f64, f64)>,
    pub obs_dim: usize,
    pub lambda_gp: f64,
    pub g_target: f64,
    pub trained_steps: u64,
    pub version: u32,
}

/// Feed-forward action-value network on the local observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnedQ {
    pub net: Mlp,
    pub meta: EstimatorMeta,
}

pub(crate) fn input_scale(obs_dim: usize) -> Vec<f64> {
    let mut s = vec![1.0; obs_dim];
    s[ALPHA3_SLOT] = 10.0;
    if obs_dim > ALPHA2_SLOT {
        s[ALPHA2_SLOT] = 5.0;
    }
    s
}

impl LearnedQ {
    pub fn new(meta: EstimatorMeta, hidden: &[usize], seed: u64) -> Self {
        assert!(meta.obs_dim == LOCAL_DIM || meta.obs_dim == LOCAL_DIM_JOINT);
        let mut sizes = vec![meta.obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2);
        let mut rng = StreamRng::seeded(seed, Channel::Init);
        Self {
            net: Mlp::new(&sizes, input_scale(meta.obs_dim), &mut rng),
            meta,
        }
    }

    pub fn q_values(&self, obs: &LocalObs) -> QPair {
        let out = self.net.forward_one(&obs.0[..self.meta.obs_dim]);
        QPair {
            no_test: out[0],
            test: out[1],
        }
    }

    pub fn q_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.net.forward(x)
    }

    pub fn delta_q_batch<'a>(&self, obs: impl Iterator<Item = &'a LocalObs>, alpha3_active: f64) -> Vec<f64> {
        let d = self.meta.obs_dim;
        let mut flat = Vec::new();
        let mut rows = 0;
        for o in obs {
            flat.extend_from_slice(&o.0[..d]);
            flat[rows * d + ALPHA3_SLOT] = alpha3_active;
            rows += 1;
        }
        if rows == 0 {
            return Vec::new();
        }
        let x = Array2::from_shape_vec((rows, d), flat).expect("rectangular batch");
        let out = self.net.forward(x.view());
        out.rows().into_iter().map(|r| r[1] - r[0]).collect()
    }
}

/// Squared hinge `max(0, g - g_target)^2`.
#[inline]
pub fn hinge_penalty(g: f64, g_target: f64) -> f64 {
    let h = (g - g_target).max(0.0);
    h * h
}

/// Mean squared hinge on the exact partial of `Q(o, a)` with respect to the test cost.
pub fn grad_penalty(net: &Mlp, x: ArrayView2<f64>, actions: &[usize], g_target: f64) -> f64 {
    if actions.is_empty() {
        return 0.0;
    }
    let (_, tangent) = net.forward_tangent(x, ALPHA3_SLOT);
    actions
        .iter()
        .enumerate()
        .map(|(i, &a)| hinge_penalty(tangent[[i, a]], g_target))
        .sum::<f64>()
        / actions.len() as f64
}

/// The same penalty with the partial taken by central differences of step `h`.
pub fn grad_penalty_fd(net: &Mlp, x: ArrayView2<f64>, actions: &[usize], g_target: f64, h: f64) -> f64 {
    if actions.is_empty() {
        return 0.0;
    }
    let mut up = x.to_owned();
    let mut down = x.to_owned();
    up.column_mut(ALPHA3_SLOT).mapv_inplace(|v| v + h);
    down.column_mut(ALPHA3_SLOT).mapv_inplace(|v| v - h);
    let qu = net.forward(up.view());
    let qd = net.forward(down.view());
    actions
        .iter()
        .enumerate()
        .map(|(i, &a)| hinge_penalty((qu[[i, a]] - qd[[i, a]]) / (2.0 * h), g_target))
        .sum::<f64>()
        / actions.len() as f64
}
