//! Small dense networks on `ndarray` with manual backpropagation.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::StreamRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `out x in`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn glorot(n_in: usize, n_out: usize, gain: f64, rng: &mut StreamRng) -> Self {
        let a = gain * (6.0 / (n_in + n_out) as f64).sqrt();
        let w = Array2::from_shape_fn((n_out, n_in), |_| rng.random_range(-a..a));
        Self {
            w,
            b: Array1::zeros(n_out),
        }
    }

    fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Activations kept by a forward pass for the backward pass.
pub struct Trace {
    /// Scaled input followed by every hidden activation.
    pub acts: Vec<Array2<f64>>,
    pub out: Array2<f64>,
}

/// Multilayer perceptron with `tanh` hidden units and a linear head.
///
/// Inputs are multiplied element-wise by `input_scale` before the first layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub input_scale: Vec<f64>,
}

impl Mlp {
    /// `sizes = [in, hidden.., out]`.
    pub fn new(sizes: &[usize], input_scale: Vec<f64>, rng: &mut StreamRng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        assert_eq!(input_scale.len(), sizes[0]);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, s)| Dense::glorot(s[0], s[1], if k == last { 0.1 } else { 1.0 }, rng))
            .collect();
        Self { layers, input_scale }
    }

    pub fn n_inputs(&self) -> usize {
        self.input_scale.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().map(|l| l.b.len()).unwrap_or(0)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    fn scale(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let s = Array1::from(self.input_scale.clone());
        &x * &s
    }

    pub fn forward_trace(&self, x: ArrayView2<f64>) -> Trace {
        let mut acts = vec![self.scale(x)];
        let n = self.layers.len();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = acts.last().expect("non-empty").dot(&layer.w.t()) + &layer.b;
            if k + 1 == n {
                return Trace { acts, out: z };
            }
            acts.push(z.mapv(f64::tanh));
        }
        unreachable!("loop returns on the last layer")
    }

    /// Forward pass without keeping activations.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = self.scale(x);
        let n = self.layers.len();
        for (k, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.w.t()) + &layer.b;
            if k + 1 < n {
                h.mapv_inplace(f64::tanh);
            }
        }
        h
    }

    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        let mut h: Array1<f64> = Array1::from_iter(x.iter().zip(&self.input_scale).map(|(a, s)| a * s));
        let n = self.layers.len();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.w.dot(&h) + &layer.b;
            h = if k + 1 == n { z } else { z.mapv(f64::tanh) };
        }
        h.to_vec()
    }

    /// Accumulate `d(sum_i g_i . out_i)/d(theta)` into a flat gradient.
    ///
    /// Returns the gradient with respect to the raw (unscaled) input as well.
    pub fn backward(&self, trace: &Trace, grad_out: &Array2<f64>, grads: &mut [f64]) -> Array2<f64> {
        debug_assert_eq!(grads.len(), self.n_params());
        let mut delta = grad_out.clone();
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.n_params();
        }
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &trace.acts[k];
            let gw = delta.t().dot(input);
            let gb = delta.sum_axis(Axis(0));
            let o = offsets[k];
            for (g, v) in grads[o..o + layer.w.len()].iter_mut().zip(gw.iter()) {
                *g += v;
            }
            let ob = o + layer.w.len();
            for (g, v) in grads[ob..ob + layer.b.len()].iter_mut().zip(gb.iter()) {
                *g += v;
            }
            let mut d_in = delta.dot(&layer.w);
            if k > 0 {
                d_in.zip_mut_with(input, |d, &a| *d *= 1.0 - a * a);
            }
            delta = d_in;
        }
        let s = Array1::from(self.input_scale.clone());
        delta * &s
    }

    /// Outputs and their exact partial derivative with respect to raw input `k`.
    pub fn forward_tangent(&self, x: ArrayView2<f64>, k: usize) -> (Array2<f64>, Array2<f64>) {
        let batch = x.nrows();
        let mut h = self.scale(x);
        let mut dh = Array2::<f64>::zeros((batch, self.n_inputs()));
        dh.column_mut(k).fill(self.input_scale[k]);
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.w.t()) + &layer.b;
            let dz = dh.dot(&layer.w.t());
            if i + 1 == n {
                return (z, dz);
            }
            h = z.mapv(f64::tanh);
            dh = dz;
            dh.zip_mut_with(&h, |d, &a| *d *= 1.0 - a * a);
        }
        unreachable!("loop returns on the last layer")
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.w.iter().copied());
            out.extend(l.b.iter().copied());
        }
        out
    }

    pub fn set_params_flat(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params());
        let mut off = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut() {
                *v = p[off];
                off += 1;
            }
            for v in l.b.iter_mut() {
                *v = p[off];
                off += 1;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }
}

/// Rescale `g` so its Euclidean norm is at most `max_norm`; returns the original norm.
pub fn clip_grad_norm(g: &mut [f64], max_norm: f64) -> f64 {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for v in g.iter_mut() {
            *v *= s;
        }
    }
    norm
}

/// Adam with optional decoupled weight decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n: usize, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One descent step on `net` using gradient `g` and learning rate `lr`.
    pub fn step(&mut self, net: &mut Mlp, g: &[f64], lr: f64) {
        let mut params = net.params_flat();
        self.step_slice(&mut params, g, lr);
        net.set_params_flat(&params);
    }

    /// One descent step on a flat parameter vector.
    pub fn step_slice(&mut self, params: &mut [f64], g: &[f64], lr: f64) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..g.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            params[i] -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
    }
}

/// Linear warmup followed by cosine decay to `floor * base`.
pub fn cosine_lr(step: u64, total: u64, warmup: u64, base: f64, floor: f64) -> f64 {
    if warmup > 0 && step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1) as f64;
    let progress = ((step - warmup.min(step)) as f64 / span).min(1.0);
    let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    base * (floor + (1.0 - floor) * cos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Channel;
    use ndarray::array;

    fn net() -> Mlp {
        let mut rng = StreamRng::seeded(3, Channel::Init);
        Mlp::new(&[3, 5, 4, 2], vec![1.0, 2.0, 0.5], &mut rng)
    }

    #[test]
    fn single_and_batch_forward_agree() {
        let n = net();
        let x = array![[0.3, -0.2, 1.5], [1.0, 0.0, -1.0]];
        let out = n.forward(x.view());
        for r in 0..2 {
            let one = n.forward_one(x.row(r).as_slice().unwrap());
            for c in 0..2 {
                assert!((out[[r, c]] - one[c]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let mut n = net();
        let x = array![[0.3, -0.2, 1.5], [1.0, 0.4, -1.0]];
        let gout = array![[1.0, -0.5], [0.25, 2.0]];
        let loss = |m: &Mlp| (m.forward(x.view()) * &gout).sum();
        let trace = n.forward_trace(x.view());
        let mut g = vec![0.0; n.n_params()];
        n.backward(&trace, &gout, &mut g);
        let p = n.params_flat();
        let h = 1e-6;
        for i in (0..p.len()).step_by(3) {
            let mut q = p.clone();
            q[i] += h;
            n.set_params_flat(&q);
            let up = loss(&n);
            q[i] -= 2.0 * h;
            n.set_params_flat(&q);
            let down = loss(&n);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g[i]);
        }
        n.set_params_flat(&p);
    }

    #[test]
    fn input_gradient_and_tangent_agree() {
        let n = net();
        let x = array![[0.3, -0.2, 1.5]];
        let trace = n.forward_trace(x.view());
        let mut g = vec![0.0; n.n_params()];
        let dx = n.backward(&trace, &array![[1.0, 0.0]], &mut g);
        let (_, tangent) = n.forward_tangent(x.view(), 1);
        assert!((dx[[0, 1]] - tangent[[0, 0]]).abs() < 1e-13);
    }

    #[test]
    fn flat_round_trip() {
        let mut n = net();
        let p = n.params_flat();
        n.set_params_flat(&p);
        assert_eq!(n.params_flat(), p);
    }

    #[test]
    fn clip_and_schedule() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15);
        assert!((cosine_lr(0, 100, 10, 1.0, 0.0) - 0.1).abs() < 1e-15);
        assert!((cosine_lr(10, 100, 10, 1.0, 0.0) - 1.0).abs() < 1e-15);
        assert!(cosine_lr(100, 100, 10, 1.0, 0.1) - 0.1 < 1e-12);
    }

    #[test]
    fn adam_reduces_quadratic_loss() {
        let mut rng = StreamRng::seeded(1, Channel::Init);
        let mut n = Mlp::new(&[1, 8, 1], vec![1.0], &mut rng);
        let mut opt = Adam::new(n.n_params(), 0.0);
        let x = array![[-1.0], [0.0], [1.0]];
        let y = array![[0.5], [0.0], [0.5]];
        let loss = |m: &Mlp| (m.forward(x.view()) - &y).mapv(|v| v * v).sum();
        let start = loss(&n);
        for _ in 0..500 {
            let tr = n.forward_trace(x.view());
            let gout = (&tr.out - &y) * 2.0;
            let mut g = vec![0.0; n.n_params()];
            n.backward(&tr, &gout, &mut g);
            opt.step(&mut n, &g, 0.01);
        }
        assert!(loss(&n) < 0.05 * start);
    }
}
