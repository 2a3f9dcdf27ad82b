//! Flat-parameter MLP actor-critic and the Adam optimizer.
//!
//! Parameters live in one contiguous `Vec<f64>` addressed through
//! [`PolicyShape`] offsets: two tanh trunk layers, one 3-way categorical
//! head per ticker, and a scalar value head. Keeping everything flat makes
//! the optimizer, gradient clipping, and finite-difference checks direct
//! index arithmetic.

use serde::{Deserialize, Serialize};

use crate::rng::{normal, Stream};

pub const N_ACTIONS: usize = 3;

/// Network dimensions; parameter count is a pure function of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub obs_width: usize,
    pub n_tickers: usize,
    pub hidden: usize,
}

impl PolicyShape {
    pub fn n_params(&self) -> usize {
        let (w, h, t) = (self.obs_width, self.hidden, self.n_tickers);
        h * w + h          // trunk1
            + h * h + h    // trunk2
            + t * (N_ACTIONS * h + N_ACTIONS) // heads
            + h + 1        // value head
    }

    fn trunk1_w(&self) -> usize {
        0
    }

    fn trunk1_b(&self) -> usize {
        self.hidden * self.obs_width
    }

    fn trunk2_w(&self) -> usize {
        self.trunk1_b() + self.hidden
    }

    fn trunk2_b(&self) -> usize {
        self.trunk2_w() + self.hidden * self.hidden
    }

    fn head_w(&self, t: usize) -> usize {
        self.trunk2_b() + self.hidden + t * (N_ACTIONS * self.hidden + N_ACTIONS)
    }

    fn head_b(&self, t: usize) -> usize {
        self.head_w(t) + N_ACTIONS * self.hidden
    }

    fn value_w(&self) -> usize {
        self.head_w(self.n_tickers)
    }

    fn value_b(&self) -> usize {
        self.value_w() + self.hidden
    }
}

/// Actor-critic parameters: shared tanh trunk, per-ticker action heads,
/// scalar value head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub shape: PolicyShape,
    pub theta: Vec<f64>,
}

impl PolicyParams {
    /// Scaled-gaussian init: trunk N(0, 1/sqrt(fan_in)), heads shrunk by
    /// 0.01 so the initial policy is near-uniform, value head by 0.1.
    pub fn init(shape: PolicyShape, rng: &mut Stream) -> Self {
        let mut theta = vec![0.0; shape.n_params()];
        let mut fill = |start: usize, len: usize, scale: f64, rng: &mut Stream| {
            for v in &mut theta[start..start + len] {
                *v = scale * normal(rng);
            }
        };
        let h = shape.hidden;
        fill(shape.trunk1_w(), h * shape.obs_width, 1.0 / (shape.obs_width as f64).sqrt(), rng);
        fill(shape.trunk2_w(), h * h, 1.0 / (h as f64).sqrt(), rng);
        for t in 0..shape.n_tickers {
            fill(shape.head_w(t), N_ACTIONS * h, 0.01 / (h as f64).sqrt(), rng);
        }
        fill(shape.value_w(), h, 0.1 / (h as f64).sqrt(), rng);
        Self { shape, theta }
    }

    pub fn zeros(shape: PolicyShape) -> Self {
        Self {
            theta: vec![0.0; shape.n_params()],
            shape,
        }
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }
}

/// Activations saved by a forward pass for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub obs: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    /// `logits[ticker][action]`.
    pub logits: Vec<Vec<f64>>,
    pub value: f64,
}

fn matvec(w: &[f64], x: &[f64], b: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let n_in = x.len();
    for (row, bias) in b.iter().enumerate() {
        let mut acc = *bias;
        let row_w = &w[row * n_in..(row + 1) * n_in];
        for (wi, xi) in row_w.iter().zip(x) {
            acc += wi * xi;
        }
        out.push(acc);
    }
}

/// Full forward pass keeping activations.
pub fn forward(params: &PolicyParams, obs: &[f64]) -> ForwardCache {
    let s = &params.shape;
    let theta = &params.theta;
    let h = s.hidden;

    let mut h1 = Vec::with_capacity(h);
    matvec(
        &theta[s.trunk1_w()..s.trunk1_b()],
        obs,
        &theta[s.trunk1_b()..s.trunk1_b() + h],
        &mut h1,
    );
    for v in &mut h1 {
        *v = v.tanh();
    }
    let mut h2 = Vec::with_capacity(h);
    matvec(
        &theta[s.trunk2_w()..s.trunk2_b()],
        &h1,
        &theta[s.trunk2_b()..s.trunk2_b() + h],
        &mut h2,
    );
    for v in &mut h2 {
        *v = v.tanh();
    }
    let mut logits = Vec::with_capacity(s.n_tickers);
    for t in 0..s.n_tickers {
        let mut l = Vec::with_capacity(N_ACTIONS);
        matvec(
            &theta[s.head_w(t)..s.head_b(t)],
            &h2,
            &theta[s.head_b(t)..s.head_b(t) + N_ACTIONS],
            &mut l,
        );
        logits.push(l);
    }
    let vw = &theta[s.value_w()..s.value_w() + h];
    let value = theta[s.value_b()] + vw.iter().zip(&h2).map(|(w, x)| w * x).sum::<f64>();

    ForwardCache {
        obs: obs.to_vec(),
        h1,
        h2,
        logits,
        value,
    }
}

/// Logits and value only.
pub fn policy_forward(params: &PolicyParams, obs: &[f64]) -> (Vec<Vec<f64>>, f64) {
    let cache = forward(params, obs);
    (cache.logits, cache.value)
}

/// Accumulate parameter gradients for one sample given the loss gradients
/// at the outputs: `d_logits[ticker][action]` and `d_value`.
pub fn backward(
    params: &PolicyParams,
    cache: &ForwardCache,
    d_logits: &[Vec<f64>],
    d_value: f64,
    grad: &mut [f64],
) {
    let s = &params.shape;
    let theta = &params.theta;
    let h = s.hidden;

    // Output layers into d_h2.
    let mut d_h2 = vec![0.0; h];
    for (t, dl) in d_logits.iter().enumerate() {
        let w = &theta[s.head_w(t)..s.head_b(t)];
        let gw = s.head_w(t);
        let gb = s.head_b(t);
        for (a, da) in dl.iter().enumerate() {
            if *da == 0.0 {
                continue;
            }
            for j in 0..h {
                grad[gw + a * h + j] += da * cache.h2[j];
                d_h2[j] += da * w[a * h + j];
            }
            grad[gb + a] += da;
        }
    }
    if d_value != 0.0 {
        let vw = &theta[s.value_w()..s.value_w() + h];
        for j in 0..h {
            grad[s.value_w() + j] += d_value * cache.h2[j];
            d_h2[j] += d_value * vw[j];
        }
        grad[s.value_b()] += d_value;
    }

    // tanh' = 1 - h^2.
    let mut d_z2 = d_h2;
    for (dz, h2) in d_z2.iter_mut().zip(&cache.h2) {
        *dz *= 1.0 - h2 * h2;
    }
    let w2 = &theta[s.trunk2_w()..s.trunk2_b()];
    let mut d_h1 = vec![0.0; h];
    for (k, dz) in d_z2.iter().enumerate() {
        if *dz == 0.0 {
            continue;
        }
        for j in 0..h {
            grad[s.trunk2_w() + k * h + j] += dz * cache.h1[j];
            d_h1[j] += dz * w2[k * h + j];
        }
        grad[s.trunk2_b() + k] += dz;
    }

    let mut d_z1 = d_h1;
    for (dz, h1) in d_z1.iter_mut().zip(&cache.h1) {
        *dz *= 1.0 - h1 * h1;
    }
    let n_in = s.obs_width;
    for (j, dz) in d_z1.iter().enumerate() {
        if *dz == 0.0 {
            continue;
        }
        for i in 0..n_in {
            grad[s.trunk1_w() + j * n_in + i] += dz * cache.obs[i];
        }
        grad[s.trunk1_b() + j] += dz;
    }
}

/// Bias-corrected Adam over the flat parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            theta[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Scale `grad` in place so its global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn param_count_matches_layout() {
        let shape = PolicyShape {
            obs_width: 4,
            n_tickers: 2,
            hidden: 6,
        };
        // 6*4+6 + 6*6+6 + 2*(18+3) + 6+1 = 30 + 42 + 42 + 7 = 121.
        assert_eq!(shape.n_params(), 121);
        let params = PolicyParams::init(shape, &mut stream(0, "w", 0));
        assert_eq!(params.theta.len(), 121);
        assert!(params.theta.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_params_give_zero_outputs() {
        let shape = PolicyShape {
            obs_width: 5,
            n_tickers: 3,
            hidden: 8,
        };
        let params = PolicyParams::zeros(shape);
        let (logits, value) = policy_forward(&params, &[1.0, -2.0, 0.5, 3.0, -1.0]);
        assert_eq!(logits.len(), 3);
        assert!(logits.iter().flatten().all(|l| *l == 0.0));
        assert_eq!(value, 0.0);
    }

    #[test]
    fn forward_is_deterministic() {
        let shape = PolicyShape {
            obs_width: 4,
            n_tickers: 2,
            hidden: 6,
        };
        let params = PolicyParams::init(shape, &mut stream(1, "w", 0));
        let obs = [0.3, -0.7, 1.2, 0.0];
        let (la, va) = policy_forward(&params, &obs);
        let (lb, vb) = policy_forward(&params, &obs);
        assert_eq!(la, lb);
        assert_eq!(va, vb);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1.0, 2.0, 3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[2] > p[1] && p[1] > p[0]);
        // Huge logits stay finite.
        let p = softmax(&[1000.0, 0.0, -1000.0]);
        assert!((p[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences_on_value() {
        // Check the pure value-head path: L = value(obs).
        let shape = PolicyShape {
            obs_width: 3,
            n_tickers: 2,
            hidden: 4,
        };
        let mut params = PolicyParams::init(shape, &mut stream(2, "w", 0));
        let obs = [0.5, -1.0, 2.0];
        let cache = forward(&params, &obs);
        let mut grad = vec![0.0; params.n_params()];
        let d_logits = vec![vec![0.0; N_ACTIONS]; 2];
        backward(&params, &cache, &d_logits, 1.0, &mut grad);
        let h = 1e-6;
        for i in 0..params.n_params() {
            let orig = params.theta[i];
            params.theta[i] = orig + h;
            let up = forward(&params, &obs).value;
            params.theta[i] = orig - h;
            let down = forward(&params, &obs).value;
            params.theta[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            assert!(
                (grad[i] - numeric).abs() < 1e-6 * (1.0 + numeric.abs()),
                "param {i}: analytic {} vs numeric {numeric}",
                grad[i]
            );
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut theta = vec![5.0, -3.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let grad: Vec<f64> = theta.iter().map(|x| 2.0 * x).collect();
            opt.step(&mut theta, &grad);
        }
        assert!(theta.iter().all(|x| x.abs() < 1e-3), "{theta:?}");
    }

    #[test]
    fn grad_clip_caps_global_norm() {
        let mut grad = vec![3.0, 4.0];
        let norm = clip_grad_norm(&mut grad, 0.5);
        assert!((norm - 5.0).abs() < 1e-12);
        let clipped = (grad[0] * grad[0] + grad[1] * grad[1]).sqrt();
        assert!((clipped - 0.5).abs() < 1e-12);
        // Under the cap: untouched.
        let mut small = vec![0.1, 0.1];
        clip_grad_norm(&mut small, 0.5);
        assert_eq!(small, vec![0.1, 0.1]);
    }
}
