//! Dense layers with manual reverse-mode gradients, Adam, sinusoidal
//! encodings and a finite-difference gradient checker.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => libm::tanh(z),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative given the pre-activation `z` and output `y`.
    pub fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Affine map `W x + b` followed by an activation. `weight` is row-major
/// `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Dense { in_dim, out_dim, weight: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim], activation }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = libm::sqrt(6.0 / (in_dim + out_dim) as f64);
        let weight = (0..in_dim * out_dim).map(|_| bound * (2.0 * rng.gen::<f64>() - 1.0)).collect();
        Dense { in_dim, out_dim, weight, bias: vec![0.0; out_dim], activation }
    }

    pub fn row(&self, o: usize) -> &[f64] {
        &self.weight[o * self.in_dim..(o + 1) * self.in_dim]
    }

    /// Pre-activation `W x + b`.
    pub fn affine(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out_dim).map(|o| self.bias[o] + dot(self.row(o), x)).collect()
    }

    /// Returns `(pre_activation, output)`.
    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let pre = self.affine(x);
        let out = pre.iter().map(|&z| self.activation.apply(z)).collect();
        (pre, out)
    }

    /// Gradient w.r.t. the pre-activation from the gradient w.r.t. the output.
    pub fn pre_grad(&self, pre: &[f64], out: &[f64], grad_out: &[f64]) -> Vec<f64> {
        (0..self.out_dim).map(|o| grad_out[o] * self.activation.derivative(pre[o], out[o])).collect()
    }

    /// Accumulates parameter gradients for pre-activation gradient `delta` at
    /// input `x`, returning the gradient w.r.t. `x`.
    pub fn backward_pre(&self, x: &[f64], delta: &[f64], grads: &mut Dense) -> Vec<f64> {
        let mut gx = vec![0.0; self.in_dim];
        for o in 0..self.out_dim {
            let d = delta[o];
            if d == 0.0 {
                continue;
            }
            grads.bias[o] += d;
            let row = self.row(o);
            let grow = &mut grads.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += d * x[i];
                gx[i] += d * row[i];
            }
        }
        gx
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
}

/// Per-layer inputs, pre-activations and outputs of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpCache {
    shapes: Vec<(usize, usize)>,
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().map_or(&[], |v| v.as_slice())
    }
}

impl MlpParams {
    /// Glorot-initialized stack with `hidden` activations between layers and
    /// `output` on the last one.
    pub fn glorot<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        let n = dims.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| Dense::glorot(dims[i], dims[i + 1], if i + 1 == n { output } else { hidden }, rng))
            .collect();
        MlpParams { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("mlp needs at least one layer"));
        }
        for pair in self.layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::DimMismatch { expected: pair[0].out_dim, got: pair[1].in_dim });
            }
        }
        for l in &self.layers {
            if l.weight.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::InvalidConfig("layer storage does not match its shape"));
            }
            if l.weight.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        Ok(())
    }

    pub fn zero_last_layer(&mut self) {
        if let Some(l) = self.layers.last_mut() {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.in_dim, l.out_dim)).collect()
    }
}

pub fn mlp_forward(params: &MlpParams, input: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
    if input.len() != params.input_dim() {
        return Err(Error::DimMismatch { expected: params.input_dim(), got: input.len() });
    }
    let mut cache = MlpCache { shapes: params.shapes(), inputs: Vec::new(), pre: Vec::new(), outputs: Vec::new() };
    let mut x = input.to_vec();
    for layer in &params.layers {
        let (pre, out) = layer.forward(&x);
        cache.inputs.push(x);
        cache.pre.push(pre);
        x = out.clone();
        cache.outputs.push(out);
    }
    Ok((x, cache))
}

/// Reverse pass that adds parameter gradients into `grads` and returns the
/// gradient w.r.t. the network input.
pub fn mlp_backward_into(params: &MlpParams, cache: &MlpCache, grad_output: &[f64], grads: &mut MlpParams) -> Result<Vec<f64>> {
    if cache.shapes != params.shapes() || grads.shapes() != params.shapes() {
        return Err(Error::StaleCache);
    }
    if grad_output.len() != params.output_dim() {
        return Err(Error::DimMismatch { expected: params.output_dim(), got: grad_output.len() });
    }
    let mut g = grad_output.to_vec();
    for (i, layer) in params.layers.iter().enumerate().rev() {
        let delta = layer.pre_grad(&cache.pre[i], &cache.outputs[i], &g);
        g = layer.backward_pre(&cache.inputs[i], &delta, &mut grads.layers[i]);
    }
    Ok(g)
}

pub fn mlp_backward(params: &MlpParams, cache: &MlpCache, grad_output: &[f64]) -> Result<(MlpParams, Vec<f64>)> {
    let mut grads = params.zeroed();
    let gx = mlp_backward_into(params, cache, grad_output, &mut grads)?;
    Ok((grads, gx))
}

/// Named access to every trainable tensor. Gradients share the parameter
/// type, so the same traversal order lines up values, gradients and
/// optimizer moments.
pub trait Parameters: Clone {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit("", &mut |_, t| out.extend_from_slice(t));
        out
    }

    fn assign_flat(&mut self, flat: &[f64]) {
        let mut pos = 0;
        self.visit_mut("", &mut |_, t| {
            t.copy_from_slice(&flat[pos..pos + t.len()]);
            pos += t.len();
        });
    }

    fn zeroed(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut("", &mut |_, t| t.fill(0.0));
        z
    }

    fn add_assign(&mut self, other: &Self) {
        let flat = other.flatten();
        let mut pos = 0;
        self.visit_mut("", &mut |_, t| {
            for v in t.iter_mut() {
                *v += flat[pos];
                pos += 1;
            }
        });
    }

    fn scale(&mut self, factor: f64) {
        self.visit_mut("", &mut |_, t| t.iter_mut().for_each(|v| *v *= factor));
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

impl Parameters for MlpParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        for (i, l) in self.layers.iter().enumerate() {
            f(&join(prefix, &format!("layer{i}.weight")), &l.weight);
            f(&join(prefix, &format!("layer{i}.bias")), &l.bias);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            f(&join(prefix, &format!("layer{i}.weight")), &mut l.weight);
            f(&join(prefix, &format!("layer{i}.bias")), &mut l.bias);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new<P: Parameters>(params: &P, hyper: AdamHyper) -> Self {
        let n = params.num_params();
        AdamState { m: vec![0.0; n], v: vec![0.0; n], step: 0, hyper }
    }
}

/// One bias-corrected Adam update, in place. Nothing is modified when the
/// gradient contains a non-finite entry.
pub fn adam_step<P: Parameters>(params: &mut P, grads: &P, state: &mut AdamState) -> Result<()> {
    let g = grads.flatten();
    if g.len() != state.m.len() || params.num_params() != g.len() {
        return Err(Error::DimMismatch { expected: state.m.len(), got: g.len() });
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged);
    }
    let AdamHyper { lr, beta1, beta2, eps } = state.hyper;
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - libm::pow(beta1, t);
    let c2 = 1.0 - libm::pow(beta2, t);
    let mut p = params.flatten();
    for i in 0..p.len() {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        p[i] -= lr * m_hat / (libm::sqrt(v_hat) + eps);
    }
    params.assign_flat(&p);
    Ok(())
}

/// Sinusoidal encoding: `[sin(2^k x), cos(2^k x)]` for each scalar, `k`
/// ascending from 0 to `bands - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEncoding(pub Vec<f64>);

pub fn positional_encoding(scalars: &[f64], bands: usize) -> PoseEncoding {
    let mut out = Vec::with_capacity(scalars.len() * 2 * bands);
    for &x in scalars {
        let mut f = 1.0;
        for _ in 0..bands {
            out.push(libm::sin(f * x));
            out.push(libm::cos(f * x));
            f *= 2.0;
        }
    }
    PoseEncoding(out)
}

/// Largest relative disagreement between the analytic gradient returned by
/// `loss_fn` and central finite differences of its loss, over every
/// parameter entry.
pub fn grad_check<P, F>(params: &P, loss_fn: F, h: f64) -> f64
where
    P: Parameters,
    F: Fn(&P) -> (f64, P),
{
    let (_, analytic) = loss_fn(params);
    let analytic = analytic.flatten();
    let base = params.flatten();
    let mut probe = params.clone();
    let mut flat = base.clone();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        flat[i] = base[i] + h;
        probe.assign_flat(&flat);
        let up = loss_fn(&probe).0;
        flat[i] = base[i] - h;
        probe.assign_flat(&flat);
        let down = loss_fn(&probe).0;
        flat[i] = base[i];
        let fd = (up - down) / (2.0 * h);
        let a = analytic[i];
        let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(w: &[f64], b: &[f64], in_dim: usize, act: Activation) -> Dense {
        Dense { in_dim, out_dim: b.len(), weight: w.to_vec(), bias: b.to_vec(), activation: act }
    }

    #[test]
    fn identity_network_passes_input_through() {
        let net = MlpParams { layers: vec![layer(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], 2, Activation::Identity)] };
        assert_eq!(mlp_forward(&net, &[3.5, -2.0]).unwrap().0, vec![3.5, -2.0]);
        let relu = MlpParams { layers: vec![layer(&[0.3, -0.2, 0.9, 0.4], &[0.0, 0.0], 2, Activation::Relu)] };
        assert_eq!(mlp_forward(&relu, &[0.0, 0.0]).unwrap().0, vec![0.0, 0.0]);
    }

    #[test]
    fn hand_computed_two_two_one() {
        let net = MlpParams {
            layers: vec![
                layer(&[0.5, -1.0, 2.0, 0.25], &[0.1, -0.2], 2, Activation::Tanh),
                layer(&[1.5, -0.5], &[0.3], 2, Activation::Identity),
            ],
        };
        let x = [0.4, 0.8];
        let h0 = libm::tanh(0.5 * 0.4 - 1.0 * 0.8 + 0.1);
        let h1 = libm::tanh(2.0 * 0.4 + 0.25 * 0.8 - 0.2);
        let want = 1.5 * h0 - 0.5 * h1 + 0.3;
        let got = mlp_forward(&net, &x).unwrap().0[0];
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn linear_gradient_is_input_times_upstream() {
        let net = MlpParams { layers: vec![layer(&[0.7, -0.3, 0.2], &[0.0], 3, Activation::Identity)] };
        let x = [1.0, 2.0, -3.0];
        let (_, cache) = mlp_forward(&net, &x).unwrap();
        let (g, gx) = mlp_backward(&net, &cache, &[2.0]).unwrap();
        assert_eq!(g.layers[0].weight, vec![2.0, 4.0, -6.0]);
        assert_eq!(g.layers[0].bias, vec![2.0]);
        assert_eq!(gx, vec![1.4, -0.6, 0.4]);
    }

    #[test]
    fn relu_blocks_gradient_below_zero() {
        let net = MlpParams { layers: vec![layer(&[1.0, -1.0], &[0.0, 0.0], 1, Activation::Relu)] };
        let (_, cache) = mlp_forward(&net, &[2.0]).unwrap();
        let (g, _) = mlp_backward(&net, &cache, &[1.0, 1.0]).unwrap();
        assert_eq!(g.layers[0].weight, vec![2.0, 0.0]);
    }

    #[test]
    fn stale_cache_and_bad_input_are_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = MlpParams::glorot(&[3, 4, 2], Activation::Tanh, Activation::Identity, &mut rng);
        let b = MlpParams::glorot(&[3, 5, 2], Activation::Tanh, Activation::Identity, &mut rng);
        let (_, cache) = mlp_forward(&a, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(mlp_backward(&b, &cache, &[1.0, 1.0]).unwrap_err(), Error::StaleCache);
        assert!(matches!(mlp_forward(&a, &[0.1]), Err(Error::DimMismatch { .. })));
    }

    fn mse_loss(net: &MlpParams, x: &[f64], target: &[f64]) -> (f64, MlpParams) {
        let (y, cache) = mlp_forward(net, x).unwrap();
        let diff: Vec<f64> = y.iter().zip(target).map(|(a, b)| a - b).collect();
        let loss = 0.5 * dot(&diff, &diff);
        (loss, mlp_backward(net, &cache, &diff).unwrap().0)
    }

    #[test]
    fn three_layer_tanh_passes_grad_check() {
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = MlpParams::glorot(&[4, 6, 5, 3], Activation::Tanh, Activation::Tanh, &mut rng);
            let x = [0.3, -0.8, 0.5, 0.1];
            let err = grad_check(&net, |p| mse_loss(p, &x, &[0.2, -0.1, 0.4]), 1e-4);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn quadratic_loss_on_linear_net_is_near_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = MlpParams::glorot(&[3, 2], Activation::Identity, Activation::Identity, &mut rng);
        let err = grad_check(&net, |p| mse_loss(p, &[1.0, -2.0, 0.5], &[0.3, 0.1]), 1e-4);
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn constant_loss_reports_zero() {
        let net = MlpParams { layers: vec![Dense::zeros(2, 2, Activation::Tanh)] };
        let err = grad_check(&net, |p| (1.0, p.zeroed()), 1e-4);
        assert_eq!(err, 0.0);
    }

    #[test]
    fn relu_net_is_positively_homogeneous() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = MlpParams::glorot(&[3, 8, 2], Activation::Relu, Activation::Relu, &mut rng);
        let x = [0.4, -1.1, 0.7];
        let a = 2.7;
        let y = mlp_forward(&net, &x).unwrap().0;
        let xa: Vec<f64> = x.iter().map(|v| a * v).collect();
        let ya = mlp_forward(&net, &xa).unwrap().0;
        for (p, q) in y.iter().zip(&ya) {
            assert!((a * p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = MlpParams::glorot(&[2, 3], Activation::Tanh, Activation::Tanh, &mut rng);
        let before = net.clone();
        let mut st = AdamState::new(&net, AdamHyper::default());
        adam_step(&mut net, &before.zeroed(), &mut st).unwrap();
        assert_eq!(net, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut net = MlpParams { layers: vec![Dense::zeros(2, 1, Activation::Identity)] };
        let mut g = net.zeroed();
        g.layers[0].weight = vec![0.5, -2.0];
        g.layers[0].bias = vec![1e-3];
        let hyper = AdamHyper { lr: 0.01, ..AdamHyper::default() };
        let mut st = AdamState::new(&net, hyper);
        adam_step(&mut net, &g, &mut st).unwrap();
        for (p, gi) in net.flatten().iter().zip(g.flatten()) {
            let want = -hyper.lr * gi / (gi.abs() + hyper.eps);
            assert!((p - want).abs() < 1e-15, "{p} vs {want}");
        }
    }

    #[test]
    fn adam_is_deterministic_and_rejects_nan() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = MlpParams::glorot(&[2, 3], Activation::Tanh, Activation::Tanh, &mut rng);
        let mut g = net.clone();
        g.scale(0.1);
        let (mut a, mut b) = (net.clone(), net.clone());
        let (mut sa, mut sb) = (AdamState::new(&net, AdamHyper::default()), AdamState::new(&net, AdamHyper::default()));
        adam_step(&mut a, &g, &mut sa).unwrap();
        adam_step(&mut b, &g, &mut sb).unwrap();
        assert_eq!(a, b);
        g.layers[0].bias[0] = f64::NAN;
        let snapshot = a.clone();
        assert_eq!(adam_step(&mut a, &g, &mut sa), Err(Error::Diverged));
        assert_eq!(a, snapshot);
    }

    #[test]
    fn encoding_values() {
        assert_eq!(positional_encoding(&[0.0], 2).0, vec![0.0, 1.0, 0.0, 1.0]);
        let e = positional_encoding(&[PI / 2.0], 1).0;
        assert!((e[0] - 1.0).abs() < 1e-15 && e[1].abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let s: Vec<f64> = (0..5).map(|_| rng.gen_range(-PI..PI)).collect();
            let enc = positional_encoding(&s, 4);
            assert_eq!(enc.0.len(), 40);
            assert!(enc.0.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}
