//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! Batches are row-major: one sample per row. A layer computes
//! `act(x W^T + b)` with `W` stored `out x in`.

mod adam;
mod check;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use check::{grad_check, grad_check_with, GradCheckReport, ParamCoord, ParamKind};

use crate::field::OccDistribution;

/// Lower bound added to the softplus standard-deviation head.
pub const SIGMA_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("forward cache does not match the network: {0}")]
    CacheMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Layer widths and per-layer activations; `activations.len() == dims.len() - 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl Architecture {
    /// `dims` with `hidden` activation on every layer but the last, which is
    /// the identity.
    pub fn stack(dims: &[usize], hidden: Activation) -> Self {
        let n = dims.len().saturating_sub(1);
        let activations = (0..n)
            .map(|i| if i + 1 == n { Activation::Identity } else { hidden })
            .collect();
        Self {
            dims: dims.to_vec(),
            activations,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.dims.len() < 2 {
            return Err(NnError::InvalidArchitecture("need at least input and output widths".into()));
        }
        if self.activations.len() + 1 != self.dims.len() {
            return Err(NnError::InvalidArchitecture(format!(
                "{} activations for {} layers",
                self.activations.len(),
                self.dims.len() - 1
            )));
        }
        if self.dims.contains(&0) {
            return Err(NnError::InvalidArchitecture("zero-width layer".into()));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

/// Weights and biases of a dense stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Per-layer inputs and pre-activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Parameter gradients, shaped like the [`Mlp`] they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }

    /// Elementwise `self += other`. Shapes must match.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight *= s;
            l.bias *= s;
        }
    }
}

impl Mlp {
    /// Uniform fan-in initialisation: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`
    /// for ReLU layers, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` otherwise.
    /// Biases start at zero.
    pub fn new<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Self, NnError> {
        arch.validate()?;
        let layers = arch
            .dims
            .windows(2)
            .zip(&arch.activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = match activation {
                    Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                    _ => 1.0 / (fan_in as f64).sqrt(),
                };
                let weight = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound));
                Layer {
                    weight,
                    bias: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(arch: &Architecture) -> Result<Self, NnError> {
        arch.validate()?;
        Ok(Self {
            layers: arch
                .dims
                .windows(2)
                .zip(&arch.activations)
                .map(|(w, &activation)| Layer {
                    weight: Array2::zeros((w[1], w[0])),
                    bias: Array1::zeros(w[1]),
                    activation,
                })
                .collect(),
        })
    }

    pub fn architecture(&self) -> Architecture {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.weight.nrows()));
        Architecture {
            dims,
            activations: self.layers.iter().map(|l| l.activation).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Zeroes the last layer's weights and bias.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().expect("non-empty");
        last.weight.fill(0.0);
        last.bias.fill(0.0);
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<(), NnError> {
        if x.ncols() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    /// Batched forward pass, keeping what [`Mlp::backward`] needs.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache), NnError> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for l in &self.layers {
            let z = h.dot(&l.weight.t()) + &l.bias;
            let a = z.mapv(|v| l.activation.apply(v));
            inputs.push(h);
            pre.push(z);
            h = a;
        }
        Ok((h, ForwardCache { inputs, pre }))
    }

    /// Forward pass without a cache.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        self.check_input(&x)?;
        let mut h = x.to_owned();
        for l in &self.layers {
            let mut z = h.dot(&l.weight.t()) + &l.bias;
            if l.activation != Activation::Identity {
                z.mapv_inplace(|v| l.activation.apply(v));
            }
            h = z;
        }
        Ok(h)
    }

    /// Single-vector convenience wrapper around [`Mlp::forward`].
    pub fn forward_vec(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache), NnError> {
        let xm = ArrayView2::from_shape((1, x.len()), x).expect("contiguous");
        let (y, cache) = self.forward(xm)?;
        Ok((y.into_raw_vec_and_offset().0, cache))
    }

    /// Reverse-mode gradients of `sum(y * dy)` with respect to every
    /// parameter and to the input.
    pub fn backward(&self, cache: &ForwardCache, dy: ArrayView2<f64>) -> Result<(Gradients, Array2<f64>), NnError> {
        if cache.inputs.len() != self.layers.len() || cache.pre.len() != self.layers.len() {
            return Err(NnError::CacheMismatch(format!(
                "cache has {} layers, network has {}",
                cache.inputs.len(),
                self.layers.len()
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if cache.inputs[i].ncols() != l.weight.ncols() || cache.pre[i].ncols() != l.weight.nrows() {
                return Err(NnError::CacheMismatch(format!("layer {i} shapes differ")));
            }
        }
        let rows = cache.inputs[0].nrows();
        if dy.nrows() != rows || dy.ncols() != self.output_dim() {
            return Err(NnError::ShapeMismatch(format!(
                "output gradient is {}x{}, expected {}x{}",
                dy.nrows(),
                dy.ncols(),
                rows,
                self.output_dim()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = dy.to_owned();
        for (i, l) in self.layers.iter().enumerate().rev() {
            if l.activation != Activation::Identity {
                ndarray::Zip::from(&mut delta)
                    .and(&cache.pre[i])
                    .for_each(|d, &z| *d *= l.activation.derivative(z));
            }
            let gw = delta.t().dot(&cache.inputs[i]);
            let gb = delta.sum_axis(Axis(0));
            let dx = delta.dot(&l.weight);
            grads.push(LayerGrad { weight: gw, bias: gb });
            delta = dx;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    /// All parameters, layer by layer: weights row-major, then biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    /// Inverse of [`Mlp::flatten`] for the given architecture.
    pub fn from_flat(arch: &Architecture, values: &[f64]) -> Result<Self, NnError> {
        let mut net = Mlp::zeros(arch)?;
        if values.len() != net.num_params() {
            return Err(NnError::ShapeMismatch(format!(
                "{} values for {} parameters",
                values.len(),
                net.num_params()
            )));
        }
        let mut it = values.iter();
        for l in &mut net.layers {
            for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *w = *it.next().expect("length checked");
            }
        }
        Ok(net)
    }

    pub(crate) fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            let nw = l.weight.len();
            if index < nw {
                return &mut l.weight.as_slice_mut().expect("standard layout")[index];
            }
            index -= nw;
            let nb = l.bias.len();
            if index < nb {
                return &mut l.bias[index];
            }
            index -= nb;
        }
        panic!("parameter index out of range")
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

/// `mu + sigma * eps`; the sample is differentiable with
/// `d/dmu = 1` and `d/dsigma = eps`.
pub fn reparam_sample(dist: &OccDistribution, eps: f64) -> f64 {
    dist.mu + dist.sigma * eps
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Standard deviation from a raw network output: `softplus(raw) + SIGMA_FLOOR`.
pub fn sigma_from_raw(raw: f64) -> f64 {
    softplus(raw) + SIGMA_FLOOR
}

/// Derivative of [`sigma_from_raw`].
pub fn sigma_from_raw_grad(raw: f64) -> f64 {
    crate::field::sigmoid(raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_net(dims: &[usize], act: Activation, seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Mlp::new(&Architecture::stack(dims, act), &mut rng).unwrap();
        for l in &mut net.layers {
            l.bias.mapv_inplace(|_| rng.random_range(-0.3..0.3));
        }
        net
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut net = Mlp::zeros(&Architecture::stack(&[3, 3], Activation::Identity)).unwrap();
        net.layers[0].weight = Array2::eye(3);
        let (y, _) = net.forward_vec(&[1.0, -2.0, 3.5]).unwrap();
        assert_eq!(y, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn relu_zeroes_negative_entries() {
        let mut net = Mlp::zeros(&Architecture {
            dims: vec![3, 3],
            activations: vec![Activation::Relu],
        })
        .unwrap();
        net.layers[0].weight = Array2::eye(3);
        let (y, _) = net.forward_vec(&[1.0, -2.0, 3.5]).unwrap();
        assert_eq!(y, vec![1.0, 0.0, 3.5]);
    }

    #[test]
    fn forward_matches_straight_line_evaluation() {
        let net = random_net(&[4, 5, 2], Activation::Tanh, 3);
        let x = [0.3, -0.7, 1.1, 0.05];
        let (y, _) = net.forward_vec(&x).unwrap();
        // hand-rolled loops, no ndarray products
        let mut h: Vec<f64> = x.to_vec();
        for l in &net.layers {
            let mut next = vec![0.0; l.weight.nrows()];
            for (o, out) in next.iter_mut().enumerate() {
                let mut s = l.bias[o];
                for (i, hi) in h.iter().enumerate() {
                    s += l.weight[[o, i]] * hi;
                }
                *out = l.activation.apply(s);
            }
            h = next;
        }
        for (a, b) in y.iter().zip(&h) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_backward_is_outer_product() {
        let net = random_net(&[3, 2], Activation::Identity, 1);
        let x = array![[0.5, -1.0, 2.0]];
        let dy = array![[1.5, -0.25]];
        let (_, cache) = net.forward(x.view()).unwrap();
        let (g, dx) = net.backward(&cache, dy.view()).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(g.layers[0].weight[[o, i]], dy[[0, o]] * x[[0, i]]);
            }
        }
        assert_eq!(g.layers[0].bias, array![1.5, -0.25]);
        let expect_dx = dy.dot(&net.layers[0].weight);
        assert_eq!(dx, expect_dx);
    }

    #[test]
    fn zero_output_gradient_gives_zero_grads() {
        let net = random_net(&[4, 8, 8, 2], Activation::Relu, 2);
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i as f64 - j as f64) * 0.3);
        let (_, cache) = net.forward(x.view()).unwrap();
        let (g, dx) = net.backward(&cache, Array2::zeros((5, 2)).view()).unwrap();
        assert!(g.iter().all(|v| v == 0.0));
        assert!(dx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mismatches_are_reported() {
        let a = random_net(&[4, 8, 2], Activation::Relu, 2);
        let b = random_net(&[4, 8, 8, 2], Activation::Relu, 2);
        assert!(matches!(a.forward_vec(&[1.0, 2.0]), Err(NnError::DimensionMismatch { expected: 4, got: 2 })));
        let (_, cache) = b.forward_vec(&[0.0; 4]).unwrap();
        assert!(matches!(a.backward(&cache, Array2::zeros((1, 2)).view()), Err(NnError::CacheMismatch(_))));
        let (_, cache) = a.forward_vec(&[0.0; 4]).unwrap();
        assert!(matches!(a.backward(&cache, Array2::zeros((1, 3)).view()), Err(NnError::ShapeMismatch(_))));
    }

    #[test]
    fn flatten_round_trip() {
        let net = random_net(&[7, 16, 2], Activation::Relu, 9);
        let back = Mlp::from_flat(&net.architecture(), &net.flatten()).unwrap();
        assert_eq!(net, back);
        assert_eq!(net.num_params(), net.architecture().num_params());
    }

    #[test]
    fn reparam_examples() {
        let d = OccDistribution::new(0.5, 0.6).unwrap();
        assert_eq!(reparam_sample(&d, 0.0), 0.5);
        assert!((reparam_sample(&d, 1.0) - 1.1).abs() < 1e-15);
    }

    #[test]
    fn reparam_statistics() {
        let d = OccDistribution::new(0.3, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| reparam_sample(&d, rng.sample(StandardNormal))).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((mean - 0.3).abs() / 0.3 < 0.01);
        assert!((sd - 0.2).abs() / 0.2 < 0.01);
    }

    #[test]
    fn reparam_gradient_matches_fd() {
        let eps = 0.8;
        let (mu, sigma, h) = (0.4, 0.3, 1e-6);
        let f = |m: f64, s: f64| reparam_sample(&OccDistribution { mu: m, sigma: s }, eps);
        assert!(((f(mu + h, sigma) - f(mu - h, sigma)) / (2.0 * h) - 1.0).abs() < 1e-8);
        assert!(((f(mu, sigma + h) - f(mu, sigma - h)) / (2.0 * h) - eps).abs() < 1e-8);
    }

    #[test]
    fn sigma_head_is_positive_and_differentiable() {
        for raw in [-800.0, -40.0, -3.0, 0.0, 2.0, 50.0, 800.0] {
            let s = sigma_from_raw(raw);
            assert!(s >= SIGMA_FLOOR && s.is_finite(), "{raw}");
        }
        for raw in [-3.0, -0.2, 0.0, 1.7] {
            let h = 1e-6;
            let fd = (sigma_from_raw(raw + h) - sigma_from_raw(raw - h)) / (2.0 * h);
            assert!((fd - sigma_from_raw_grad(raw)).abs() < 1e-8);
        }
    }
}
