//! Multilayer perceptrons with exact reverse-mode gradients.
//!
//! Weights are stored `[in, out]` so a batch `[B, in]` maps to `[B, out]`
//! by a single right-multiplication. Parameters are kept as a flat list
//! `[W0, b0, W1, b1, ...]`, which is also the order used by optimizers,
//! Polyak averaging and checkpoints.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Gelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Gelu => 0.5 * z * (1.0 + (GELU_C * (z + GELU_K * z * z * z)).tanh()),
        }
    }

    /// Derivative with respect to the pre-activation.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
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
            Activation::Gelu => {
                let inner = GELU_C * (z + GELU_K * z * z * z);
                let t = inner.tanh();
                let dinner = GELU_C * (1.0 + 3.0 * GELU_K * z * z);
                0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * dinner
            }
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl OutputActivation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            OutputActivation::Identity => z,
            OutputActivation::Sigmoid => sigmoid(z),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            OutputActivation::Identity => 1.0,
            OutputActivation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
        }
    }
}

/// Architecture of an MLP, independent of its parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub output: OutputActivation,
    /// Multiplier applied to the uniform init range of the last layer.
    #[serde(default = "one")]
    pub final_layer_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, output: OutputActivation) -> Self {
        Self {
            layer_sizes,
            activation,
            output,
            final_layer_scale: 1.0,
        }
    }

    pub fn with_final_layer_scale(mut self, scale: f64) -> Self {
        self.final_layer_scale = scale;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }
}

/// Parameter gradients in the same flat layout as [`Mlp::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn zeros_like(params: &[Tensor]) -> Self {
        Gradients(params.iter().map(|p| Tensor::zeros(p.shape())).collect())
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_scaled(b, 1.0);
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.0.iter_mut().for_each(|t| t.scale(k));
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|t| t.data().iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Intermediate values from a forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (`activations[0]` is the network input).
    activations: Vec<Tensor>,
    /// Pre-activation of each layer.
    pre: Vec<Tensor>,
}

impl ForwardCache {
    /// Pre-activations of the hidden and output layers.
    pub fn pre_activations(&self) -> &[Tensor] {
        &self.pre
    }
}

/// Gradients from one backward pass.
#[derive(Debug, Clone)]
pub struct Backward {
    pub params: Gradients,
    pub input: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    params: Vec<Tensor>,
}

impl Mlp {
    /// Uniform fan-in initialization, `U(-1/sqrt(in), 1/sqrt(in))` for weights
    /// and biases; the last layer range is multiplied by `final_layer_scale`.
    pub fn new(spec: MlpSpec, rng: &mut impl Rng) -> Result<Self> {
        if spec.layer_sizes.len() < 2 || spec.layer_sizes.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "layer sizes must list at least two positive extents, got {:?}",
                spec.layer_sizes
            )));
        }
        let n_layers = spec.layer_sizes.len() - 1;
        let mut params = Vec::with_capacity(2 * n_layers);
        for (l, w) in spec.layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut bound = 1.0 / (fan_in as f64).sqrt();
            if l + 1 == n_layers {
                bound *= spec.final_layer_scale;
            }
            let mut draw = |n: usize| -> Vec<f64> {
                (0..n)
                    .map(|_| bound * (2.0 * rng.random::<f64>() - 1.0))
                    .collect()
            };
            params.push(Tensor::from_vec(&[fan_in, fan_out], draw(fan_in * fan_out))?);
            params.push(Tensor::from_vec(&[fan_out], draw(fan_out))?);
        }
        Ok(Self { spec, params })
    }

    /// Rebuilds a network from explicit parameter tensors.
    pub fn from_params(spec: MlpSpec, params: Vec<Tensor>) -> Result<Self> {
        let expected: Vec<Vec<usize>> = spec
            .layer_sizes
            .windows(2)
            .flat_map(|w| [vec![w[0], w[1]], vec![w[1]]])
            .collect();
        if params.len() != expected.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for (p, e) in params.iter().zip(&expected) {
            if p.shape() != e.as_slice() {
                return Err(Error::Shape(format!(
                    "parameter shape {:?} does not match {:?}",
                    p.shape(),
                    e
                )));
            }
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn n_layers(&self) -> usize {
        self.params.len() / 2
    }

    pub fn weight(&self, layer: usize) -> &Tensor {
        &self.params[2 * layer]
    }

    pub fn bias(&self, layer: usize) -> &Tensor {
        &self.params[2 * layer + 1]
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.forward_cached(input).map(|(out, _)| out)
    }

    pub fn forward_cached(&self, input: &Tensor) -> Result<(Tensor, ForwardCache)> {
        if input.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "network input must be a [batch, features] matrix, got {:?}",
                input.shape()
            )));
        }
        let batch = input.rows();
        let n_layers = self.n_layers();
        let mut activations = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers);
        let mut current = input.clone();
        for l in 0..n_layers {
            let w = self.weight(l);
            let (fan_in, fan_out) = (w.shape()[0], w.shape()[1]);
            if current.cols() != fan_in {
                return Err(Error::Dimension {
                    context: format!("layer {l} input"),
                    expected: fan_in,
                    found: current.cols(),
                });
            }
            let mut z = Tensor::zeros(&[batch, fan_out]);
            let bias = self.bias(l).data();
            for r in 0..batch {
                z.row_mut(r).copy_from_slice(bias);
            }
            gemm(batch, fan_in, fan_out, current.data(), false, w.data(), false, z.data_mut(), true);
            let a = if l + 1 == n_layers {
                let out = self.spec.output;
                z.map(|v| out.apply(v))
            } else {
                let act = self.spec.activation;
                z.map(|v| act.apply(v))
            };
            activations.push(current);
            pre.push(z);
            current = a;
        }
        Ok((current, ForwardCache { activations, pre }))
    }

    /// Reverse-mode gradients of the scalar loss `sum(upstream * forward(input))`.
    pub fn backward(&self, input: &Tensor, upstream: &Tensor) -> Result<Backward> {
        let (_, cache) = self.forward_cached(input)?;
        self.backward_cached(&cache, upstream)
    }

    pub fn backward_cached(&self, cache: &ForwardCache, upstream: &Tensor) -> Result<Backward> {
        let n_layers = self.n_layers();
        let out_shape = cache.pre[n_layers - 1].shape();
        if upstream.shape() != out_shape {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.shape(),
                out_shape
            )));
        }
        if !upstream.is_finite() {
            return Err(Error::NonFinite("upstream gradient".into()));
        }
        let batch = upstream.rows();
        let mut grads = vec![Tensor::zeros(&[1]); 2 * n_layers];

        let output = self.spec.output;
        let mut delta = upstream.clone();
        for (d, z) in delta.data_mut().iter_mut().zip(cache.pre[n_layers - 1].data()) {
            *d *= output.derivative(*z);
        }
        for l in (0..n_layers).rev() {
            let w = self.weight(l);
            let (fan_in, fan_out) = (w.shape()[0], w.shape()[1]);
            let a_prev = &cache.activations[l];

            let mut dw = Tensor::zeros(&[fan_in, fan_out]);
            gemm(fan_in, batch, fan_out, a_prev.data(), true, delta.data(), false, dw.data_mut(), false);
            let mut db = Tensor::zeros(&[fan_out]);
            for r in 0..batch {
                for (acc, v) in db.data_mut().iter_mut().zip(delta.row(r)) {
                    *acc += v;
                }
            }
            grads[2 * l] = dw;
            grads[2 * l + 1] = db;

            let mut da = Tensor::zeros(&[batch, fan_in]);
            gemm(batch, fan_out, fan_in, delta.data(), false, w.data(), true, da.data_mut(), false);
            if l > 0 {
                let act = self.spec.activation;
                for (d, z) in da.data_mut().iter_mut().zip(cache.pre[l - 1].data()) {
                    *d *= act.derivative(*z);
                }
            }
            delta = da;
        }
        Ok(Backward {
            params: Gradients(grads),
            input: delta,
        })
    }

    /// Order-sensitive hash of the raw parameter bits.
    pub fn checksum(&self) -> u64 {
        checksum(&self.params)
    }
}

/// FNV-1a over the bit patterns of every value.
pub fn checksum(tensors: &[Tensor]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for t in tensors {
        for v in t.data() {
            for byte in v.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear(weights: Vec<f64>, bias: Vec<f64>, fan_in: usize, fan_out: usize) -> Mlp {
        let spec = MlpSpec::new(vec![fan_in, fan_out], Activation::Relu, OutputActivation::Identity);
        Mlp::from_params(
            spec,
            vec![
                Tensor::from_vec(&[fan_in, fan_out], weights).unwrap(),
                Tensor::from_vec(&[fan_out], bias).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = linear(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2, 2);
        let x = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        assert_eq!(net.forward(&x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_weights_broadcast_bias() {
        let net = linear(vec![0.0; 6], vec![0.5, -1.0], 3, 2);
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -4.0, 5.0, 6.0]).unwrap();
        assert_eq!(net.forward(&x).unwrap().data(), &[0.5, -1.0, 0.5, -1.0]);
    }

    #[test]
    fn scalar_linear_gradients() {
        let w = 1.7;
        let net = linear(vec![w], vec![0.0], 1, 1);
        let x = Tensor::from_vec(&[1, 1], vec![0.3]).unwrap();
        let up = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
        let g = net.backward(&x, &up).unwrap();
        assert!((g.params.0[0].data()[0] - 0.3).abs() < 1e-15);
        assert!((g.params.0[1].data()[0] - 1.0).abs() < 1e-15);
        assert!((g.input.data()[0] - w).abs() < 1e-15);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = MlpSpec::new(vec![3, 5, 2], Activation::Tanh, OutputActivation::Sigmoid);
        let net = Mlp::new(spec, &mut rng).unwrap();
        let x = Tensor::from_vec(&[4, 3], (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
        let g = net.backward(&x, &Tensor::zeros(&[4, 2])).unwrap();
        assert_eq!(g.params.max_abs(), 0.0);
        assert!(g.input.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_error_names_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = MlpSpec::new(vec![3, 4, 1], Activation::Relu, OutputActivation::Identity);
        let net = Mlp::new(spec, &mut rng).unwrap();
        let err = net.forward(&Tensor::zeros(&[2, 5])).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }

    #[test]
    fn non_finite_upstream_is_rejected() {
        let net = linear(vec![1.0], vec![0.0], 1, 1);
        let x = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
        let up = Tensor::from_vec(&[1, 1], vec![f64::NAN]).unwrap();
        assert!(matches!(net.backward(&x, &up), Err(Error::NonFinite(_))));
    }

    #[test]
    fn param_count_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = MlpSpec::new(vec![4, 8, 8, 3], Activation::Gelu, OutputActivation::Identity);
        let expected = spec.param_count();
        let net = Mlp::new(spec, &mut rng).unwrap();
        assert_eq!(net.param_count(), expected);
        assert_eq!(expected, 5 * 8 + 9 * 8 + 9 * 3);
    }

    #[test]
    fn final_layer_scale_shrinks_last_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = MlpSpec::new(vec![4, 16, 1], Activation::Relu, OutputActivation::Identity)
            .with_final_layer_scale(1e-3);
        let net = Mlp::new(spec, &mut rng).unwrap();
        let max_last = net.weight(1).data().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(max_last <= 1e-3 / 4.0);
    }
}
