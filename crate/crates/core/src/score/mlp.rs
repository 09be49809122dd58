//! Small fully connected network with one scalar output and hand-written
//! backpropagation.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{domain, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Silu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Silu => z / (1.0 + (-z).exp()),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
        }
    }
}

/// Dense layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    activation: Activation,
}

/// Per-sample activations kept for the backward pass.
#[derive(Debug, Default)]
pub struct Scratch {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl Mlp {
    /// `sizes` lists every width from the input to the scalar output.
    pub fn new(sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(sizes, activation)?;
        for (li, layer) in net.layers.iter_mut().enumerate() {
            let mut rng = stream(seed, domain::INIT, li as u64);
            let scale = (1.0 / layer.inputs as f64).sqrt();
            for w in &mut layer.weights {
                let z: f64 = StandardNormal.sample(&mut rng);
                *w = scale * z;
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Invalid(format!("bad layer sizes {sizes:?}")));
        }
        if sizes[sizes.len() - 1] != 1 {
            return Err(Error::Invalid("network output must be scalar".into()));
        }
        let layers = sizes
            .windows(2)
            .map(|p| Layer { inputs: p[0], outputs: p[1], weights: vec![0.0; p[0] * p[1]], bias: vec![0.0; p[1]] })
            .collect();
        Ok(Self { layers, activation })
    }

    /// Builds a network from explicit layers, checking that widths chain.
    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Invalid("network has no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Format(format!("layer {i} buffers do not match {}x{}", l.outputs, l.inputs)));
            }
            if i > 0 && layers[i - 1].outputs != l.inputs {
                return Err(Error::Format(format!("layer {i} input width does not chain")));
            }
        }
        if layers[layers.len() - 1].outputs != 1 {
            return Err(Error::Format("network output must be scalar".into()));
        }
        Ok(Self { layers, activation })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.params_mut().for_each(|p| *p = 0.0);
        z
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.outputs)).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn forward(&self, x: &[f64], scratch: &mut Scratch) -> f64 {
        debug_assert_eq!(x.len(), self.input_dim());
        let n = self.layers.len();
        scratch.pre.resize_with(n, Vec::new);
        scratch.post.resize_with(n, Vec::new);
        for (li, layer) in self.layers.iter().enumerate() {
            let (before, rest) = scratch.post.split_at_mut(li);
            let input: &[f64] = if li == 0 { x } else { &before[li - 1] };
            let pre = &mut scratch.pre[li];
            pre.clear();
            for o in 0..layer.outputs {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                let dot: f64 = row.iter().zip(input).map(|(w, v)| w * v).sum();
                pre.push(dot + layer.bias[o]);
            }
            let post = &mut rest[0];
            post.clear();
            if li + 1 == n {
                post.extend_from_slice(pre);
            } else {
                post.extend(pre.iter().map(|&z| self.activation.apply(z)));
            }
        }
        scratch.post[n - 1][0]
    }

    /// Adds `d_out * d(output)/d(params)` into `grad`; uses the activations
    /// left in `scratch` by the preceding `forward(x)`.
    pub fn backward(&self, x: &[f64], d_out: f64, scratch: &mut Scratch, grad: &mut Mlp) {
        let n = self.layers.len();
        scratch.delta.clear();
        scratch.delta.push(d_out);
        for li in (0..n).rev() {
            let layer = &self.layers[li];
            let g = &mut grad.layers[li];
            let input: &[f64] = if li == 0 { x } else { &scratch.post[li - 1] };
            scratch.delta_next.clear();
            scratch.delta_next.resize(layer.inputs, 0.0);
            for o in 0..layer.outputs {
                let d = scratch.delta[o];
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = o * layer.inputs..(o + 1) * layer.inputs;
                for (gw, v) in g.weights[row.clone()].iter_mut().zip(input) {
                    *gw += d * v;
                }
                if li > 0 {
                    for (dn, w) in scratch.delta_next.iter_mut().zip(&layer.weights[row]) {
                        *dn += d * w;
                    }
                }
            }
            if li > 0 {
                for (dn, &z) in scratch.delta_next.iter_mut().zip(&scratch.pre[li - 1]) {
                    *dn *= self.activation.derivative(z);
                }
                std::mem::swap(&mut scratch.delta, &mut scratch.delta_next);
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.forward(x, &mut Scratch::default())
    }
}
