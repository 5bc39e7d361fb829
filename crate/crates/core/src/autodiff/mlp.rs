use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, Parameters, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    None,
}

impl Activation {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => super::graph::sigmoid(x),
            Activation::Tanh => x.tanh().clamp(-super::TANH_BOUND, super::TANH_BOUND),
            Activation::None => x,
        }
    }

    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Tanh => g.tanh(x),
            Activation::None => x,
        }
    }
}

/// Layer widths including the input width: `[in, h1, ..., out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, hidden_activation: Activation, output_activation: Activation) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::Config("an MLP needs an input width and at least one layer".into()));
        }
        if layer_widths.contains(&0) {
            return Err(Error::Config(format!("MLP widths must be positive, got {layer_widths:?}")));
        }
        if !matches!(output_activation, Activation::None | Activation::Tanh) {
            return Err(Error::Config("MLP output activation must be none or tanh".into()));
        }
        Ok(MlpSpec {
            layer_widths,
            hidden_activation,
            output_activation,
        })
    }

    /// `input -> hidden x depth -> output` with relu hidden units.
    pub fn relu_net(input: usize, hidden: usize, depth: usize, output: usize) -> Result<Self> {
        let mut widths = vec![input];
        widths.extend(std::iter::repeat_n(hidden, depth));
        widths.push(output);
        Self::new(widths, Activation::Relu, Activation::None)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().expect("validated non-empty")
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }
}

/// Fully connected network. Weights are stored `[in, out]` so a batch
/// `[n, in]` maps to `[n, out]` with a single product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    spec: MlpSpec,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

/// Final-layer initialization half-width; keeps initial outputs near zero.
const FINAL_LAYER_INIT: f64 = 3e-3;

impl Mlp {
    /// Fan-in uniform hidden layers, near-zero final layer.
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Self {
        let n = spec.n_layers();
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        for (l, pair) in spec.layer_widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = if l + 1 == n {
                FINAL_LAYER_INIT
            } else {
                1.0 / (fan_in as f64).sqrt()
            };
            let w = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            weights.push(Tensor::from_vec(fan_in, fan_out, w).expect("init shape"));
            let b = if l + 1 == n {
                (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect()
            } else {
                vec![0.0; fan_out]
            };
            biases.push(Tensor::row_vector(b));
        }
        Mlp { spec, weights, biases }
    }

    pub fn zeros(spec: MlpSpec) -> Self {
        let (weights, biases) = spec
            .layer_widths
            .windows(2)
            .map(|p| (Tensor::zeros(p[0], p[1]), Tensor::zeros(1, p[1])))
            .unzip();
        Mlp { spec, weights, biases }
    }

    /// Builds a network from explicit `[in, out]` weights and `[1, out]` biases.
    pub fn from_parts(spec: MlpSpec, weights: Vec<Tensor>, biases: Vec<Tensor>) -> Result<Self> {
        if weights.len() != spec.n_layers() || biases.len() != spec.n_layers() {
            return Err(Error::shape("Mlp::from_parts layer count", spec.n_layers(), weights.len()));
        }
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            let (i, o) = (spec.layer_widths[l], spec.layer_widths[l + 1]);
            if w.shape() != [i, o] {
                return Err(Error::shape(format!("layer {l} weight"), format!("{:?}", [i, o]), format!("{:?}", w.shape())));
            }
            if b.shape() != [1, o] {
                return Err(Error::shape(format!("layer {l} bias"), format!("{:?}", [1, o]), format!("{:?}", b.shape())));
            }
        }
        Ok(Mlp { spec, weights, biases })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor] {
        &self.biases
    }

    /// Records the forward pass given this network's bound parameters.
    pub fn forward_graph(&self, g: &mut Graph, params: &[Var], input: Var) -> Result<Var> {
        mlp_forward(g, params, &self.spec, input)
    }

    /// Forward pass without gradients. Produces the same values as the
    /// recorded pass.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        let n = self.spec.n_layers();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if x.cols() != w.rows() {
                return Err(Error::shape(format!("mlp layer {l} input"), w.rows(), x.cols()));
            }
            let mut h = super::matmul(&x, w)?;
            let act = if l + 1 == n {
                self.spec.output_activation
            } else {
                self.spec.hidden_activation
            };
            let cols = h.cols();
            for (i, v) in h.data_mut().iter_mut().enumerate() {
                *v = act.eval(*v + b.data()[i % cols]);
            }
            x = h;
        }
        Ok(x)
    }
}

impl Parameters for Mlp {
    fn tensors(&self) -> Vec<&Tensor> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    fn names(&self) -> Vec<String> {
        (0..self.weights.len())
            .flat_map(|l| [format!("layer{l}.weight"), format!("layer{l}.bias")])
            .collect()
    }
}

/// Forward pass through an MLP whose parameters are bound as
/// `[w0, b0, w1, b1, ...]`.
pub fn mlp_forward(g: &mut Graph, params: &[Var], spec: &MlpSpec, input: Var) -> Result<Var> {
    if params.len() != 2 * spec.n_layers() {
        return Err(Error::shape("mlp parameters", 2 * spec.n_layers(), params.len()));
    }
    let mut x = input;
    for l in 0..spec.n_layers() {
        let cols = g.value(x).cols();
        if cols != spec.layer_widths[l] {
            return Err(Error::shape(format!("mlp layer {l} input"), spec.layer_widths[l], cols));
        }
        let h = g.matmul(x, params[2 * l])?;
        let h = g.add(h, params[2 * l + 1])?;
        x = if l + 1 == spec.n_layers() {
            spec.output_activation.apply(g, h)
        } else {
            spec.hidden_activation.apply(g, h)
        };
    }
    Ok(x)
}
