use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Softplus,
    Identity,
}

impl Activation {
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => a.tanh(),
            Activation::Sigmoid => sigmoid(a),
            Activation::Softplus => softplus(a),
            Activation::Identity => a,
        }
    }

    /// Derivative at pre-activation `a` whose image is `out`.
    pub fn derivative(self, a: f64, out: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - out * out,
            Activation::Sigmoid => out * (1.0 - out),
            Activation::Softplus => sigmoid(a),
            Activation::Identity => 1.0,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Softplus => "softplus",
            Activation::Identity => "identity",
        }
    }
}

pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

/// Per-feature batch normalization. Inference uses the running statistics,
/// which makes the layer an affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    /// Inference-mode slope `gamma / sqrt(var + eps)` per feature.
    pub fn scale(&self) -> Array1<f64> {
        ndarray::Zip::from(&self.gamma)
            .and(&self.running_var)
            .map_collect(|g, v| g / (v + self.eps).sqrt())
    }

    pub fn infer(&self, a: f64, i: usize) -> f64 {
        (a - self.running_mean[i]) / (self.running_var[i] + self.eps).sqrt() * self.gamma[i]
            + self.beta[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out × in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
    pub batch_norm: Option<BatchNorm>,
}

impl DenseLayer {
    /// Uniform(-1/sqrt(in), 1/sqrt(in)) initialization for weights and bias.
    pub fn init(inputs: usize, outputs: usize, activation: Activation, batch_norm: bool, rng: &mut Rng) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let weight = Array2::from_shape_fn((outputs, inputs), |_| rng.random_range(-bound..bound));
        let bias = Array1::from_shape_fn(outputs, |_| rng.random_range(-bound..bound));
        Self {
            weight,
            bias,
            activation,
            batch_norm: batch_norm.then(|| BatchNorm::new(outputs)),
        }
    }

    pub fn from_parts(weight: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Self {
        Self { weight, bias, activation, batch_norm: None }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len() + self.batch_norm.as_ref().map_or(0, |b| 2 * b.gamma.len())
    }

    /// Pre-activation after the (inference) batch norm, for a batch `n × in`.
    pub(crate) fn preactivate_batch(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut a = x.dot(&self.weight.t());
        a += &self.bias.view().insert_axis(Axis(0));
        if let Some(bn) = &self.batch_norm {
            for mut row in a.rows_mut() {
                for (i, v) in row.iter_mut().enumerate() {
                    *v = bn.infer(*v, i);
                }
            }
        }
        a
    }
}

/// Parameter gradients of one layer, same shapes as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub gamma: Option<Array1<f64>>,
    pub beta: Option<Array1<f64>>,
}
