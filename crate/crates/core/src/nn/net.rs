use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::layer::{Activation, DenseLayer, LayerGrads};
use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for batch norm, running statistics updated, and the
    /// activations cached for [`DenseNet::backprop`].
    Train,
    /// Running statistics only; pure.
    Infer,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    pre: Array2<f64>,
    output: Array2<f64>,
    bn: Option<BnCache>,
}

/// A chain of dense layers.
#[derive(Debug, Clone)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
    cache: Option<Vec<LayerCache>>,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Gradients for every parameter of a [`DenseNet`], layer by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

impl Gradients {
    /// Flat views in the same order as [`DenseNet::params_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.push(g.weight.as_slice().expect("standard layout"));
            out.push(g.bias.as_slice().expect("standard layout"));
            if let (Some(gamma), Some(beta)) = (&g.gamma, &g.beta) {
                out.push(gamma.as_slice().expect("standard layout"));
                out.push(beta.as_slice().expect("standard layout"));
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

impl DenseNet {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return shape_err(format!(
                    "layer {k} has {} outputs but layer {} expects {} inputs",
                    pair[0].outputs(),
                    k + 1,
                    pair[1].inputs()
                ));
            }
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.outputs() {
                return shape_err(format!("layer {k}: bias length {} != {}", layer.bias.len(), layer.outputs()));
            }
            if let Some(bn) = &layer.batch_norm {
                let w = layer.outputs();
                if bn.gamma.len() != w || bn.beta.len() != w || bn.running_mean.len() != w || bn.running_var.len() != w {
                    return shape_err(format!("layer {k}: batch norm width mismatch"));
                }
                if bn.running_var.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::Config(format!("layer {k}: batch norm running variance must be positive")));
                }
            }
        }
        Ok(Self { layers, cache: None })
    }

    /// Fully connected stack `widths[0] → widths[1] → … → widths[n]`. Hidden
    /// layers use `hidden` (with optional batch norm); the last uses `output`
    /// without batch norm.
    pub fn mlp(widths: &[usize], hidden: Activation, output: Activation, batch_norm: bool, rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config("an MLP needs at least input and output widths".into()));
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                if k == last {
                    DenseLayer::init(w[0], w[1], output, false, rng)
                } else {
                    DenseLayer::init(w[0], w[1], hidden, batch_norm, rng)
                }
            })
            .collect();
        Self::new(layers)
    }

    /// Like [`DenseNet::mlp`] but every layer, including the last, uses the
    /// hidden activation and batch norm.
    pub fn mlp_all_hidden(widths: &[usize], activation: Activation, batch_norm: bool, rng: &mut Rng) -> Result<Self> {
        let layers = widths
            .windows(2)
            .map(|w| DenseLayer::init(w[0], w[1], activation, batch_norm, rng))
            .collect();
        Self::new(layers)
    }

    /// `other ∘ self`.
    pub fn then(&self, other: &DenseNet) -> Result<DenseNet> {
        let mut layers = self.layers.clone();
        layers.extend(other.layers.iter().cloned());
        DenseNet::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    /// Flat mutable views of every trainable parameter: per layer weight,
    /// bias, then batch-norm scale and shift.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            out.push(layer.weight.as_slice_mut().expect("standard layout"));
            out.push(layer.bias.as_slice_mut().expect("standard layout"));
            if let Some(bn) = &mut layer.batch_norm {
                out.push(bn.gamma.as_slice_mut().expect("standard layout"));
                out.push(bn.beta.as_slice_mut().expect("standard layout"));
            }
        }
        out
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.push(layer.weight.as_slice().expect("standard layout"));
            out.push(layer.bias.as_slice().expect("standard layout"));
            if let Some(bn) = &layer.batch_norm {
                out.push(bn.gamma.as_slice().expect("standard layout"));
                out.push(bn.beta.as_slice().expect("standard layout"));
            }
        }
        out
    }

    fn check_input(&self, n: usize) -> Result<()> {
        if n != self.input_dim() {
            return shape_err(format!("input has length {n}, network expects {}", self.input_dim()));
        }
        Ok(())
    }

    /// Inference-mode forward pass of a single input.
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_input(x.len())?;
        let mut h = x.to_owned();
        for layer in &self.layers {
            let mut a = layer.weight.dot(&h);
            a += &layer.bias;
            if let Some(bn) = &layer.batch_norm {
                for (i, v) in a.iter_mut().enumerate() {
                    *v = bn.infer(*v, i);
                }
            }
            a.mapv_inplace(|v| layer.activation.apply(v));
            h = a;
        }
        Ok(h)
    }

    /// Output and exact Jacobian (`out × in`) at `x`, accumulated forward
    /// through the layers. Batch norm contributes its inference-mode slope.
    pub fn forward_with_jacobian(&self, x: ArrayView1<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        self.check_input(x.len())?;
        let mut h = x.to_owned();
        let mut jac: Option<Array2<f64>> = None;
        for layer in &self.layers {
            let mut a = layer.weight.dot(&h);
            a += &layer.bias;
            let mut j = match &jac {
                None => layer.weight.clone(),
                Some(prev) => layer.weight.dot(prev),
            };
            if let Some(bn) = &layer.batch_norm {
                let scale = bn.scale();
                for (i, v) in a.iter_mut().enumerate() {
                    *v = bn.infer(*v, i);
                }
                for (mut row, s) in j.rows_mut().into_iter().zip(scale.iter()) {
                    row *= *s;
                }
            }
            let out = a.mapv(|v| layer.activation.apply(v));
            if layer.activation != Activation::Identity {
                for (i, mut row) in j.rows_mut().into_iter().enumerate() {
                    row *= layer.activation.derivative(a[i], out[i]);
                }
            }
            h = out;
            jac = Some(j);
        }
        Ok((h, jac.expect("at least one layer")))
    }

    pub fn jacobian(&self, x: ArrayView1<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_with_jacobian(x)?.1)
    }

    /// Inference-mode forward pass of a batch (`n × in`).
    pub fn infer_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut h = x.to_owned();
        for layer in &self.layers {
            let mut a = layer.preactivate_batch(&h);
            a.mapv_inplace(|v| layer.activation.apply(v));
            h = a;
        }
        Ok(h)
    }

    /// Batch forward pass. In [`Mode::Train`] batch norm uses batch statistics,
    /// running statistics are updated and activations are kept for
    /// [`DenseNet::backprop`].
    pub fn forward_batch(&mut self, x: ArrayView2<f64>, mode: Mode) -> Result<Array2<f64>> {
        if mode == Mode::Infer {
            return self.infer_batch(x);
        }
        self.check_input(x.ncols())?;
        let n = x.nrows();
        if n == 0 {
            return shape_err("empty batch");
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for layer in &mut self.layers {
            let mut a = h.dot(&layer.weight.t());
            a += &layer.bias.view().insert_axis(Axis(0));
            let bn_cache = match &mut layer.batch_norm {
                None => None,
                Some(bn) => {
                    let mean = a.mean_axis(Axis(0)).expect("non-empty batch");
                    let centered = &a - &mean.view().insert_axis(Axis(0));
                    let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
                    let inv_std = var.mapv(|v| 1.0 / (v + bn.eps).sqrt());
                    let xhat = &centered * &inv_std.view().insert_axis(Axis(0));
                    a = &xhat * &bn.gamma.view().insert_axis(Axis(0)) + &bn.beta.view().insert_axis(Axis(0));
                    let m = bn.momentum;
                    let unbias = if n > 1 { n as f64 / (n as f64 - 1.0) } else { 1.0 };
                    bn.running_mean.zip_mut_with(&mean, |r, b| *r = (1.0 - m) * *r + m * b);
                    bn.running_var.zip_mut_with(&var, |r, b| *r = (1.0 - m) * *r + m * b * unbias);
                    Some(BnCache { xhat, inv_std })
                }
            };
            let out = a.mapv(|v| layer.activation.apply(v));
            caches.push(LayerCache { input: h, pre: a, output: out.clone(), bn: bn_cache });
            h = out;
        }
        self.cache = Some(caches);
        Ok(h)
    }

    /// Gradients of a scalar batch loss given `upstream = ∂loss/∂output`
    /// (`n × out`), plus `∂loss/∂input`. Needs a preceding train-mode
    /// forward pass on the same batch.
    pub fn backprop(&self, upstream: ArrayView2<f64>) -> Result<(Gradients, Array2<f64>)> {
        let caches = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("backprop called before a train-mode forward pass".into()))?;
        let n = caches[0].input.nrows();
        if upstream.nrows() != n || upstream.ncols() != self.output_dim() {
            return shape_err(format!(
                "upstream gradient is {}x{}, expected {}x{}",
                upstream.nrows(),
                upstream.ncols(),
                n,
                self.output_dim()
            ));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.to_owned();
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            let act = layer.activation;
            if act != Activation::Identity {
                ndarray::Zip::from(&mut delta)
                    .and(&cache.pre)
                    .and(&cache.output)
                    .for_each(|d, &a, &o| *d *= act.derivative(a, o));
            }
            let (d_a, gamma_grad, beta_grad) = match (&layer.batch_norm, &cache.bn) {
                (Some(bn), Some(bc)) => {
                    let beta_grad = delta.sum_axis(Axis(0));
                    let gamma_grad = (&delta * &bc.xhat).sum_axis(Axis(0));
                    let d_xhat = &delta * &bn.gamma.view().insert_axis(Axis(0));
                    let sum_dx = d_xhat.sum_axis(Axis(0));
                    let sum_dx_xhat = (&d_xhat * &bc.xhat).sum_axis(Axis(0));
                    let nf = n as f64;
                    let mut d_a = d_xhat * nf;
                    d_a -= &sum_dx.view().insert_axis(Axis(0));
                    d_a -= &(&bc.xhat * &sum_dx_xhat.view().insert_axis(Axis(0)));
                    d_a *= &(&bc.inv_std / nf).view().insert_axis(Axis(0));
                    (d_a, Some(gamma_grad), Some(beta_grad))
                }
                _ => (delta, None, None),
            };
            let weight = d_a.t().dot(&cache.input).as_standard_layout().into_owned();
            let bias = d_a.sum_axis(Axis(0));
            let next = d_a.dot(&layer.weight);
            grads.push(LayerGrads { weight, bias, gamma: gamma_grad, beta: beta_grad });
            delta = next;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}
