use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Rmsprop { decay: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn rmsprop() -> Self {
        OptimizerKind::Rmsprop { decay: 0.99, eps: 1e-8 }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "adam" => Ok(Self::adam()),
            "rmsprop" => Ok(Self::rmsprop()),
            other => Err(Error::Config(format!("unknown optimizer {other:?} (expected adam or rmsprop)"))),
        }
    }
}

/// Moment accumulators for a fixed list of parameter tensors. The shapes
/// are taken from the first step and checked on every later one.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Weight decay: `λθ` is added to every gradient.
    pub l2: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, l2: f64) -> Self {
        Self { kind, learning_rate, l2, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return shape_err(format!("{} parameter tensors but {} gradients", params.len(), grads.len()));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return shape_err(format!("tensor {k}: {} parameters but {} gradients", p.len(), g.len()));
            }
        }
        if self.step == 0 && self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = params.iter().map(|p| vec![0.0; p.len()]).collect();
        } else if self.second.len() != params.len()
            || self.second.iter().zip(&params).any(|(s, p)| s.len() != p.len())
        {
            return shape_err("parameter shapes changed between optimizer steps");
        }
        self.step += 1;
        let lr = self.learning_rate;
        let l2 = self.l2;
        match self.kind {
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    for i in 0..p.len() {
                        let gi = g[i] + l2 * p[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                        let mh = m[i] / c1;
                        let vh = v[i] / c2;
                        p[i] -= lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
            OptimizerKind::Rmsprop { decay, eps } => {
                for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.second) {
                    for i in 0..p.len() {
                        let gi = g[i] + l2 * p[i];
                        v[i] = decay * v[i] + (1.0 - decay) * gi * gi;
                        p[i] -= lr * gi / (v[i].sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
