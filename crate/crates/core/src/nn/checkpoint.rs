//! Self-describing parameter file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "RIEMCFCK"
//! version    u32
//! header_len u64
//! header     header_len bytes of UTF-8 JSON
//! count      u64
//! values     count × f64 (little-endian)
//! ```
//!
//! The header lists every network (layer widths, activation tags, batch-norm
//! flags) and every extra tensor (name and shape) in the order their values
//! appear in the blob. Per layer the blob holds the weight (row-major), the
//! bias and, for batch-norm layers, scale, shift, running mean, running
//! variance, epsilon and momentum.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::layer::{Activation, BatchNorm, DenseLayer};
use super::net::DenseNet;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RIEMCFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerSpec {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    batch_norm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NetSpec {
    name: String,
    layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorSpec {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
    nets: Vec<NetSpec>,
    tensors: Vec<TensorSpec>,
    meta: serde_json::Value,
}

/// A named free-standing array stored next to the networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn from_matrix(name: &str, m: &Array2<f64>) -> Self {
        Self { name: name.into(), shape: vec![m.nrows(), m.ncols()], values: m.iter().copied().collect() }
    }

    pub fn from_vector(name: &str, v: &Array1<f64>) -> Self {
        Self { name: name.into(), shape: vec![v.len()], values: v.to_vec() }
    }

    pub fn scalar(name: &str, v: f64) -> Self {
        Self { name: name.into(), shape: vec![], values: vec![v] }
    }

    pub fn to_matrix(&self) -> Result<Array2<f64>> {
        match self.shape.as_slice() {
            [r, c] => Array2::from_shape_vec((*r, *c), self.values.clone())
                .map_err(|e| Error::Format(format!("tensor {}: {e}", self.name))),
            _ => Err(Error::Format(format!("tensor {} is not a matrix", self.name))),
        }
    }

    pub fn to_vector(&self) -> Result<Array1<f64>> {
        match self.shape.as_slice() {
            [_] => Ok(Array1::from(self.values.clone())),
            _ => Err(Error::Format(format!("tensor {} is not a vector", self.name))),
        }
    }

    pub fn to_scalar(&self) -> Result<f64> {
        match (self.shape.as_slice(), self.values.as_slice()) {
            ([], [v]) => Ok(*v),
            _ => Err(Error::Format(format!("tensor {} is not a scalar", self.name))),
        }
    }
}

/// In-memory form of a checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub nets: Vec<(String, DenseNet)>,
    pub tensors: Vec<Tensor>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Self { kind: kind.into(), nets: Vec::new(), tensors: Vec::new(), meta: serde_json::Value::Null }
    }

    pub fn net(&self, name: &str) -> Result<&DenseNet> {
        self.nets
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, net)| net)
            .ok_or_else(|| Error::Format(format!("checkpoint has no network {name:?}")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no tensor {name:?}")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut values = Vec::new();
        let mut nets = Vec::new();
        for (name, net) in &self.nets {
            let mut layers = Vec::new();
            for layer in net.layers() {
                layers.push(LayerSpec {
                    inputs: layer.inputs(),
                    outputs: layer.outputs(),
                    activation: layer.activation,
                    batch_norm: layer.batch_norm.is_some(),
                });
                values.extend(layer.weight.iter());
                values.extend(layer.bias.iter());
                if let Some(bn) = &layer.batch_norm {
                    values.extend(bn.gamma.iter());
                    values.extend(bn.beta.iter());
                    values.extend(bn.running_mean.iter());
                    values.extend(bn.running_var.iter());
                    values.push(bn.eps);
                    values.push(bn.momentum);
                }
            }
            nets.push(NetSpec { name: name.clone(), layers });
        }
        let mut tensors = Vec::new();
        for t in &self.tensors {
            let expected: usize = t.shape.iter().product();
            if expected != t.values.len() {
                return Err(Error::Shape(format!("tensor {} has {} values for shape {:?}", t.name, t.values.len(), t.shape)));
            }
            tensors.push(TensorSpec { name: t.name.clone(), shape: t.shape.clone() });
            values.extend(t.values.iter());
        }
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            kind: self.kind.clone(),
            nets,
            tensors,
            meta: self.meta.clone(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(28 + header.len() + 8 * values.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut magic = [0u8; 8];
        cur.read_exact(&mut magic).map_err(|_| Error::Format("truncated magic".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a riemcf checkpoint".into()));
        }
        let version = read_u32(&mut cur)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let header_len = read_u64(&mut cur)? as usize;
        if cur.len() < header_len {
            return Err(Error::Format("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&cur[..header_len])?;
        cur = &cur[header_len..];
        let count = read_u64(&mut cur)? as usize;
        if cur.len() != count * 8 {
            return Err(Error::Format(format!("expected {count} values, found {} bytes", cur.len())));
        }
        let values: Vec<f64> = cur
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut take = Blob { values: &values, pos: 0 };

        let mut nets = Vec::new();
        for spec in header.nets {
            let mut layers = Vec::new();
            for l in spec.layers {
                let weight = Array2::from_shape_vec((l.outputs, l.inputs), take.next(l.outputs * l.inputs)?)
                    .map_err(|e| Error::Format(e.to_string()))?;
                let bias = Array1::from(take.next(l.outputs)?);
                let batch_norm = if l.batch_norm {
                    let gamma = Array1::from(take.next(l.outputs)?);
                    let beta = Array1::from(take.next(l.outputs)?);
                    let running_mean = Array1::from(take.next(l.outputs)?);
                    let running_var = Array1::from(take.next(l.outputs)?);
                    let tail = take.next(2)?;
                    Some(BatchNorm { gamma, beta, running_mean, running_var, eps: tail[0], momentum: tail[1] })
                } else {
                    None
                };
                layers.push(DenseLayer { weight, bias, activation: l.activation, batch_norm });
            }
            nets.push((spec.name, DenseNet::new(layers)?));
        }
        let mut tensors = Vec::new();
        for spec in header.tensors {
            let n: usize = spec.shape.iter().product();
            tensors.push(Tensor { name: spec.name, shape: spec.shape, values: take.next(n)? });
        }
        if take.pos != values.len() {
            return Err(Error::Format("trailing values in checkpoint".into()));
        }
        Ok(Self { kind: header.kind, nets, tensors, meta: header.meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Blob<'a> {
    values: &'a [f64],
    pos: usize,
}

impl Blob<'_> {
    fn next(&mut self, n: usize) -> Result<Vec<f64>> {
        if self.pos + n > self.values.len() {
            return Err(Error::Format("checkpoint blob shorter than its header".into()));
        }
        let out = self.values[self.pos..self.pos + n].to_vec();
        self.pos += n;
        Ok(out)
    }
}

fn read_u32(cur: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b).map_err(|_| Error::Format("truncated header".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(cur: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    cur.read_exact(&mut b).map_err(|_| Error::Format("truncated header".into()))?;
    Ok(u64::from_le_bytes(b))
}
