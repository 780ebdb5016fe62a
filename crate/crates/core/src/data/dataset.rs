use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Tensor};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub name: String,
    pub kind: FeatureKind,
    pub immutable: bool,
    pub log_transformed: bool,
    /// Train-split minimum and maximum (after any log transform); unset
    /// until the dataset is split.
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl FeatureDescriptor {
    pub fn continuous(name: &str) -> Self {
        Self { name: name.into(), kind: FeatureKind::Continuous, immutable: false, log_transformed: false, min: None, max: None }
    }

    pub fn binary(name: &str) -> Self {
        Self { kind: FeatureKind::Binary, ..Self::continuous(name) }
    }

    pub fn immutable(mut self) -> Self {
        self.immutable = true;
        self
    }

    pub fn logged(mut self) -> Self {
        self.log_transformed = true;
        self
    }
}

/// Rows after feature encoding (and log transforms) but before scaling.
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub name: String,
    pub features: Vec<FeatureDescriptor>,
    pub x: Array2<f64>,
    pub y: Vec<u8>,
    /// Input rows dropped by the loader (missing or unmappable values).
    pub rejected: usize,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn positive_rate(&self) -> f64 {
        self.y.iter().filter(|&&v| v == 1).count() as f64 / self.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Normalized rows of one split. Every value lies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub name: String,
    pub features: Vec<FeatureDescriptor>,
    pub x: Array2<f64>,
    pub y: Vec<u8>,
    pub split: Split,
}

impl TabularDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn positive_rate(&self) -> f64 {
        self.y.iter().filter(|&&v| v == 1).count() as f64 / self.len().max(1) as f64
    }

    /// Indicator per column: is the feature immutable.
    pub fn immutable_mask(&self) -> Vec<bool> {
        self.features.iter().map(|f| f.immutable).collect()
    }

    /// Names of the immutable features.
    pub fn immutable_names(&self) -> Vec<&str> {
        self.features.iter().filter(|f| f.immutable).map(|f| f.name.as_str()).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn normalizer(&self) -> Result<Normalizer> {
        Normalizer::from_features(&self.features)
    }

    pub fn rows_with_label(&self, label: u8) -> Vec<usize> {
        self.y.iter().enumerate().filter(|(_, &v)| v == label).map(|(i, _)| i).collect()
    }

    pub fn subset(&self, rows: &[usize]) -> TabularDataset {
        TabularDataset {
            name: self.name.clone(),
            features: self.features.clone(),
            x: self.x.select(Axis(0), rows),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            split: self.split,
        }
    }

    /// Writes `<stem>.schema.json` and `<stem>.bin` (checkpoint blob format).
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let schema = serde_json::json!({
            "name": self.name,
            "split": self.split,
            "rows": self.len(),
            "features": self.features,
        });
        std::fs::write(dir.join(format!("{stem}.schema.json")), serde_json::to_vec_pretty(&schema)?)?;
        let mut ck = Checkpoint::new("dataset");
        ck.tensors.push(Tensor::from_matrix("x", &self.x));
        ck.tensors.push(Tensor::from_vector("y", &Array1::from_iter(self.y.iter().map(|&v| f64::from(v)))));
        ck.meta = schema;
        ck.save(&dir.join(format!("{stem}.bin")))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let ck = Checkpoint::load(&dir.join(format!("{stem}.bin")))?;
        ck.expect_kind("dataset")?;
        let meta = &ck.meta;
        let features: Vec<FeatureDescriptor> = serde_json::from_value(meta["features"].clone())?;
        let split: Split = serde_json::from_value(meta["split"].clone())?;
        let name = meta["name"].as_str().unwrap_or_default().to_string();
        let x = ck.tensor("x")?.to_matrix()?;
        let y = ck.tensor("y")?.values.iter().map(|&v| v as u8).collect();
        Ok(Self { name, features, x, y, split })
    }
}

/// Per-feature min-max scaling fitted on the train split.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    pub fn fit(x: &Array2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Config("cannot fit a normalizer on zero rows".into()));
        }
        let min = x.fold_axis(Axis(0), f64::INFINITY, |m, v| m.min(*v)).to_vec();
        let max = x.fold_axis(Axis(0), f64::NEG_INFINITY, |m, v| m.max(*v)).to_vec();
        Ok(Self { min, max })
    }

    pub fn from_features(features: &[FeatureDescriptor]) -> Result<Self> {
        let mut min = Vec::new();
        let mut max = Vec::new();
        for f in features {
            match (f.min, f.max) {
                (Some(a), Some(b)) => {
                    min.push(a);
                    max.push(b);
                }
                _ => return Err(Error::State(format!("feature {} has no normalization parameters", f.name))),
            }
        }
        Ok(Self { min, max })
    }

    fn scale_one(&self, j: usize, v: f64) -> f64 {
        let range = self.max[j] - self.min[j];
        if range > 0.0 {
            (v - self.min[j]) / range
        } else {
            0.0
        }
    }

    /// Scales `x` and clamps to `[0, 1]`; returns the number of clamped
    /// entries.
    pub fn apply(&self, x: &Array2<f64>) -> (Array2<f64>, usize) {
        let mut clamped = 0;
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                let s = self.scale_one(j, *v);
                if !(0.0..=1.0).contains(&s) {
                    clamped += 1;
                }
                *v = s.clamp(0.0, 1.0);
            }
        }
        (out, clamped)
    }

    /// Maps normalized values back to the encoded feature scale.
    pub fn invert(&self, x: ArrayView1<f64>) -> Array1<f64> {
        Array1::from_iter(x.iter().enumerate().map(|(j, v)| self.min[j] + v * (self.max[j] - self.min[j])))
    }

    pub fn invert_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            let raw = self.invert(row.view());
            row.assign(&raw);
        }
        out
    }
}

/// Result of [`split`].
#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub train: TabularDataset,
    pub test: TabularDataset,
    /// Test entries that fell outside the train range and were clamped.
    pub clamped: usize,
}

/// Seeded 75/25 train/test split with min-max scaling fitted on the train
/// rows only.
pub fn split(raw: &RawDataset, seed: u64) -> Result<SplitOutcome> {
    let n = raw.len();
    if n < 4 {
        return Err(Error::Config(format!("need at least 4 rows to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed));
    let n_train = (n * 3).div_ceil(4);
    let (train_idx, test_idx) = order.split_at(n_train);
    let mut train_idx = train_idx.to_vec();
    let mut test_idx = test_idx.to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let x_train = raw.x.select(Axis(0), &train_idx);
    let x_test = raw.x.select(Axis(0), &test_idx);
    let norm = Normalizer::fit(&x_train)?;
    let (x_train, _) = norm.apply(&x_train);
    let (x_test, clamped) = norm.apply(&x_test);

    let features: Vec<FeatureDescriptor> = raw
        .features
        .iter()
        .enumerate()
        .map(|(j, f)| FeatureDescriptor { min: Some(norm.min[j]), max: Some(norm.max[j]), ..f.clone() })
        .collect();
    let make = |x, idx: &[usize], split| TabularDataset {
        name: raw.name.clone(),
        features: features.clone(),
        x,
        y: idx.iter().map(|&i| raw.y[i]).collect(),
        split,
    };
    Ok(SplitOutcome { train: make(x_train, &train_idx, Split::Train), test: make(x_test, &test_idx, Split::Test), clamped })
}

/// Reads a headered CSV into name → column-index form.
pub(crate) fn header_index(headers: &csv::StringRecord) -> BTreeMap<String, usize> {
    headers.iter().enumerate().map(|(i, h)| (h.trim().to_string(), i)).collect()
}
