use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::training::{balanced_accuracy, epoch_batches, gather};
use crate::data::TabularDataset;
use crate::error::{shape_err, Error, Result};
use crate::nn::{sigmoid, Activation, Checkpoint, DenseNet, Mode, OptimizerKind, OptimizerState, Tensor};
use crate::rng::seeded;

/// `c(x) = sigmoid(wᵀ h(x) + b)` with representation network `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub representation: DenseNet,
    pub head_weight: Array1<f64>,
    pub head_bias: f64,
}

impl ClassifierModel {
    pub fn new(representation: DenseNet, head_weight: Array1<f64>, head_bias: f64) -> Result<Self> {
        if head_weight.len() != representation.output_dim() {
            return shape_err(format!(
                "head has {} weights but the representation has {} outputs",
                head_weight.len(),
                representation.output_dim()
            ));
        }
        Ok(Self { representation, head_weight, head_bias })
    }

    pub fn input_dim(&self) -> usize {
        self.representation.input_dim()
    }

    pub fn representation_dim(&self) -> usize {
        self.representation.output_dim()
    }

    pub fn representation(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.representation.forward(x)
    }

    pub fn logit(&self, x: ArrayView1<f64>) -> Result<f64> {
        Ok(self.head_weight.dot(&self.representation(x)?) + self.head_bias)
    }

    /// Probability of the positive class.
    pub fn classify(&self, x: ArrayView1<f64>) -> Result<f64> {
        Ok(sigmoid(self.logit(x)?))
    }

    pub fn classify_batch(&self, x: ndarray::ArrayView2<f64>) -> Result<Array1<f64>> {
        let h = self.representation.infer_batch(x)?;
        Ok((h.dot(&self.head_weight) + self.head_bias).mapv(sigmoid))
    }

    /// Logit, its gradient with respect to `x`, and the representation
    /// Jacobian `J_h(x)` (`H × D`).
    pub fn logit_with_jacobian(&self, x: ArrayView1<f64>) -> Result<(f64, Array1<f64>, Array2<f64>)> {
        let (h, jac) = self.representation.forward_with_jacobian(x)?;
        let logit = self.head_weight.dot(&h) + self.head_bias;
        let grad = jac.t().dot(&self.head_weight);
        Ok((logit, grad, jac))
    }

    pub fn predict(&self, x: ndarray::ArrayView2<f64>) -> Result<Vec<u8>> {
        Ok(self.classify_batch(x)?.iter().map(|&p| u8::from(p >= 0.5)).collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new("classifier");
        ck.nets.push(("representation".into(), self.representation.clone()));
        ck.tensors.push(Tensor::from_vector("head_weight", &self.head_weight));
        ck.tensors.push(Tensor::scalar("head_bias", self.head_bias));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("classifier")?;
        Self::new(
            ck.net("representation")?.clone(),
            ck.tensor("head_weight")?.to_vector()?,
            ck.tensor("head_bias")?.to_scalar()?,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// Representation size `H`; the hidden widths are `2H, 2H, H, H`.
    pub representation_dim: usize,
    pub batch_norm: bool,
    pub learning_rate: f64,
    pub l2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: String,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            representation_dim: 24,
            batch_norm: true,
            learning_rate: 1e-5,
            l2: 0.05,
            epochs: 20,
            batch_size: 1024,
            optimizer: "rmsprop".into(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub train_balanced_accuracy: f64,
    pub test_balanced_accuracy: Option<f64>,
}

/// Trains `c` with binary cross-entropy. Returns the model and one log row
/// per epoch (epoch 0 is the untrained model).
pub fn train_classifier(
    train: &TabularDataset,
    test: Option<&TabularDataset>,
    config: &ClassifierConfig,
) -> Result<(ClassifierModel, Vec<ClassifierEpoch>)> {
    let positives = train.y.iter().filter(|&&v| v == 1).count();
    if positives == 0 || positives == train.len() {
        return Err(Error::Config("classifier training data contains a single class".into()));
    }
    if config.representation_dim == 0 || config.batch_size == 0 {
        return Err(Error::Config("representation size and batch size must be positive".into()));
    }
    let h = config.representation_dim;
    let mut rng = seeded(config.seed);
    let representation =
        DenseNet::mlp_all_hidden(&[train.dim(), 2 * h, 2 * h, h, h], Activation::Tanh, config.batch_norm, &mut rng)?;
    let bound = 1.0 / (h as f64).sqrt();
    let head_weight = Array1::from_shape_fn(h, |_| rng.random_range(-bound..bound));
    let head_bias = rng.random_range(-bound..bound);
    let mut model = ClassifierModel::new(representation, head_weight, head_bias)?;
    let mut opt = OptimizerState::new(OptimizerKind::by_name(&config.optimizer)?, config.learning_rate, config.l2);

    let evaluate = |m: &ClassifierModel, d: &TabularDataset| -> Result<f64> {
        Ok(balanced_accuracy(&m.predict(d.x.view())?, &d.y))
    };
    let mut log = vec![ClassifierEpoch {
        epoch: 0,
        loss: bce_full(&model, train)?,
        train_balanced_accuracy: evaluate(&model, train)?,
        test_balanced_accuracy: test.map(|t| evaluate(&model, t)).transpose()?,
    }];

    for epoch in 1..=config.epochs {
        let mut loss_sum = 0.0;
        for rows in epoch_batches(train.len(), config.batch_size, &mut rng) {
            let xb = gather(train.x.view(), &rows);
            let yb: Array1<f64> = rows.iter().map(|&i| f64::from(train.y[i])).collect();
            let n = rows.len() as f64;
            let hb = model.representation.forward_batch(xb.view(), Mode::Train)?;
            let logits = hb.dot(&model.head_weight) + model.head_bias;
            let p = logits.mapv(sigmoid);
            loss_sum += ndarray::Zip::from(&logits)
                .and(&yb)
                .fold(0.0, |acc, &l, &y| acc + bce_from_logit(l, y));
            let dlogit = (&p - &yb) / n;
            let head_grad = hb.t().dot(&dlogit);
            let bias_grad = dlogit.sum();
            let dh = dlogit.view().insert_axis(Axis(1)).dot(&model.head_weight.view().insert_axis(Axis(0)));
            let (grads, _) = model.representation.backprop(dh.view())?;

            let mut g = grads.slices();
            g.push(head_grad.as_slice().expect("standard layout"));
            let bias_slice = [bias_grad];
            g.push(&bias_slice);
            let mut params = model.representation.params_mut();
            params.push(model.head_weight.as_slice_mut().expect("standard layout"));
            params.push(std::slice::from_mut(&mut model.head_bias));
            opt.step(params, &g)?;
        }
        model.representation.clear_cache();
        if !model.representation.all_finite() || !model.head_bias.is_finite() {
            return Err(Error::Numeric(format!("classifier parameters diverged in epoch {epoch}")));
        }
        log.push(ClassifierEpoch {
            epoch,
            loss: loss_sum / train.len() as f64,
            train_balanced_accuracy: evaluate(&model, train)?,
            test_balanced_accuracy: test.map(|t| evaluate(&model, t)).transpose()?,
        });
    }
    Ok((model, log))
}

/// `BCE(sigmoid(l), y)` computed from the logit.
pub(crate) fn bce_from_logit(logit: f64, y: f64) -> f64 {
    use crate::nn::softplus;
    y * softplus(-logit) + (1.0 - y) * softplus(logit)
}

fn bce_full(model: &ClassifierModel, data: &TabularDataset) -> Result<f64> {
    let h = model.representation.infer_batch(data.x.view())?;
    let logits = h.dot(&model.head_weight) + model.head_bias;
    Ok(logits.iter().zip(&data.y).map(|(&l, &y)| bce_from_logit(l, f64::from(y))).sum::<f64>() / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split, FeatureDescriptor, RawDataset};
    use crate::nn::DenseLayer;
    use ndarray::array;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, seed: u64) -> RawDataset {
        let mut rng = seeded(seed);
        let noise = Normal::new(0.0, 0.4).unwrap();
        let mut x = Array2::zeros((n, 2));
        let mut y = Vec::new();
        for i in 0..n {
            let label = (i % 2) as u8;
            let c = if label == 1 { 2.0 } else { -2.0 };
            x[[i, 0]] = c + noise.sample(&mut rng);
            x[[i, 1]] = c + noise.sample(&mut rng);
            y.push(label);
        }
        RawDataset {
            name: "blobs".into(),
            features: vec![FeatureDescriptor::continuous("a"), FeatureDescriptor::continuous("b")],
            x,
            y,
            rejected: 0,
        }
    }

    #[test]
    fn zero_head_gives_one_half() {
        let mut rng = seeded(0);
        let rep = DenseNet::mlp_all_hidden(&[3, 4], Activation::Tanh, false, &mut rng).unwrap();
        let clf = ClassifierModel::new(rep, Array1::zeros(4), 0.0).unwrap();
        for x in [array![0.0, 0.0, 0.0], array![5.0, -1.0, 0.3]] {
            assert_eq!(clf.classify(x.view()).unwrap(), 0.5);
        }
    }

    #[test]
    fn classify_is_sigmoid_of_head() {
        let mut rng = seeded(3);
        let rep = DenseNet::mlp_all_hidden(&[3, 6, 4], Activation::Tanh, true, &mut rng).unwrap();
        let clf = ClassifierModel::new(rep, array![0.5, -1.0, 2.0, 0.1], 0.3).unwrap();
        let x = array![0.2, 0.9, 0.4];
        let h = clf.representation(x.view()).unwrap();
        let manual = 1.0 / (1.0 + (-(clf.head_weight.dot(&h) + 0.3)).exp());
        assert!((clf.classify(x.view()).unwrap() - manual).abs() <= 1e-12);
    }

    #[test]
    fn separable_blobs_train_well() {
        let s = split(&blobs(800, 1), 2).unwrap();
        let cfg = ClassifierConfig {
            representation_dim: 8,
            learning_rate: 1e-2,
            l2: 0.0,
            epochs: 20,
            batch_size: 64,
            optimizer: "adam".into(),
            ..Default::default()
        };
        let (clf, log) = train_classifier(&s.train, Some(&s.test), &cfg).unwrap();
        let last = log.last().unwrap();
        assert!(last.test_balanced_accuracy.unwrap() >= 0.95, "{last:?}");
        assert!(last.loss < log[0].loss);
        let p = clf.classify(s.test.x.row(0)).unwrap();
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn monotone_single_feature() {
        // one feature, label = feature > 0.5
        let n = 400;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64 / n as f64);
        let y = (0..n).map(|i| u8::from(i as f64 / n as f64 > 0.5)).collect();
        let raw = RawDataset { name: "line".into(), features: vec![FeatureDescriptor::continuous("a")], x, y, rejected: 0 };
        let s = split(&raw, 0).unwrap();
        let cfg = ClassifierConfig {
            representation_dim: 1,
            batch_norm: false,
            learning_rate: 5e-2,
            l2: 0.0,
            epochs: 60,
            batch_size: 32,
            optimizer: "adam".into(),
            seed: 5,
        };
        let mut model = None;
        // a single tanh unit per layer is monotone; the sign of the chain
        // is fixed by training
        if let Ok((clf, _)) = train_classifier(&s.train, None, &cfg) {
            model = Some(clf);
        }
        let clf = model.unwrap();
        let grid: Vec<f64> = (0..=50).map(|i| clf.classify(array![i as f64 / 50.0].view()).unwrap()).collect();
        for w in grid.windows(2) {
            assert!(w[1] >= w[0], "{grid:?}");
        }
        assert!(grid[50] > 0.5 && grid[0] < 0.5);
    }

    #[test]
    fn single_class_rejected() {
        let mut raw = blobs(20, 0);
        raw.y.iter_mut().for_each(|v| *v = 0);
        let s = split(&raw, 0).unwrap();
        assert!(matches!(train_classifier(&s.train, None, &ClassifierConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = seeded(1);
        let rep = DenseNet::new(vec![DenseLayer::init(2, 3, Activation::Tanh, true, &mut rng)]).unwrap();
        let clf = ClassifierModel::new(rep, array![1.0, 2.0, 3.0], -0.5).unwrap();
        let back = ClassifierModel::from_checkpoint(&Checkpoint::from_bytes(&clf.to_checkpoint().to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(back, clf);
    }
}
