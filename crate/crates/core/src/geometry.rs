//! Latent and ambient Riemannian metrics, Riemannian gradients and the
//! metric volume used for cost maps.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::{symmetrize, Cholesky};
use crate::models::{ClassifierModel, VaeModel};

/// Jitter ladder tried in order until the metric factorizes.
pub const JITTER_LADDER: [f64; 8] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Euclidean,
    Pullback,
    Enhanced,
}

/// A symmetric positive definite latent metric at one point, together with
/// its Cholesky factor.
#[derive(Debug, Clone)]
pub struct MetricTensor {
    pub point: Array1<f64>,
    /// The metric as assembled, before jitter.
    pub matrix: Array2<f64>,
    pub kind: MetricKind,
    /// Multiple of the identity added before factorization.
    pub jitter: f64,
    factor: Cholesky,
}

impl MetricTensor {
    /// Symmetrizes `matrix` and factorizes it, escalating the diagonal
    /// jitter along [`JITTER_LADDER`].
    pub fn new(point: Array1<f64>, mut matrix: Array2<f64>, kind: MetricKind) -> Result<Self> {
        let d = point.len();
        if matrix.dim() != (d, d) {
            return shape_err(format!("metric at a {d}-dimensional point has shape {:?}", matrix.dim()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite metric entries at z = {:?}", point.to_vec())));
        }
        symmetrize(&mut matrix);
        for &jitter in &JITTER_LADDER {
            if let Some(factor) = Cholesky::with_shift(matrix.view(), jitter) {
                return Ok(Self { point, matrix, kind, jitter, factor });
            }
        }
        Err(Error::SingularMetric { point: point.to_vec(), max_jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] })
    }

    pub fn euclidean(point: Array1<f64>) -> Result<Self> {
        let d = point.len();
        Self::new(point, Array2::eye(d), MetricKind::Euclidean)
    }

    pub fn dim(&self) -> usize {
        self.point.len()
    }

    /// The factorized matrix `M + jitter·I`.
    pub fn regularized(&self) -> Array2<f64> {
        &self.matrix + &(Array2::<f64>::eye(self.dim()) * self.jitter)
    }

    pub fn cholesky(&self) -> &Cholesky {
        &self.factor
    }
}

/// `M_X(x) = J_h(x)ᵀ J_h(x)` on the classifier input space.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbientMetric {
    pub point: Array1<f64>,
    pub matrix: Array2<f64>,
}

/// `Jμᵀ A Jμ + Jσᵀ A Jσ` with `A = I` when `ambient` is `None`.
fn expected_pullback(jmu: ArrayView2<f64>, jsigma: ArrayView2<f64>, ambient: Option<ArrayView2<f64>>) -> Array2<f64> {
    match ambient {
        None => jmu.t().dot(&jmu) + jsigma.t().dot(&jsigma),
        Some(a) => {
            let amu = a.dot(&jmu);
            let asig = a.dot(&jsigma);
            jmu.t().dot(&amu) + jsigma.t().dot(&asig)
        }
    }
}

fn check_finite(what: &str, m: &Array2<f64>, point: ArrayView1<f64>) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite {what} at {:?}", point.to_vec())));
    }
    Ok(())
}

/// Expected pull-back of the Euclidean ambient metric through the
/// stochastic decoder: `M_Z(z) = Jμᵀ Jμ + Jσᵀ Jσ`.
pub fn pullback_metric(vae: &VaeModel, z: ArrayView1<f64>) -> Result<MetricTensor> {
    let (_, jmu) = vae.decode_mean_with_jacobian(z)?;
    let (_, jsigma) = vae.decoder_sigma_with_jacobian(z)?;
    check_finite("decoder Jacobian", &jmu, z)?;
    check_finite("decoder variance Jacobian", &jsigma, z)?;
    MetricTensor::new(z.to_owned(), expected_pullback(jmu.view(), jsigma.view(), None), MetricKind::Pullback)
}

pub fn ambient_metric(clf: &ClassifierModel, x: ArrayView1<f64>) -> Result<AmbientMetric> {
    let jh = clf.representation.jacobian(x)?;
    check_finite("representation Jacobian", &jh, x)?;
    Ok(AmbientMetric { point: x.to_owned(), matrix: jh.t().dot(&jh) })
}

/// Classifier-aware metric `M̂_Z(z) = Jμᵀ M_X(μ(z)) Jμ + Jσᵀ M_X(μ(z)) Jσ`.
pub fn enhanced_metric(vae: &VaeModel, clf: &ClassifierModel, z: ArrayView1<f64>) -> Result<MetricTensor> {
    if vae.ambient_dim() != clf.input_dim() {
        return Err(Error::Config(format!(
            "VAE emits {} features but the classifier reads {}",
            vae.ambient_dim(),
            clf.input_dim()
        )));
    }
    let (mu, jmu) = vae.decode_mean_with_jacobian(z)?;
    let (_, jsigma) = vae.decoder_sigma_with_jacobian(z)?;
    check_finite("decoder Jacobian", &jmu, z)?;
    check_finite("decoder variance Jacobian", &jsigma, z)?;
    let mx = ambient_metric(clf, mu.view())?;
    MetricTensor::new(
        z.to_owned(),
        expected_pullback(jmu.view(), jsigma.view(), Some(mx.matrix.view())),
        MetricKind::Enhanced,
    )
}

/// Solves `M r = g` with the stored factor.
pub fn riemannian_gradient(metric: &MetricTensor, euclidean_grad: ArrayView1<f64>) -> Result<Array1<f64>> {
    if euclidean_grad.len() != metric.dim() {
        return shape_err(format!("gradient of length {} for a {}-dimensional metric", euclidean_grad.len(), metric.dim()));
    }
    Ok(metric.factor.solve(euclidean_grad))
}

/// `sqrt(det M)` of the factorized (jittered) metric.
pub fn metric_volume(metric: &MetricTensor) -> f64 {
    metric.factor.sqrt_det()
}

/// A latent metric field.
pub trait LatentMetric: Sync {
    fn metric_at(&self, z: ArrayView1<f64>) -> Result<MetricTensor>;
}

pub struct EuclideanMetric;

impl LatentMetric for EuclideanMetric {
    fn metric_at(&self, z: ArrayView1<f64>) -> Result<MetricTensor> {
        MetricTensor::euclidean(z.to_owned())
    }
}

pub struct PullbackMetric<'a>(pub &'a VaeModel);

impl LatentMetric for PullbackMetric<'_> {
    fn metric_at(&self, z: ArrayView1<f64>) -> Result<MetricTensor> {
        pullback_metric(self.0, z)
    }
}

pub struct EnhancedMetric<'a>(pub &'a VaeModel, pub &'a ClassifierModel);

impl LatentMetric for EnhancedMetric<'_> {
    fn metric_at(&self, z: ArrayView1<f64>) -> Result<MetricTensor> {
        enhanced_metric(self.0, self.1, z)
    }
}

/// One cell of a 2-d latent cost map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub z1: f64,
    pub z2: f64,
    pub sqrt_det: f64,
}

/// `sqrt(det M)` on an `n × n` grid spanning `[lo, hi]` per axis. Cells
/// whose metric cannot be factorized get `NaN`.
pub fn volume_grid(metric: &dyn LatentMetric, lo: [f64; 2], hi: [f64; 2], n: usize, threads: usize) -> Vec<GridCell> {
    let step = |a: f64, b: f64, i: usize| if n > 1 { a + (b - a) * i as f64 / (n - 1) as f64 } else { 0.5 * (a + b) };
    crate::parallel::map_range(n * n, threads, |idx| {
        let (i, j) = (idx / n, idx % n);
        let z = ndarray::array![step(lo[0], hi[0], i), step(lo[1], hi[1], j)];
        let sqrt_det = metric.metric_at(z.view()).map(|m| metric_volume(&m)).unwrap_or(f64::NAN);
        GridCell { z1: z[0], z2: z[1], sqrt_det }
    })
}
