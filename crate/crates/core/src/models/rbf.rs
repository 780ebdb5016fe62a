use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use super::kmeans::kmeans;
use super::training::{epoch_batches, gather};
use super::vae::VaeModel;
use crate::data::TabularDataset;
use crate::error::{shape_err, Error, Result};
use crate::nn::{sigmoid, softplus, OptimizerKind, OptimizerState, Tensor};
use crate::rng::seeded;

pub const DEFAULT_ZETA: f64 = 1e-6;

/// Decoder precision `γ_j(z) = Σ_k W_jk exp(−‖z − c_k‖² / (2λ_k²)) + ζ` with
/// `W = softplus(θ)`, so `σ(z) = γ(z)^{-1/2}` is bounded by `ζ^{-1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfVariance {
    /// `K × d`
    pub centers: Array2<f64>,
    /// Unconstrained weights `θ` (`D × K`).
    pub weight_params: Array2<f64>,
    /// Per-center bandwidth `λ_k`.
    pub bandwidths: Array1<f64>,
    pub zeta: f64,
}

impl RbfVariance {
    pub fn new(centers: Array2<f64>, weight_params: Array2<f64>, bandwidths: Array1<f64>, zeta: f64) -> Result<Self> {
        let k = centers.nrows();
        if weight_params.ncols() != k || bandwidths.len() != k {
            return shape_err(format!(
                "{k} centers, {} weight columns and {} bandwidths",
                weight_params.ncols(),
                bandwidths.len()
            ));
        }
        if !(zeta > 0.0) || bandwidths.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::Config("RBF bandwidths and ζ must be positive".into()));
        }
        Ok(Self { centers, weight_params, bandwidths, zeta })
    }

    /// A network with the given non-negative weights `W` (not `θ`).
    pub fn with_weights(centers: Array2<f64>, weights: &Array2<f64>, bandwidths: Array1<f64>, zeta: f64) -> Result<Self> {
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Config("RBF weights must be non-negative".into()));
        }
        Self::new(centers, weights.mapv(inverse_softplus), bandwidths, zeta)
    }

    pub fn latent_dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight_params.nrows()
    }

    pub fn num_centers(&self) -> usize {
        self.centers.nrows()
    }

    pub fn weights(&self) -> Array2<f64> {
        self.weight_params.mapv(softplus)
    }

    pub fn sigma_max(&self) -> f64 {
        self.zeta.powf(-0.5)
    }

    fn check(&self, z: ArrayView1<f64>) -> Result<()> {
        if z.len() != self.latent_dim() {
            return shape_err(format!("RBF expects {} latent coordinates, got {}", self.latent_dim(), z.len()));
        }
        Ok(())
    }

    /// Kernel activations and the squared-distance factors `(z − c_k)/λ_k²`.
    fn kernel(&self, z: ArrayView1<f64>) -> Array1<f64> {
        Array1::from_iter(self.centers.rows().into_iter().zip(&self.bandwidths).map(|(c, &l)| {
            let d2: f64 = c.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
            (-d2 / (2.0 * l * l)).exp()
        }))
    }

    pub fn gamma(&self, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check(z)?;
        Ok(self.weights().dot(&self.kernel(z)) + self.zeta)
    }

    pub fn sigma(&self, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        Ok(self.gamma(z)?.mapv(|g| g.powf(-0.5)))
    }

    /// `σ(z)` and its Jacobian `J_σ` (`D × d`).
    pub fn sigma_with_jacobian(&self, z: ArrayView1<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        self.check(z)?;
        let phi = self.kernel(z);
        let w = self.weights();
        let gamma = w.dot(&phi) + self.zeta;
        // dφ_k/dz = −φ_k (z − c_k) / λ_k²
        let mut dphi = Array2::zeros((self.num_centers(), self.latent_dim()));
        for (k, mut row) in dphi.rows_mut().into_iter().enumerate() {
            let s = -phi[k] / (self.bandwidths[k] * self.bandwidths[k]);
            for (i, r) in row.iter_mut().enumerate() {
                *r = s * (z[i] - self.centers[[k, i]]);
            }
        }
        let dgamma = w.dot(&dphi);
        let sigma = gamma.mapv(|g| g.powf(-0.5));
        let mut jac = dgamma;
        for (j, mut row) in jac.rows_mut().into_iter().enumerate() {
            row *= -0.5 * gamma[j].powf(-1.5);
        }
        Ok((sigma, jac))
    }

    pub(crate) fn to_tensors(&self) -> Vec<Tensor> {
        vec![
            Tensor::from_matrix("rbf_centers", &self.centers),
            Tensor::from_matrix("rbf_weight_params", &self.weight_params),
            Tensor::from_vector("rbf_bandwidths", &self.bandwidths),
            Tensor::scalar("rbf_zeta", self.zeta),
        ]
    }

    pub(crate) fn from_tensors(ck: &crate::nn::Checkpoint) -> Result<Option<Self>> {
        if ck.tensor("rbf_centers").is_err() {
            return Ok(None);
        }
        Self::new(
            ck.tensor("rbf_centers")?.to_matrix()?,
            ck.tensor("rbf_weight_params")?.to_matrix()?,
            ck.tensor("rbf_bandwidths")?.to_vector()?,
            ck.tensor("rbf_zeta")?.to_scalar()?,
        )
        .map(Some)
    }
}

fn inverse_softplus(w: f64) -> f64 {
    if w > 30.0 {
        w
    } else {
        w.exp_m1().max(f64::MIN_POSITIVE).ln()
    }
}

/// How the kernel widths `λ_k` are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "value", rename_all = "snake_case")]
pub enum BandwidthRule {
    /// The same `λ` for every center.
    Fixed(f64),
    /// `λ_k = a · (mean distance of the members of cluster k to c_k)`.
    ClusterScaled(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfConfig {
    pub centers: usize,
    pub bandwidth: BandwidthRule,
    pub zeta: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub kmeans_iterations: usize,
    pub seed: u64,
}

impl Default for RbfConfig {
    fn default() -> Self {
        Self {
            centers: 200,
            bandwidth: BandwidthRule::ClusterScaled(0.5),
            zeta: DEFAULT_ZETA,
            epochs: 300,
            learning_rate: 1e-3,
            batch_size: 512,
            kmeans_iterations: 100,
            seed: 0,
        }
    }
}

const MM_ITERATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfEpoch {
    pub epoch: usize,
    /// Mean of `Σ_j ½(γ_j r_j² − ln γ_j)` over the training set.
    pub nll: f64,
}

/// Fits the decoder precision network with the encoder and decoder mean
/// frozen. Centers come from k-means on the training posterior means; the
/// weights minimize the Gaussian negative log-likelihood of the mean
/// reconstructions.
pub fn fit_decoder_variance(
    vae: &VaeModel,
    train: &TabularDataset,
    config: &RbfConfig,
) -> Result<(VaeModel, Vec<RbfEpoch>)> {
    if config.centers > train.len() {
        return Err(Error::Config(format!("{} RBF centers for {} training rows", config.centers, train.len())));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut rng = seeded(config.seed);
    let latent = vae.encode_batch(train.x.view())?;
    let recon = vae.decode_mean_batch(latent.view())?;
    let resid2 = (&train.x - &recon).mapv(|r| r * r);
    let (centers, assign) = kmeans(latent.view(), config.centers, config.kmeans_iterations, &mut rng)?;
    let k = centers.nrows();
    let dim = train.dim();

    let bandwidths = match config.bandwidth {
        BandwidthRule::Fixed(l) => Array1::from_elem(k, l),
        BandwidthRule::ClusterScaled(a) => {
            let mut sum = vec![0.0; k];
            let mut count = vec![0usize; k];
            for (i, z) in latent.rows().into_iter().enumerate() {
                let c = assign[i];
                sum[c] += z.iter().zip(centers.row(c)).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
                count[c] += 1;
            }
            let means: Vec<f64> = (0..k).map(|c| if count[c] > 0 { sum[c] / count[c] as f64 } else { 0.0 }).collect();
            // singleton clusters borrow the median width
            let mut positive: Vec<f64> = means.iter().copied().filter(|&m| m > 0.0).collect();
            positive.sort_by(f64::total_cmp);
            let fallback = positive.get(positive.len() / 2).copied().unwrap_or(1.0);
            Array1::from_iter(means.iter().map(|&m| a * if m > 0.0 { m } else { fallback }))
        }
    };

    let template = RbfVariance::new(centers, Array2::zeros((dim, k)), bandwidths, config.zeta)?;
    let phi = Array2::from_shape_fn((train.len(), k), |(i, c)| {
        let z = latent.row(i);
        let d2: f64 = template.centers.row(c).iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
        (-d2 / (2.0 * template.bandwidths[c] * template.bandwidths[c])).exp()
    });

    // Start from the per-cluster residual precision spread over the mean
    // kernel mass a member point sees.
    let mut weights = Array2::zeros((dim, k));
    let mass = phi.sum_axis(Axis(1));
    for c in 0..k {
        let members: Vec<usize> = (0..train.len()).filter(|&i| assign[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let m = members.iter().map(|&i| mass[i]).sum::<f64>() / members.len() as f64;
        for j in 0..dim {
            let v = members.iter().map(|&i| resid2[[i, j]]).sum::<f64>() / members.len() as f64;
            weights[[j, c]] = 1.0 / ((v + 1e-8) * m.max(1e-12));
        }
    }
    // Majorize-minimize refinement: the objective is convex in W and
    // W ← W ⊙ (Φᵀ γ⁻¹) / (Φᵀ r²) never increases it.
    let den = resid2.t().dot(&phi) + 1e-12;
    for _ in 0..MM_ITERATIONS {
        let gamma = phi.dot(&weights.t()) + config.zeta;
        let num = gamma.mapv(f64::recip).t().dot(&phi);
        ndarray::Zip::from(&mut weights).and(&num).and(&den).for_each(|w, &n, &d| *w *= n / d);
    }
    let mut params = weights.mapv(inverse_softplus);
    let mut opt = OptimizerState::new(OptimizerKind::adam(), config.learning_rate, 0.0);

    let nll = |params: &Array2<f64>| -> f64 {
        let gamma = phi.dot(&params.mapv(softplus).t()) + config.zeta;
        let total: f64 = ndarray::Zip::from(&gamma)
            .and(&resid2)
            .fold(0.0, |acc, &g, &r2| acc + 0.5 * (g * r2 - g.ln()));
        total / train.len() as f64
    };
    let mut log = vec![RbfEpoch { epoch: 0, nll: nll(&params) }];
    for epoch in 1..=config.epochs {
        for rows in epoch_batches(train.len(), config.batch_size, &mut rng) {
            let pb = gather(phi.view(), &rows);
            let rb = gather(resid2.view(), &rows);
            let gamma = pb.dot(&params.mapv(softplus).t()) + config.zeta;
            // dℓ/dγ = ½(r² − 1/γ)
            let dgamma = (&rb - &gamma.mapv(f64::recip)) * (0.5 / rows.len() as f64);
            let grad = dgamma.t().dot(&pb) * &params.mapv(sigmoid);
            opt.step(vec![params.as_slice_mut().expect("standard layout")], &[grad.as_slice().expect("standard layout")])?;
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("RBF weights diverged in epoch {epoch}")));
        }
        log.push(RbfEpoch { epoch, nll: nll(&params) });
    }

    let mut fitted = vae.clone();
    fitted.variance = Some(RbfVariance { weight_params: params, ..template });
    Ok((fitted, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn single(w: f64, zeta: f64) -> RbfVariance {
        RbfVariance::with_weights(array![[0.5, -0.5]], &array![[w]], array![0.3], zeta).unwrap()
    }

    #[test]
    fn gamma_at_center_is_weight_plus_zeta() {
        let r = single(2.0, 1e-6);
        let g = r.gamma(array![0.5, -0.5].view()).unwrap();
        assert!((g[0] - (2.0 + 1e-6)).abs() <= 1e-12 * 2.0);
    }

    #[test]
    fn far_sigma_hits_cap() {
        let r = single(5.0, 1e-6);
        let s = r.sigma(array![40.0, 40.0].view()).unwrap();
        assert!((s[0] - 1000.0).abs() / 1000.0 < 0.01);
        assert!(s[0] <= r.sigma_max());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let r = RbfVariance::with_weights(
            array![[0.0, 0.0], [1.0, 0.5], [-0.5, 1.0]],
            &array![[1.0, 2.0, 0.5], [0.1, 0.0, 3.0]],
            array![0.7, 0.4, 1.1],
            1e-6,
        )
        .unwrap();
        let z = array![0.3, 0.2];
        let (_, jac) = r.sigma_with_jacobian(z.view()).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            let fd = (r.sigma(zp.view()).unwrap() - r.sigma(zm.view()).unwrap()) / (2.0 * h);
            for j in 0..2 {
                assert!((fd[j] - jac[[j, i]]).abs() <= 1e-6 * (1.0 + fd[j].abs()), "{fd} {jac}");
            }
        }
    }

    #[test]
    fn weights_round_trip_through_softplus() {
        for w in [0.0, 1e-9, 0.3, 7.0, 1e4] {
            let back = softplus(inverse_softplus(w));
            assert!((back - w).abs() <= 1e-9 * (1.0 + w), "{w} {back}");
        }
    }

    #[test]
    fn negative_weights_and_bad_bandwidth_rejected() {
        assert!(RbfVariance::with_weights(array![[0.0]], &array![[-1.0]], array![1.0], 1e-6).is_err());
        assert!(RbfVariance::with_weights(array![[0.0]], &array![[1.0]], array![0.0], 1e-6).is_err());
    }
}
