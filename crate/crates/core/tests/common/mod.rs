//! Independent oracles and random model builders shared by the integration
//! tests and the acceptance harness.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;

use riemcf::models::{ClassifierModel, RbfVariance, VaeModel};
use riemcf::nn::{Activation, DenseLayer, DenseNet};
use riemcf::rng::{seeded, Rng};

pub const FD_STEP: f64 = 1e-5;

/// Central finite-difference Jacobian of `f` at `x` (`out × in`).
pub fn fd_jacobian(f: impl Fn(&Array1<f64>) -> Array1<f64>, x: &Array1<f64>, h: f64) -> Array2<f64> {
    let out = f(x).len();
    let mut jac = Array2::zeros((out, x.len()));
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let col = (f(&xp) - f(&xm)) / (2.0 * h);
        jac.column_mut(i).assign(&col);
    }
    jac
}

pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖a − b‖_F / ‖b‖_F`.
pub fn rel_frobenius(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    frobenius(&(a - b)) / frobenius(b).max(1e-300)
}

pub fn normal_vec(rng: &mut Rng, n: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn normal_mat(rng: &mut Rng, r: usize, c: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Replaces every batch-norm layer's running statistics and affine
/// parameters with random values so inference is not the identity map.
pub fn randomize_batch_norm(net: &mut DenseNet, rng: &mut Rng) {
    let widths: Vec<usize> = net.layers().iter().map(|l| l.outputs()).collect();
    let mut layers: Vec<DenseLayer> = net.layers().to_vec();
    for (layer, w) in layers.iter_mut().zip(widths) {
        if let Some(bn) = layer.batch_norm.as_mut() {
            bn.running_mean = normal_vec(rng, w, 0.3);
            bn.running_var = Array1::from_shape_fn(w, |_| rng.random_range(0.3..3.0));
            bn.gamma = Array1::from_shape_fn(w, |_| rng.random_range(0.5..1.5));
            bn.beta = normal_vec(rng, w, 0.2);
        }
    }
    *net = DenseNet::new(layers).expect("same shapes");
}

/// Classifier with the production layout `D → 2H → 2H → H → H`, tanh and
/// batch norm on every representation layer, random statistics.
pub fn random_classifier(input: usize, h: usize, seed: u64) -> ClassifierModel {
    let mut rng = seeded(seed);
    let mut rep =
        DenseNet::mlp_all_hidden(&[input, 2 * h, 2 * h, h, h], Activation::Tanh, true, &mut rng).unwrap();
    randomize_batch_norm(&mut rep, &mut rng);
    let w = normal_vec(&mut rng, h, 0.5);
    ClassifierModel::new(rep, w, 0.1).unwrap()
}

/// RBF precision network with `k` centers drawn from N(0, I) and weights
/// that keep `σ` of order one near the centers.
pub fn random_rbf(latent: usize, ambient: usize, k: usize, bandwidth: f64, seed: u64) -> RbfVariance {
    let mut rng = seeded(seed);
    let centers = normal_mat(&mut rng, k, latent, 1.0);
    let weights = Array2::from_shape_fn((ambient, k), |_| rng.random_range(0.5..4.0) / k as f64 * 4.0);
    RbfVariance::with_weights(centers, &weights, Array1::from_elem(k, bandwidth), 1e-2).unwrap()
}

/// Untrained VAE with random batch-norm statistics and a fitted-looking
/// RBF variance.
pub fn random_vae(ambient: usize, latent: usize, hidden: &[usize], centers: usize, seed: u64) -> VaeModel {
    let mut vae = VaeModel::init(ambient, latent, hidden, true, seed).unwrap();
    let mut rng = seeded(seed ^ 0x5eed);
    randomize_batch_norm(&mut vae.decoder, &mut rng);
    randomize_batch_norm(&mut vae.encoder, &mut rng);
    vae.variance = Some(random_rbf(latent, ambient, centers, 1.0, seed.wrapping_add(17)));
    vae
}

/// Monte-Carlo estimate of `E_ε[J_εᵀ A J_ε]` for the sampled decoder
/// `g_ε(z) = μ(z) + σ(z) ⊙ ε`, with `J_ε` built from finite-difference
/// Jacobians of `μ` and `σ`. `A = I` when `ambient` is `None`.
pub fn mc_expected_metric(
    vae: &VaeModel,
    z: &Array1<f64>,
    ambient: Option<&Array2<f64>>,
    samples: usize,
    seed: u64,
) -> Array2<f64> {
    let jmu = fd_jacobian(|z| vae.decode_mean(z.view()).unwrap(), z, FD_STEP);
    let jsig = fd_jacobian(|z| vae.decoder_sigma(z.view()).unwrap(), z, FD_STEP);
    let (dd, d) = jmu.dim();
    let a = ambient.cloned().unwrap_or_else(|| Array2::eye(dd));
    let mut rng = seeded(seed);
    let mut acc = Array2::<f64>::zeros((d, d));
    for _ in 0..samples {
        let eps = normal_vec(&mut rng, dd, 1.0);
        let mut j = jmu.clone();
        for (mut row, (s, e)) in j.rows_mut().into_iter().zip(jsig.rows().into_iter().zip(eps.iter())) {
            row.scaled_add(*e, &s);
        }
        acc = acc + j.t().dot(&a.dot(&j));
    }
    acc / samples as f64
}

/// Brute-force minimum Euclidean distance from `x` to the rows of `cloud`.
pub fn naive_min_distance(x: &[f64], cloud: &Array2<f64>) -> f64 {
    cloud
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .fold(f64::INFINITY, f64::min)
}
