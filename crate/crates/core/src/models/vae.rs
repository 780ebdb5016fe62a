use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::rbf::RbfVariance;
use super::training::{epoch_batches, gather};
use crate::data::TabularDataset;
use crate::error::{shape_err, Error, Result};
use crate::nn::{Activation, Checkpoint, DenseLayer, DenseNet, Mode, OptimizerKind, OptimizerState};
use crate::rng::{derived, seeded};

/// Floor added to the encoder variance head inside the KL term.
const ENCODER_VAR_FLOOR: f64 = 1e-6;

/// Gaussian VAE. The encoder trunk feeds a mean head and a variance head;
/// the decoder mean ends in a sigmoid; the decoder standard deviation comes
/// from an RBF precision network once it has been fitted.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    pub encoder: DenseNet,
    pub encoder_mean: DenseNet,
    pub encoder_var: DenseNet,
    pub decoder: DenseNet,
    pub variance: Option<RbfVariance>,
}

impl VaeModel {
    pub fn new(
        encoder: DenseNet,
        encoder_mean: DenseNet,
        encoder_var: DenseNet,
        decoder: DenseNet,
        variance: Option<RbfVariance>,
    ) -> Result<Self> {
        let d = encoder_mean.output_dim();
        if encoder.output_dim() != encoder_mean.input_dim() || encoder.output_dim() != encoder_var.input_dim() {
            return shape_err("encoder heads do not match the trunk width");
        }
        if encoder_var.output_dim() != d || decoder.input_dim() != d {
            return shape_err(format!("latent size mismatch: mean head {d}, variance head {}, decoder {}", encoder_var.output_dim(), decoder.input_dim()));
        }
        if decoder.output_dim() != encoder.input_dim() {
            return shape_err(format!("decoder emits {} features but the encoder reads {}", decoder.output_dim(), encoder.input_dim()));
        }
        if let Some(v) = &variance {
            if v.latent_dim() != d || v.output_dim() != decoder.output_dim() {
                return shape_err("RBF variance does not match the decoder");
            }
        }
        Ok(Self { encoder, encoder_mean, encoder_var, decoder, variance })
    }

    /// Untrained VAE with the given hidden widths (the decoder mirrors them).
    pub fn init(input_dim: usize, latent_dim: usize, hidden: &[usize], batch_norm: bool, seed: u64) -> Result<Self> {
        if latent_dim == 0 || latent_dim >= input_dim {
            return Err(Error::Config(format!("latent size {latent_dim} must be in 1..{input_dim}")));
        }
        if hidden.is_empty() {
            return Err(Error::Config("the encoder needs at least one hidden layer".into()));
        }
        let mut rng = derived(seed, "vae-init");
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        let encoder = DenseNet::mlp_all_hidden(&widths, Activation::Tanh, batch_norm, &mut rng)?;
        let trunk = *hidden.last().expect("non-empty");
        let encoder_mean = DenseNet::new(vec![DenseLayer::init(trunk, latent_dim, Activation::Identity, false, &mut rng)])?;
        let encoder_var = DenseNet::new(vec![DenseLayer::init(trunk, latent_dim, Activation::Softplus, false, &mut rng)])?;
        let mut dec_widths = vec![latent_dim];
        dec_widths.extend(hidden.iter().rev());
        dec_widths.push(input_dim);
        let decoder = DenseNet::mlp(&dec_widths, Activation::Tanh, Activation::Sigmoid, batch_norm, &mut rng)?;
        Self::new(encoder, encoder_mean, encoder_var, decoder, None)
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.input_dim()
    }

    pub fn ambient_dim(&self) -> usize {
        self.decoder.output_dim()
    }

    /// Posterior mean.
    pub fn encode(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.encoder_mean.forward(self.encoder.forward(x)?.view())
    }

    pub fn encode_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.encoder_mean.infer_batch(self.encoder.infer_batch(x)?.view())
    }

    /// Posterior variance (only used by the KL term).
    pub fn encode_variance(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.encoder_var.forward(self.encoder.forward(x)?.view())
    }

    pub fn decode_mean(&self, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.decoder.forward(z)
    }

    pub fn decode_mean_batch(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.decoder.infer_batch(z)
    }

    /// `μ(z)` and `J_μ(z)` (`D × d`).
    pub fn decode_mean_with_jacobian(&self, z: ArrayView1<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        self.decoder.forward_with_jacobian(z)
    }

    fn fitted_variance(&self) -> Result<&RbfVariance> {
        self.variance.as_ref().ok_or_else(|| Error::State("decoder variance has not been fitted".into()))
    }

    pub fn decoder_sigma(&self, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.fitted_variance()?.sigma(z)
    }

    /// `σ(z)` and `J_σ(z)` (`D × d`).
    pub fn decoder_sigma_with_jacobian(&self, z: ArrayView1<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        self.fitted_variance()?.sigma_with_jacobian(z)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new("vae");
        for (name, net) in [
            ("encoder", &self.encoder),
            ("encoder_mean", &self.encoder_mean),
            ("encoder_var", &self.encoder_var),
            ("decoder", &self.decoder),
        ] {
            ck.nets.push((name.into(), net.clone()));
        }
        if let Some(v) = &self.variance {
            ck.tensors.extend(v.to_tensors());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("vae")?;
        Self::new(
            ck.net("encoder")?.clone(),
            ck.net("encoder_mean")?.clone(),
            ck.net("encoder_var")?.clone(),
            ck.net("decoder")?.clone(),
            RbfVariance::from_tensors(ck)?,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub batch_norm: bool,
    pub beta: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Decode a reparameterized posterior sample instead of the posterior
    /// mean during warm-up.
    pub sample_latent: bool,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 5,
            hidden: vec![512, 256],
            batch_norm: true,
            beta: 1e-4,
            epochs: 100,
            learning_rate: 1e-3,
            batch_size: 512,
            sample_latent: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeEpoch {
    pub epoch: usize,
    /// Mean of `½‖x̂ − x‖²` per row.
    pub reconstruction: f64,
    pub kl: f64,
    /// Mean absolute reconstruction error per coordinate.
    pub mean_abs_error: f64,
}

fn kl_term(mean: f64, var: f64) -> f64 {
    0.5 * (var + mean * mean - 1.0 - var.ln())
}

fn evaluate(vae: &VaeModel, x: ArrayView2<f64>) -> Result<VaeEpoch> {
    let h = vae.encoder.infer_batch(x)?;
    let m = vae.encoder_mean.infer_batch(h.view())?;
    let v = vae.encoder_var.infer_batch(h.view())?;
    let xr = vae.decoder.infer_batch(m.view())?;
    let n = x.nrows() as f64;
    let diff = &xr - &x;
    Ok(VaeEpoch {
        epoch: 0,
        reconstruction: 0.5 * diff.mapv(|d| d * d).sum() / n,
        kl: ndarray::Zip::from(&m).and(&v).fold(0.0, |a, &mu, &var| a + kl_term(mu, var + ENCODER_VAR_FLOOR)) / n,
        mean_abs_error: diff.mapv(f64::abs).mean().unwrap_or(0.0),
    })
}

/// Trains the encoder and decoder mean on `½‖x̂ − x‖² + β·KL` with Adam.
/// The decoder variance is left unset.
pub fn train_vae_warmup(train: &TabularDataset, config: &VaeConfig) -> Result<(VaeModel, Vec<VaeEpoch>)> {
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut vae = VaeModel::init(train.dim(), config.latent_dim, &config.hidden, config.batch_norm, config.seed)?;
    let mut rng = seeded(config.seed);
    let mut noise_rng = derived(config.seed, "vae-noise");
    let mut opt = OptimizerState::new(OptimizerKind::adam(), config.learning_rate, 0.0);
    let mut log = vec![evaluate(&vae, train.x.view())?];
    let d = config.latent_dim;

    for epoch in 1..=config.epochs {
        for rows in epoch_batches(train.len(), config.batch_size, &mut rng) {
            let xb = gather(train.x.view(), &rows);
            let n = rows.len() as f64;
            let h = vae.encoder.forward_batch(xb.view(), Mode::Train)?;
            let m = vae.encoder_mean.forward_batch(h.view(), Mode::Train)?;
            let v = vae.encoder_var.forward_batch(h.view(), Mode::Train)? + ENCODER_VAR_FLOOR;
            let eps: Option<Array2<f64>> = if config.sample_latent {
                Some(Array2::from_shape_fn((rows.len(), d), |_| StandardNormal.sample(&mut noise_rng)))
            } else {
                None
            };
            let z = match &eps {
                Some(e) => &m + &(e * &v.mapv(f64::sqrt)),
                None => m.clone(),
            };
            let xr = vae.decoder.forward_batch(z.view(), Mode::Train)?;
            let dxr = (&xr - &xb) / n;
            let (gdec, dz) = vae.decoder.backprop(dxr.view())?;
            let dm = &dz + &(&m * (config.beta / n));
            let mut dv = v.mapv(|var| config.beta * 0.5 * (1.0 - 1.0 / var) / n);
            if let Some(e) = &eps {
                dv = dv + &dz * e / &v.mapv(|var| 2.0 * var.sqrt());
            }
            let (gmean, dh_mean) = vae.encoder_mean.backprop(dm.view())?;
            let (gvar, dh_var) = vae.encoder_var.backprop(dv.view())?;
            let dh = dh_mean + dh_var;
            let (genc, _) = vae.encoder.backprop(dh.view())?;

            let mut grads = genc.slices();
            grads.extend(gmean.slices());
            grads.extend(gvar.slices());
            grads.extend(gdec.slices());
            let mut params = vae.encoder.params_mut();
            params.extend(vae.encoder_mean.params_mut());
            params.extend(vae.encoder_var.params_mut());
            params.extend(vae.decoder.params_mut());
            opt.step(params, &grads)?;
        }
        for net in [&mut vae.encoder, &mut vae.encoder_mean, &mut vae.encoder_var, &mut vae.decoder] {
            net.clear_cache();
            if !net.all_finite() {
                return Err(Error::Numeric(format!("VAE parameters diverged in epoch {epoch}")));
            }
        }
        let mut row = evaluate(&vae, train.x.view())?;
        row.epoch = epoch;
        log.push(row);
    }
    Ok((vae, log))
}
