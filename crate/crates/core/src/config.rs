//! Run configuration: a flat TOML document layered over per-dataset
//! defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::counterfactual::{CeConfig, CeOptimizer};
use crate::data::{SurfaceDomain, SyntheticSurfaceSpec};
use crate::error::{Error, Result};
use crate::models::{BandwidthRule, ClassifierConfig, RbfConfig, VaeConfig, DEFAULT_ZETA};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Adult,
    Gmc,
    Surface,
}

impl DatasetKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "adult" => Ok(Self::Adult),
            "gmc" => Ok(Self::Gmc),
            "surface" => Ok(Self::Surface),
            other => Err(Error::Config(format!("unknown dataset {other:?} (expected adult, gmc or surface)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Adult => "adult",
            Self::Gmc => "gmc",
            Self::Surface => "surface",
        }
    }
}

/// Every knob of a run. Field names are the keys of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    /// File or directory with the raw dataset (unused for `surface`).
    pub raw_path: Option<PathBuf>,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    pub parallelism: usize,

    pub classifier_h: usize,
    pub classifier_batch_norm: bool,
    pub classifier_lr: f64,
    pub classifier_l2: f64,
    pub classifier_epochs: usize,
    pub classifier_batch: usize,
    pub classifier_optimizer: String,

    pub vae_latent: usize,
    pub vae_hidden: Vec<usize>,
    pub vae_batch_norm: bool,
    pub vae_beta: f64,
    pub vae_epochs: usize,
    pub vae_lr: f64,
    pub vae_batch: usize,
    pub vae_sample_latent: bool,

    pub rbf_centers: usize,
    /// `fixed` (λ = `rbf_bandwidth`) or `cluster` (λ_k = `rbf_bandwidth` ×
    /// mean member distance of cluster k).
    pub rbf_bandwidth_rule: String,
    pub rbf_bandwidth: f64,
    pub rbf_zeta: f64,
    pub rbf_epochs: usize,
    pub rbf_lr: f64,
    pub rbf_batch: usize,

    pub ce_optimizers: Vec<CeOptimizer>,
    pub ce_iterations: Vec<usize>,
    pub ce_alphas: Vec<f64>,
    pub ce_step_size: f64,
    pub ce_normalize_gradient: bool,
    pub ce_target: u8,
    /// Cap on the number of factuals per seed; 0 keeps all.
    pub ce_max_factuals: usize,
    pub ce_thresholds: Vec<f64>,
    pub tau0: f64,

    pub surface_samples: usize,
    pub surface_noise: f64,
    pub surface_amplitude: f64,
    pub surface_hole_radius: f64,
    pub surface_domain: SurfaceDomain,
    pub grid_size: usize,
    pub gmc_flip_label: bool,
}

impl RunConfig {
    pub fn for_dataset(dataset: DatasetKind) -> Self {
        let mut c = Self {
            dataset,
            raw_path: None,
            out: PathBuf::from("runs").join(dataset.name()),
            seeds: vec![0],
            parallelism: 1,
            classifier_h: 24,
            classifier_batch_norm: true,
            classifier_lr: 1e-5,
            classifier_l2: 0.05,
            classifier_epochs: 20,
            classifier_batch: 1024,
            classifier_optimizer: "rmsprop".into(),
            vae_latent: 5,
            vae_hidden: vec![512, 256],
            vae_batch_norm: true,
            vae_beta: 1e-4,
            vae_epochs: 100,
            vae_lr: 1e-3,
            vae_batch: 512,
            vae_sample_latent: false,
            rbf_centers: 200,
            rbf_bandwidth_rule: "cluster".into(),
            rbf_bandwidth: 0.5,
            rbf_zeta: DEFAULT_ZETA,
            rbf_epochs: 300,
            rbf_lr: 1e-3,
            rbf_batch: 512,
            ce_optimizers: CeOptimizer::ALL.to_vec(),
            ce_iterations: vec![50, 100, 150],
            ce_alphas: vec![0.0, 0.1],
            ce_step_size: 0.1,
            ce_normalize_gradient: true,
            ce_target: 1,
            ce_max_factuals: 0,
            ce_thresholds: (1..=9).map(|i| f64::from(i) / 10.0).chain([0.95, 0.99]).collect(),
            tau0: 1e-5,
            surface_samples: 5000,
            surface_noise: 0.1,
            surface_amplitude: 0.25,
            surface_hole_radius: 1.0,
            surface_domain: SurfaceDomain::Centered,
            grid_size: 50,
            gmc_flip_label: true,
        };
        match dataset {
            DatasetKind::Adult => {}
            DatasetKind::Gmc => {
                c.rbf_centers = 350;
                c.rbf_lr = 1e-2;
            }
            DatasetKind::Surface => {
                c.classifier_h = 32;
                c.classifier_lr = 1e-3;
                c.classifier_l2 = 0.0;
                c.classifier_epochs = 100;
                c.classifier_batch = 128;
                c.classifier_optimizer = "adam".into();
                c.vae_latent = 2;
                c.vae_hidden = vec![128, 64];
                c.vae_epochs = 200;
                c.vae_batch = 128;
                c.vae_sample_latent = true;
                c.rbf_centers = 64;
                c.rbf_bandwidth = 0.3;
                c.rbf_epochs = 300;
                c.rbf_lr = 1e-2;
                c.rbf_batch = 256;
                c.ce_iterations = vec![150];
                c.ce_alphas = vec![0.0];
            }
        }
        c
    }

    /// Parses a config document. `dataset` selects the defaults the file
    /// is layered over; `dataset_override` replaces it before layering.
    pub fn from_toml_str(text: &str, dataset_override: Option<DatasetKind>) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let dataset = match (dataset_override, table.get("dataset")) {
            (Some(d), _) => d,
            (None, Some(toml::Value::String(s))) => DatasetKind::parse(s)?,
            (None, Some(_)) => return Err(Error::Config("`dataset` must be a string".into())),
            (None, None) => return Err(Error::Config("config does not name a dataset".into())),
        };
        let base = toml::Table::try_from(Self::for_dataset(dataset)).map_err(|e| Error::Config(e.to_string()))?;
        let mut merged = base;
        merged.extend(table);
        merged.insert("dataset".into(), toml::Value::String(dataset.name().into()));
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, dataset_override: Option<DatasetKind>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text, dataset_override)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.vae_latent == 0 || self.classifier_h == 0 {
            return bad("latent and representation sizes must be positive");
        }
        if self.ce_optimizers.is_empty() || self.ce_iterations.is_empty() || self.ce_alphas.is_empty() {
            return bad("the counterfactual grid is empty");
        }
        if self.ce_iterations.contains(&0) {
            return bad("iteration counts must be positive");
        }
        if self.ce_alphas.iter().any(|a| !(*a >= 0.0)) {
            return bad("fidelity weights must be non-negative");
        }
        if !(self.ce_step_size > 0.0) {
            return bad("ce_step_size must be positive");
        }
        if !(self.rbf_bandwidth > 0.0) || !(self.rbf_zeta > 0.0) {
            return bad("rbf_bandwidth and rbf_zeta must be positive");
        }
        self.bandwidth_rule()?;
        crate::nn::OptimizerKind::by_name(&self.classifier_optimizer)?;
        if self.dataset == DatasetKind::Surface && self.grid_size == 0 {
            return bad("grid_size must be positive");
        }
        Ok(())
    }

    pub fn bandwidth_rule(&self) -> Result<BandwidthRule> {
        match self.rbf_bandwidth_rule.as_str() {
            "fixed" => Ok(BandwidthRule::Fixed(self.rbf_bandwidth)),
            "cluster" => Ok(BandwidthRule::ClusterScaled(self.rbf_bandwidth)),
            other => Err(Error::Config(format!("unknown rbf_bandwidth_rule {other:?} (expected fixed or cluster)"))),
        }
    }

    /// Seed of a named component under root seed `seed`.
    pub fn component_seed(seed: u64, component: &str) -> u64 {
        derive_seed(seed, component)
    }

    pub fn classifier_config(&self, seed: u64) -> ClassifierConfig {
        ClassifierConfig {
            representation_dim: self.classifier_h,
            batch_norm: self.classifier_batch_norm,
            learning_rate: self.classifier_lr,
            l2: self.classifier_l2,
            epochs: self.classifier_epochs,
            batch_size: self.classifier_batch,
            optimizer: self.classifier_optimizer.clone(),
            seed: Self::component_seed(seed, "classifier"),
        }
    }

    pub fn vae_config(&self, seed: u64) -> VaeConfig {
        VaeConfig {
            latent_dim: self.vae_latent,
            hidden: self.vae_hidden.clone(),
            batch_norm: self.vae_batch_norm,
            beta: self.vae_beta,
            epochs: self.vae_epochs,
            learning_rate: self.vae_lr,
            batch_size: self.vae_batch,
            sample_latent: self.vae_sample_latent,
            seed: Self::component_seed(seed, "vae"),
        }
    }

    pub fn rbf_config(&self, seed: u64) -> Result<RbfConfig> {
        Ok(RbfConfig {
            centers: self.rbf_centers,
            bandwidth: self.bandwidth_rule()?,
            zeta: self.rbf_zeta,
            epochs: self.rbf_epochs,
            learning_rate: self.rbf_lr,
            batch_size: self.rbf_batch,
            kmeans_iterations: 100,
            seed: Self::component_seed(seed, "rbf"),
        })
    }

    pub fn ce_config(&self, optimizer: CeOptimizer, iterations: usize, alpha: f64) -> CeConfig {
        CeConfig {
            optimizer,
            step_size: self.ce_step_size,
            iterations,
            alpha,
            target: self.ce_target,
            normalize_gradient: self.ce_normalize_gradient,
        }
    }

    pub fn surface_spec(&self, seed: u64) -> SyntheticSurfaceSpec {
        SyntheticSurfaceSpec {
            samples: self.surface_samples,
            noise: self.surface_noise,
            amplitude: self.surface_amplitude,
            hole_radius: self.surface_hole_radius,
            domain: self.surface_domain,
            seed: Self::component_seed(seed, "surface"),
            ..Default::default()
        }
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out.join(format!("seed-{seed}"))
    }
}
