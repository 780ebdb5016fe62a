use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{FeatureDescriptor, RawDataset};
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Where the generating coordinates are sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceDomain {
    /// `U(-π, π)²`, hole in the middle of the sheet.
    Centered,
    /// `U(0, 2π)²`, hole around the origin corner.
    Corner,
}

/// A 2-d sheet `[z₁, z₂, a·sin(z₁)] + ε` in R³ with a disc of generating
/// coordinates removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSurfaceSpec {
    pub samples: usize,
    pub noise: f64,
    pub amplitude: f64,
    pub hole_center: [f64; 2],
    pub hole_radius: f64,
    /// `y = 1` iff `z₂ − coef·z₁² > 0`.
    pub boundary_coef: f64,
    pub domain: SurfaceDomain,
    pub seed: u64,
}

impl Default for SyntheticSurfaceSpec {
    fn default() -> Self {
        Self {
            samples: 5000,
            noise: 0.1,
            amplitude: 0.25,
            hole_center: [0.0, 0.0],
            hole_radius: 1.0,
            boundary_coef: 2.5,
            domain: SurfaceDomain::Centered,
            seed: 0,
        }
    }
}

impl SyntheticSurfaceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise > 0.0) {
            return Err(Error::Config("surface noise scale must be positive".into()));
        }
        if !(self.hole_radius >= 0.0) {
            return Err(Error::Config("surface hole radius must be non-negative".into()));
        }
        Ok(())
    }

    pub fn bounds(&self) -> (f64, f64) {
        match self.domain {
            SurfaceDomain::Centered => (-PI, PI),
            SurfaceDomain::Corner => (0.0, 2.0 * PI),
        }
    }

    pub fn in_hole(&self, z: [f64; 2]) -> bool {
        let dx = z[0] - self.hole_center[0];
        let dy = z[1] - self.hole_center[1];
        (dx * dx + dy * dy).sqrt() < self.hole_radius
    }
}

/// Noise-free point of the sheet at generating coordinates `z`.
pub fn surface_point(z: [f64; 2], amplitude: f64) -> [f64; 3] {
    [z[0], z[1], amplitude * z[0].sin()]
}

pub fn surface_label(z: [f64; 2], coef: f64) -> u8 {
    // (sign(v) + 1) / 2 with the measure-zero v = 0 case sent to 0
    u8::from(z[1] - coef * z[0] * z[0] > 0.0)
}

/// Generated points together with their generating coordinates.
#[derive(Debug, Clone)]
pub struct SurfaceSample {
    pub data: RawDataset,
    pub latent: Array2<f64>,
}

pub fn generate_surface(spec: &SyntheticSurfaceSpec) -> Result<SurfaceSample> {
    spec.validate()?;
    let mut rng = seeded(spec.seed);
    let (lo, hi) = spec.bounds();
    let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut x = Array2::zeros((spec.samples, 3));
    let mut latent = Array2::zeros((spec.samples, 2));
    let mut y = Vec::with_capacity(spec.samples);
    let mut i = 0;
    while i < spec.samples {
        let z = [rng.random_range(lo..hi), rng.random_range(lo..hi)];
        if spec.in_hole(z) {
            continue;
        }
        let p = surface_point(z, spec.amplitude);
        for (j, pj) in p.iter().enumerate() {
            x[[i, j]] = pj + normal.sample(&mut rng);
        }
        latent[[i, 0]] = z[0];
        latent[[i, 1]] = z[1];
        y.push(surface_label(z, spec.boundary_coef));
        i += 1;
    }
    let features = vec![
        FeatureDescriptor::continuous("x1"),
        FeatureDescriptor::continuous("x2"),
        FeatureDescriptor::continuous("x3"),
    ];
    Ok(SurfaceSample { data: RawDataset { name: "surface".into(), features, x, y, rejected: 0 }, latent })
}

impl SurfaceSample {
    pub fn point(&self, i: usize) -> Array1<f64> {
        self.data.x.row(i).to_owned()
    }
}
