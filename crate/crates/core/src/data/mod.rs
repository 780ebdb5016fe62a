//! Datasets: the synthetic surface with a hole, and the Adult and Give Me
//! Some Credit tables with their preprocessing.

mod adult;
mod dataset;
mod gmc;
mod surface;

pub use adult::{load_adult, parse_adult, ADULT_FEATURES};
pub use dataset::{
    split, FeatureDescriptor, FeatureKind, Normalizer, RawDataset, Split, SplitOutcome, TabularDataset,
};
pub use gmc::{load_gmc, parse_gmc, GmcOptions, GMC_FEATURES};
pub use surface::{generate_surface, surface_point, surface_label, SurfaceDomain, SurfaceSample, SyntheticSurfaceSpec};
