//! Noise-calibrated tolerance scoring of lossy image compression for
//! pixel-classifier segmentation.
//!
//! The pipeline calibrates a sensor noise model, synthesizes raw-equivalent
//! replicates of a raw image, runs a trained random-forest segmentation on raw,
//! replicate and compressed data, and reports the standard score
//! `ε = (χ_raw − χ_c) / σ_raw` for every segmentation parameter χ.

pub mod calib;
pub mod codec;
pub mod error;
pub mod hash;
pub mod imgio;
pub mod mlseg;
pub mod morph;
pub mod optics;
pub mod pipeline;
pub mod real;
pub mod rng;
pub mod score;
pub mod synth;
pub mod tomo;

pub use error::{Error, Result};
pub use imgio::{BitDepth, Dims, ImageStack, LabelMap};
pub use real::Real;

/// Feature stack used by the segmentation pipeline.
pub type FeatureStack32 = mlseg::FeatureStack<f32>;
pub type FeatureStack64 = mlseg::FeatureStack<f64>;
/// Classifier over single-precision features, the pipeline default.
pub type PixelClassifier32 = mlseg::PixelClassifier<f32>;
pub type PixelClassifier64 = mlseg::PixelClassifier<f64>;
pub type Sinogram32 = tomo::Sinogram<f32>;
pub type Sinogram64 = tomo::Sinogram<f64>;
pub type ProfileFit64 = optics::ProfileFit<f64>;
