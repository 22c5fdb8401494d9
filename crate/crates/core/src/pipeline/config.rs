//! Versioned pipeline configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::CodecId;
use crate::error::{Error, Result};
use crate::imgio::PhantomSpec;
use crate::mlseg::{FeatureRecipe, ForestParams, Operator};
use crate::tomo::{FbpFilter, Layout, MIN_ANGLES};

pub const CONFIG_VERSION: u32 = 1;

/// Bundled end-to-end demo: 2D disk phantom, simulated bench calibration, three codecs.
pub const DEMO_CONFIG: &str = include_str!("../../../../configs/demo.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    /// Global seed; every stage derives its own sub-seed from it by name.
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    pub input: InputConfig,
    pub noise_model: ModelConfig,
    #[serde(default)]
    pub synth: SynthConfig,
    pub codecs: Vec<CodecId>,
    /// Adds a JPEG codec whose quality is searched to reach this ratio on the raw input.
    #[serde(default)]
    pub jpeg_target_ratio: Option<f64>,
    pub classifier: ClassifierConfig,
    /// Class whose probability map is thresholded into objects.
    #[serde(default = "default_object_class")]
    pub object_class: String,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub matching: MatchingConfig,
    #[serde(default)]
    pub operators: Option<OperatorConfig>,
    #[serde(default)]
    pub tomography: Option<TomoConfig>,
}

fn default_object_class() -> String {
    "object".into()
}
fn default_threshold() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputConfig {
    Phantom { phantom: PhantomSpec },
    Image { image: PathBuf, #[serde(default)] ground_truth: Option<PathBuf> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    File { path: PathBuf },
    /// Simulated calibration bench, fitted like a measured one.
    Bench {
        gain: f64,
        read_sigma: f64,
        offset: f64,
        saturation: f64,
        #[serde(default = "default_levels")]
        levels: usize,
        #[serde(default = "default_frames")]
        frames: usize,
        #[serde(default = "default_sensor")]
        sensor: usize,
    },
}

fn default_levels() -> usize {
    20
}
fn default_frames() -> usize {
    100
}
fn default_sensor() -> usize {
    32
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_replicates: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { n_replicates: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassifierConfig {
    File { path: PathBuf },
    /// Trains on scribbles sampled from the ground truth of the raw input.
    Train {
        #[serde(default = "default_scribbles")]
        scribbles_per_class: usize,
        #[serde(default)]
        forest: ForestParams,
        #[serde(default)]
        recipe: Option<FeatureRecipe>,
    },
}

fn default_scribbles() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchingConfig {
    /// Largest centroid distance (px) for pairing objects.
    pub max_distance: f64,
    /// Δ histogram bin width; Scott's rule per parameter when absent.
    #[serde(default)]
    pub delta_bin_width: Option<f64>,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        Self { max_distance: 5.0, delta_bin_width: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub operators: Vec<Operator>,
    pub sigmas: Vec<f64>,
}

/// Projection-space scenario: the phantom is projected, noise and codecs act on the
/// projections, and segmentation runs on the reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomoConfig {
    pub n_angles: usize,
    #[serde(default = "default_span")]
    pub span: f64,
    #[serde(default)]
    pub filter: FbpFilter,
    #[serde(default)]
    pub layout: Layout,
    /// ADU of a zero line integral.
    #[serde(default = "default_tomo_offset")]
    pub offset: u16,
    /// ADU of the largest line integral.
    #[serde(default = "default_max_adu")]
    pub max_adu: u16,
    #[serde(default)]
    pub out_size: Option<usize>,
    /// In-plane region of the reconstruction kept for segmentation; none by default.
    #[serde(default)]
    pub crop: Option<Crop>,
}

/// Rectangle in pixels, applied to every slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Crop {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

fn default_span() -> f64 {
    180.0
}
fn default_tomo_offset() -> u16 {
    100
}
fn default_max_adu() -> u16 {
    40_000
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Parses a config file; relative paths are taken relative to its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// The bundled demo, writing into `output_dir`.
    pub fn demo(output_dir: impl Into<PathBuf>) -> Self {
        let mut cfg = Self::from_json(DEMO_CONFIG).expect("bundled demo config parses");
        cfg.output_dir = output_dir.into();
        cfg
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.output_dir);
        if let InputConfig::Image { image, ground_truth } = &mut self.input {
            resolve(base, image);
            if let Some(gt) = ground_truth {
                resolve(base, gt);
            }
        }
        if let ModelConfig::File { path } = &mut self.noise_model {
            resolve(base, path);
        }
        if let ClassifierConfig::File { path } = &mut self.classifier {
            resolve(base, path);
        }
    }

    fn has_ground_truth(&self) -> bool {
        match &self.input {
            InputConfig::Phantom { .. } => true,
            InputConfig::Image { ground_truth, .. } => ground_truth.is_some(),
        }
    }

    /// Checks everything that can be checked without computing: versions,
    /// ranges, referenced files.
    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::InvalidSpec(m));
        if self.version != CONFIG_VERSION {
            return invalid(format!("config version {} (expected {CONFIG_VERSION})", self.version));
        }
        if self.codecs.is_empty() && self.jpeg_target_ratio.is_none() {
            return invalid("at least one codec is required".into());
        }
        if let Some(r) = self.jpeg_target_ratio {
            if !(r > 1.0 && r.is_finite()) {
                return invalid(format!("jpeg_target_ratio {r} must exceed 1"));
            }
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return invalid(format!("threshold {} outside (0, 1]", self.threshold));
        }
        if self.synth.n_replicates < 2 {
            return Err(Error::TooFewReplicates { got: self.synth.n_replicates, need: 2 });
        }
        if !(self.matching.max_distance > 0.0) {
            return invalid("matching.max_distance must be positive".into());
        }
        if let Some(w) = self.matching.delta_bin_width {
            if !(w > 0.0) {
                return invalid("matching.delta_bin_width must be positive".into());
            }
        }
        if let Some(ops) = &self.operators {
            if ops.operators.is_empty() || ops.sigmas.is_empty() || ops.sigmas.iter().any(|s| !(*s > 0.0)) {
                return invalid("operators need at least one operator and positive sigmas".into());
            }
        }
        let need_file = |p: &Path, what: &str| -> Result<()> {
            if p.is_file() {
                Ok(())
            } else {
                Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, format!("{what} not found"))))
            }
        };
        match &self.input {
            InputConfig::Image { image, ground_truth } => {
                need_file(image, "input image")?;
                if let Some(gt) = ground_truth {
                    need_file(gt, "ground truth")?;
                }
            }
            InputConfig::Phantom { phantom } => {
                if self.tomography.is_some() && phantom.width != phantom.height {
                    return Err(Error::NonSquare { width: phantom.width, height: phantom.height });
                }
            }
        }
        match &self.noise_model {
            ModelConfig::File { path } => need_file(path, "noise model")?,
            ModelConfig::Bench { gain, read_sigma, saturation, levels, frames, sensor, .. } => {
                if !(*gain > 0.0 && *read_sigma >= 0.0 && *saturation > 0.0) || *frames < 2 || *sensor == 0 {
                    return invalid("bench needs gain > 0, read_sigma >= 0, saturation > 0, frames >= 2".into());
                }
                if *levels < crate::calib::MIN_LEVELS {
                    return Err(Error::InsufficientLevels { usable: *levels, required: crate::calib::MIN_LEVELS });
                }
            }
        }
        match &self.classifier {
            ClassifierConfig::File { path } => need_file(path, "classifier")?,
            ClassifierConfig::Train { scribbles_per_class, recipe, forest } => {
                if !self.has_ground_truth() {
                    return invalid("training needs a phantom or a ground-truth label image".into());
                }
                if *scribbles_per_class == 0 || forest.n_trees == 0 {
                    return invalid("training needs scribbles and at least one tree".into());
                }
                if let Some(r) = recipe {
                    r.validate()?;
                }
            }
        }
        if let Some(t) = &self.tomography {
            if t.n_angles < MIN_ANGLES {
                return Err(Error::TooFewAngles { got: t.n_angles, need: MIN_ANGLES });
            }
            if !(t.span > 0.0 && t.span <= 360.0) {
                return invalid(format!("tomography span {} outside (0, 360]", t.span));
            }
            if t.max_adu <= t.offset {
                return invalid("tomography max_adu must exceed offset".into());
            }
            let size = match &self.input {
                InputConfig::Phantom { phantom } => t.out_size.unwrap_or(phantom.width),
                InputConfig::Image { .. } => return invalid("tomography runs on phantom input".into()),
            };
            if let Some(c) = t.crop {
                if c.width == 0 || c.height == 0 || c.x + c.width > size || c.y + c.height > size {
                    return invalid(format!("crop {c:?} outside the {size}x{size} reconstruction"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_parses_and_validates() {
        let cfg = PipelineConfig::demo("out");
        cfg.validate().unwrap();
        assert_eq!(cfg.codecs.len() + usize::from(cfg.jpeg_target_ratio.is_some()), 3);
    }

    #[test]
    fn missing_model_file_fails_validation() {
        let mut cfg = PipelineConfig::demo("out");
        cfg.noise_model = ModelConfig::File { path: "/nonexistent/model.json".into() };
        assert!(matches!(cfg.validate(), Err(Error::IoFailure { .. })));
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(DEMO_CONFIG).unwrap();
        v["surprise"] = serde_json::json!(1);
        assert!(PipelineConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let mut cfg = PipelineConfig::demo("out");
        cfg.noise_model = ModelConfig::File { path: "m.json".into() };
        cfg.resolve_paths(Path::new("/data/run"));
        assert_eq!(cfg.output_dir, PathBuf::from("/data/run/out"));
        assert_eq!(cfg.noise_model, ModelConfig::File { path: "/data/run/m.json".into() });
    }
}
