//! Monte-Carlo raw-equivalent replicates: each pixel value is redrawn from the
//! calibrated noise distribution centred on the observed value.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::NoiseModel;
use crate::error::{Error, Result};
use crate::imgio::{Dims, ImageStack};
use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(default = "default_replicates")]
    pub n_replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_clamp")]
    pub clamp: bool,
}

fn default_replicates() -> usize {
    10
}

fn default_clamp() -> bool {
    true
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { n_replicates: default_replicates(), seed: 0, clamp: true }
    }
}

impl SynthSpec {
    pub fn new(n_replicates: usize, seed: u64) -> Self {
        Self { n_replicates, seed, clamp: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_replicates < 2 {
            return Err(Error::TooFewReplicates { got: self.n_replicates, need: 2 });
        }
        if !self.clamp {
            return Err(Error::InvalidSpec("integer samples must be clamped to the bit-depth range".into()));
        }
        Ok(())
    }
}

/// One replicate: pixel `p` becomes `round_half_even(d + σ(d)·z)` with `z` keyed
/// by `(seed, replicate, p)`, clamped to the bit-depth range.
pub fn generate_replicate(raw: &ImageStack, model: &NoiseModel, seed: u64, replicate: usize) -> Result<ImageStack> {
    let rng = CounterRng::new(seed, replicate as u64);
    let top = f64::from(raw.bit_depth().max_value());
    let data = raw
        .data()
        .par_iter()
        .enumerate()
        .map(|(p, &v)| {
            let d = f64::from(v);
            let sigma = model.sigma_of(d);
            if sigma == 0.0 {
                return v;
            }
            (d + sigma * rng.normal(p as u64)).round_ties_even().clamp(0.0, top) as u16
        })
        .collect();
    raw.with_data(data)
}

/// Generates `spec.n_replicates` raw-equivalent images of `raw`.
pub fn generate_raw_equivalents(raw: &ImageStack, model: &NoiseModel, spec: &SynthSpec) -> Result<Vec<ImageStack>> {
    spec.validate()?;
    let max = f64::from(raw.max_sample());
    if model.saturation < max {
        return Err(Error::ModelMismatch(format!(
            "model saturation {} below image maximum {max}",
            model.saturation
        )));
    }
    (0..spec.n_replicates).map(|r| generate_replicate(raw, model, spec.seed, r)).collect()
}

/// Per-pixel replicate statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMap {
    pub dims: Dims,
    pub mean: Vec<f64>,
    /// Sample standard deviation (n−1 denominator).
    pub std: Vec<f64>,
    /// `std / mean`, 0 where the mean is 0.
    pub relative_error: Vec<f64>,
}

impl ErrorMap {
    pub fn mean_relative_error(&self) -> f64 {
        self.relative_error.iter().sum::<f64>() / self.relative_error.len() as f64
    }
}

pub fn relative_error_map(replicates: &[ImageStack]) -> Result<ErrorMap> {
    if replicates.len() < 2 {
        return Err(Error::TooFewReplicates { got: replicates.len(), need: 2 });
    }
    let dims = replicates[0].dims();
    if replicates.iter().any(|r| r.dims() != dims) {
        return Err(Error::DimMismatch("replicates differ in dims".into()));
    }
    let n = replicates.len() as f64;
    let (mean, std): (Vec<f64>, Vec<f64>) = (0..dims.len())
        .into_par_iter()
        .map(|p| {
            let m = replicates.iter().map(|r| f64::from(r.data()[p])).sum::<f64>() / n;
            let ss = replicates.iter().map(|r| (f64::from(r.data()[p]) - m).powi(2)).sum::<f64>();
            (m, (ss / (n - 1.0)).sqrt())
        })
        .unzip();
    let relative_error = mean.iter().zip(&std).map(|(&m, &s)| if m == 0.0 { 0.0 } else { s / m }).collect();
    Ok(ErrorMap { dims, mean, std, relative_error })
}
