//! Data-reduction paths under test: 16→8 bit conversion, baseline JPEG and the
//! noise-normalizing lossless codec, plus the `Δ/σ` artifact map.

pub mod bit8;
pub mod jpeg;
pub mod noisenorm;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calib::NoiseModel;
use crate::error::{Error, Result};
use crate::imgio::{BitDepth, Dims, ImageStack};

pub use bit8::{downsample_16_to_8, upsample_8_to_16};
pub use jpeg::{jpeg_roundtrip, jpeg_search_quality, jpeg_target_ratio};
pub use noisenorm::{noisenorm_roundtrip, NoiseNorm, Vst, DEFAULT_Q};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum CodecId {
    Identity,
    Bit8,
    Jpeg(u8),
    Noisenorm,
}

impl fmt::Display for CodecId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CodecId::Identity => f.write_str("identity"),
            CodecId::Bit8 => f.write_str("bit8"),
            CodecId::Jpeg(q) => write!(f, "jpeg:{q}"),
            CodecId::Noisenorm => f.write_str("noisenorm"),
        }
    }
}

impl FromStr for CodecId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(CodecId::Identity),
            "bit8" => Ok(CodecId::Bit8),
            "noisenorm" => Ok(CodecId::Noisenorm),
            _ => {
                let q = s
                    .strip_prefix("jpeg:")
                    .and_then(|q| q.parse::<u8>().ok())
                    .filter(|q| (1..=100).contains(q))
                    .ok_or_else(|| Error::InvalidSpec(format!("unknown codec `{s}`")))?;
                Ok(CodecId::Jpeg(q))
            }
        }
    }
}

impl TryFrom<String> for CodecId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<CodecId> for String {
    fn from(c: CodecId) -> String {
        c.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecResult {
    /// Codec output at the input dims; 8-bit for `bit8`, 16-bit otherwise.
    pub decoded: ImageStack,
    pub encoded_bytes: usize,
    /// Input bytes over encoded bytes.
    pub compression_ratio: f64,
    pub codec_id: CodecId,
}

impl CodecResult {
    pub(crate) fn new(input: &ImageStack, decoded: ImageStack, encoded_bytes: usize, codec_id: CodecId) -> Self {
        let compression_ratio = input.byte_len() as f64 / encoded_bytes.max(1) as f64;
        Self { decoded, encoded_bytes, compression_ratio, codec_id }
    }

    /// Decoded data in the 16-bit domain, upsampling 8-bit output.
    pub fn decoded_16(&self) -> ImageStack {
        match self.decoded.bit_depth() {
            BitDepth::Sixteen => self.decoded.clone(),
            BitDepth::Eight => upsample_8_to_16(&self.decoded).expect("8-bit input"),
        }
    }
}

/// Applies a codec by id. `model` and `seed` are used by `noisenorm` only.
pub fn apply_codec(id: CodecId, stack: &ImageStack, model: &NoiseModel, seed: u64) -> Result<CodecResult> {
    match id {
        CodecId::Identity => Ok(CodecResult::new(stack, stack.clone(), stack.byte_len(), id)),
        CodecId::Bit8 => downsample_16_to_8(stack),
        CodecId::Jpeg(q) => jpeg_roundtrip(stack, q),
        CodecId::Noisenorm => noisenorm_roundtrip(stack, model, seed),
    }
}

/// Per-pixel `(raw − decoded)/σ(raw)` with summary statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactMap {
    pub dims: Dims,
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub max_abs: f64,
}

pub fn artifact_map(raw: &ImageStack, decoded: &ImageStack, model: &NoiseModel) -> Result<ArtifactMap> {
    if raw.dims() != decoded.dims() {
        return Err(Error::DimMismatch(format!("raw {:?} vs decoded {:?}", raw.dims(), decoded.dims())));
    }
    let values: Vec<f64> = raw
        .data()
        .iter()
        .zip(decoded.data())
        .map(|(&r, &d)| {
            let delta = f64::from(r) - f64::from(d);
            let sigma = model.sigma_of(f64::from(r));
            if delta == 0.0 {
                0.0
            } else {
                delta / sigma
            }
        })
        .collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(ArtifactMap { dims: raw.dims(), values, mean, std, max_abs })
}

/// SNR loss in dB of `decoded` relative to `raw`, with SNR = mean/std over pixels.
/// Meaningful on flat fields.
pub fn snr_loss_db(raw: &ImageStack, decoded: &ImageStack) -> f64 {
    fn snr(data: &[u16]) -> f64 {
        let n = data.len() as f64;
        let mean = data.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let var = data.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / (n - 1.0);
        mean / var.sqrt()
    }
    20.0 * (snr(raw.data()) / snr(decoded.data())).log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codec_id_parse_and_display() {
        for s in ["bit8", "jpeg:75", "noisenorm", "identity"] {
            assert_eq!(s.parse::<CodecId>().unwrap().to_string(), s);
        }
        assert!("jpeg:0".parse::<CodecId>().is_err());
        assert!("jpeg:101".parse::<CodecId>().is_err());
        assert!("png".parse::<CodecId>().is_err());
        assert_eq!(serde_json::to_string(&CodecId::Jpeg(40)).unwrap(), "\"jpeg:40\"");
    }

    #[test]
    fn artifact_direct_formula() {
        // σ(1000) = 30
        let model = NoiseModel::parametric(0.891, 0.0, 9.0, 65535.0);
        let raw = ImageStack::new(vec![1000, 1000], Dims::plane(2, 1), BitDepth::Sixteen).unwrap();
        let dec = raw.with_data(vec![970, 1000]).unwrap();
        let m = artifact_map(&raw, &dec, &model).unwrap();
        assert!((m.values[0] - 1.0).abs() < 1e-9);
        assert_eq!(m.values[1], 0.0);
        assert!((m.max_abs - 1.0).abs() < 1e-9);
        let same = artifact_map(&raw, &raw, &model).unwrap();
        assert!(same.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn artifact_dim_mismatch() {
        let model = NoiseModel::parametric(1.0, 0.0, 9.0, 65535.0);
        let a = ImageStack::filled(Dims::plane(2, 2), BitDepth::Sixteen, 1).unwrap();
        let b = ImageStack::filled(Dims::plane(2, 3), BitDepth::Sixteen, 1).unwrap();
        assert!(matches!(artifact_map(&a, &b, &model), Err(Error::DimMismatch(_))));
    }
}
