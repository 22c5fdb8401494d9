//! Noise-normalizing codec.
//!
//! 1. Prepare: variance-stabilize with `t(d) = (2/K)·√(K(d−d₀) + σ_read²)`, so
//!    noise is ≈ 1 in t-units, then quantize with step `q` and subtractive dither
//!    keyed by `(seed, pixel)`.
//! 2. Encode the integer plane losslessly: left/up prediction, zigzag residuals,
//!    deflate.
//! 3. Decode: inflate, undo prediction, de-quantize with the same dither, invert `t`.
//!
//! The container is `NNC1` followed by a fixed header and the payload.

use std::io::{Read, Write};

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;
use rayon::prelude::*;

use crate::calib::{NoiseMode, NoiseModel};
use crate::codec::{CodecId, CodecResult};
use crate::error::{Error, Result};
use crate::hash::sha256;
use crate::imgio::{BitDepth, Dims, ImageStack};
use crate::rng::CounterRng;

pub const DEFAULT_Q: f64 = 1.0;
pub const MAGIC: &[u8; 4] = b"NNC1";
/// Entropy backend id: zlib/deflate.
pub const BACKEND_DEFLATE: u8 = 1;
const DITHER_STREAM: u64 = 0x4449_5448;
const HEADER_LEN: usize = 4 + 12 + 1 + 32 + 8 + 8 + 1 + 8;

/// Variance-stabilizing transform and its inverse.
#[derive(Debug, Clone)]
pub enum Vst {
    /// Closed form, extended below `d₀` with the tangent line.
    Parametric { gain: f64, offset: f64, read_sd: f64 },
    /// `∫ 1/σ` tabulated at integer ADU.
    Table(Vec<f64>),
}

impl Vst {
    pub fn new(model: &NoiseModel) -> Result<Self> {
        match model.mode {
            NoiseMode::Parametric => {
                if !(model.gain > 0.0 && model.read_variance > 0.0) {
                    return Err(Error::ModelMismatch("stabilizer needs K > 0 and σ_read > 0".into()));
                }
                Ok(Vst::Parametric { gain: model.gain, offset: model.offset, read_sd: model.read_variance.sqrt() })
            }
            NoiseMode::Empirical => {
                let mut table = Vec::with_capacity(65536);
                let mut acc = 0.0;
                let mut prev = 1.0 / positive_sigma(model, 0.0)?;
                table.push(0.0);
                for d in 1..=65535u32 {
                    let inv = 1.0 / positive_sigma(model, f64::from(d))?;
                    acc += 0.5 * (prev + inv);
                    table.push(acc);
                    prev = inv;
                }
                Ok(Vst::Table(table))
            }
        }
    }

    pub fn forward(&self, d: f64) -> f64 {
        match self {
            Vst::Parametric { gain, offset, read_sd } => {
                let x = d - offset;
                if x >= 0.0 {
                    2.0 / gain * (gain * x + read_sd * read_sd).sqrt()
                } else {
                    2.0 * read_sd / gain + x / read_sd
                }
            }
            Vst::Table(t) => {
                let d = d.clamp(0.0, 65535.0);
                let i = (d.floor() as usize).min(65534);
                t[i] + (t[i + 1] - t[i]) * (d - i as f64)
            }
        }
    }

    pub fn inverse(&self, t: f64) -> f64 {
        match self {
            Vst::Parametric { gain, offset, read_sd } => {
                let t0 = 2.0 * read_sd / gain;
                if t >= t0 {
                    let s = gain * t / 2.0;
                    offset + (s * s - read_sd * read_sd) / gain
                } else {
                    offset + (t - t0) * read_sd
                }
            }
            Vst::Table(tab) => {
                if t <= tab[0] {
                    return 0.0;
                }
                let i = tab.partition_point(|&v| v <= t);
                if i >= tab.len() {
                    return 65535.0;
                }
                let (a, b) = (tab[i - 1], tab[i]);
                (i - 1) as f64 + (t - a) / (b - a)
            }
        }
    }
}

fn positive_sigma(model: &NoiseModel, d: f64) -> Result<f64> {
    let s = model.sigma_of(d);
    if s > 0.0 {
        Ok(s)
    } else {
        Err(Error::ModelMismatch(format!("σ({d}) is not positive")))
    }
}

/// A configured codec instance.
#[derive(Debug, Clone)]
pub struct NoiseNorm {
    vst: Vst,
    model_hash: [u8; 32],
    saturation: f64,
    pub q: f64,
    pub seed: u64,
}

/// Output of the prepare stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    /// Quantization indices, the plane that is entropy coded.
    pub indices: Vec<i32>,
    /// The de-quantized image; what decoding reproduces bit-exactly.
    pub image: ImageStack,
}

impl NoiseNorm {
    pub fn new(model: &NoiseModel, q: f64, seed: u64) -> Result<Self> {
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::InvalidSpec(format!("quantization step {q} must be positive")));
        }
        Ok(Self {
            vst: Vst::new(model)?,
            model_hash: sha256(&serde_json::to_vec(model)?),
            saturation: model.saturation,
            q,
            seed,
        })
    }

    fn dither(&self) -> CounterRng {
        CounterRng::new(self.seed, DITHER_STREAM)
    }

    fn check(&self, stack: &ImageStack) -> Result<()> {
        if stack.bit_depth() != BitDepth::Sixteen {
            return Err(Error::WrongBitDepth { expected: 16, actual: stack.bit_depth().bits() });
        }
        if f64::from(stack.max_sample()) > self.saturation {
            return Err(Error::ModelMismatch(format!(
                "image maximum {} above model saturation {}",
                stack.max_sample(),
                self.saturation
            )));
        }
        Ok(())
    }

    /// Stage 1: stabilize, dither and quantize.
    pub fn prepare(&self, stack: &ImageStack) -> Result<Prepared> {
        self.check(stack)?;
        let rng = self.dither();
        let indices: Vec<i32> = stack
            .data()
            .par_iter()
            .enumerate()
            .map(|(p, &v)| {
                let u = rng.uniform(p as u64);
                (self.vst.forward(f64::from(v)) / self.q + u).round_ties_even() as i32
            })
            .collect();
        let image = self.dequantize(&indices, stack)?;
        Ok(Prepared { indices, image })
    }

    fn dequantize(&self, indices: &[i32], like: &ImageStack) -> Result<ImageStack> {
        let rng = self.dither();
        let data = indices
            .par_iter()
            .enumerate()
            .map(|(p, &k)| {
                let t = (f64::from(k) - rng.uniform(p as u64)) * self.q;
                self.vst.inverse(t).round_ties_even().clamp(0.0, 65535.0) as u16
            })
            .collect();
        like.with_data(data)
    }

    /// Stages 1 and 2: the `NNC1` container for a stack.
    pub fn encode(&self, stack: &ImageStack) -> Result<(Vec<u8>, Prepared)> {
        let prepared = self.prepare(stack)?;
        let payload = encode_plane(&prepared.indices, stack.dims())?;
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
        out.extend_from_slice(MAGIC);
        let d = stack.dims();
        for v in [d.width, d.height, d.depth] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.push(stack.bit_depth().bits());
        out.extend_from_slice(&self.model_hash);
        out.extend_from_slice(&self.q.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.push(BACKEND_DEFLATE);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        Ok((out, prepared))
    }

    /// Stage 3. The container's model hash, `q` and seed must match this instance.
    pub fn decode(&self, bytes: &[u8]) -> Result<ImageStack> {
        let header = parse_header(bytes)?;
        if header.model_hash != self.model_hash {
            return Err(Error::ModelMismatch("container was encoded with a different noise model".into()));
        }
        if header.q != self.q || header.seed != self.seed {
            return Err(Error::ModelMismatch("container q or seed differs from decoder".into()));
        }
        let indices = decode_plane(&bytes[HEADER_LEN..], header.dims)?;
        let like = ImageStack::filled(header.dims, BitDepth::Sixteen, 0)?;
        self.dequantize(&indices, &like)
    }
}

/// Parsed container header.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub dims: Dims,
    pub bit_depth: u8,
    pub model_hash: [u8; 32],
    pub q: f64,
    pub seed: u64,
    pub backend: u8,
}

pub fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::CorruptFile("not an NNC1 container".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let dims = Dims::new(u32_at(4), u32_at(8), u32_at(12));
    let bit_depth = bytes[16];
    let model_hash: [u8; 32] = bytes[17..49].try_into().expect("32 bytes");
    let q = f64::from_bits(u64_at(49));
    let seed = u64_at(57);
    let backend = bytes[65];
    let len = u64_at(66) as usize;
    if dims.is_empty() || bit_depth != 16 {
        return Err(Error::CorruptFile("bad NNC1 dims or bit depth".into()));
    }
    if backend != BACKEND_DEFLATE {
        return Err(Error::UnsupportedFormat(format!("entropy backend {backend}")));
    }
    if bytes.len() != HEADER_LEN + len {
        return Err(Error::CorruptFile("NNC1 payload length mismatch".into()));
    }
    Ok(Header { dims, bit_depth, model_hash, q, seed, backend })
}

#[inline]
fn predict(plane: &[i32], x: usize, y: usize, w: usize) -> i64 {
    let i = y * w + x;
    match (x > 0, y > 0) {
        (true, true) => (i64::from(plane[i - 1]) + i64::from(plane[i - w])).div_euclid(2),
        (true, false) => i64::from(plane[i - 1]),
        (false, true) => i64::from(plane[i - w]),
        (false, false) => 0,
    }
}

#[inline]
fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

#[inline]
fn unzigzag(v: u64) -> i64 {
    ((v >> 1) as i64) ^ -((v & 1) as i64)
}

/// Residual bytes: one byte when the zigzag value is below 255, else 255 followed
/// by the value as 8 little-endian bytes.
fn encode_plane(indices: &[i32], dims: Dims) -> Result<Vec<u8>> {
    let (w, h) = (dims.width, dims.height);
    let mut raw = Vec::with_capacity(indices.len());
    for plane in indices.chunks(w * h) {
        for y in 0..h {
            for x in 0..w {
                let z = zigzag(i64::from(plane[y * w + x]) - predict(plane, x, y, w));
                if z < 255 {
                    raw.push(z as u8);
                } else {
                    raw.push(255);
                    raw.extend_from_slice(&z.to_le_bytes());
                }
            }
        }
    }
    let mut enc = ZlibEncoder::new(Vec::new(), Compression::best());
    enc.write_all(&raw).map_err(|e| Error::EncodeFailure(e.to_string()))?;
    enc.finish().map_err(|e| Error::EncodeFailure(e.to_string()))
}

fn decode_plane(payload: &[u8], dims: Dims) -> Result<Vec<i32>> {
    let mut raw = Vec::new();
    ZlibDecoder::new(payload).read_to_end(&mut raw).map_err(|e| Error::CorruptFile(e.to_string()))?;
    let (w, h) = (dims.width, dims.height);
    let mut out = vec![0i32; dims.len()];
    let mut pos = 0;
    let corrupt = || Error::CorruptFile("NNC1 residual stream truncated".into());
    for plane in out.chunks_mut(w * h) {
        for y in 0..h {
            for x in 0..w {
                let b = *raw.get(pos).ok_or_else(corrupt)?;
                pos += 1;
                let z = if b < 255 {
                    u64::from(b)
                } else {
                    let bytes = raw.get(pos..pos + 8).ok_or_else(corrupt)?;
                    pos += 8;
                    u64::from_le_bytes(bytes.try_into().expect("8 bytes"))
                };
                let v = unzigzag(z) + predict(plane, x, y, w);
                plane[y * w + x] = i32::try_from(v).map_err(|_| Error::CorruptFile("index overflow".into()))?;
            }
        }
    }
    if pos != raw.len() {
        return Err(Error::CorruptFile("trailing NNC1 residual bytes".into()));
    }
    Ok(out)
}

/// Full round trip at the default step; the ratio counts the whole container.
pub fn noisenorm_roundtrip(stack: &ImageStack, model: &NoiseModel, seed: u64) -> Result<CodecResult> {
    noisenorm_roundtrip_q(stack, model, seed, DEFAULT_Q)
}

pub fn noisenorm_roundtrip_q(stack: &ImageStack, model: &NoiseModel, seed: u64, q: f64) -> Result<CodecResult> {
    let codec = NoiseNorm::new(model, q, seed)?;
    let (bytes, _) = codec.encode(stack)?;
    let decoded = codec.decode(&bytes)?.with_voxel_size(stack.voxel_size())?;
    Ok(CodecResult::new(stack, decoded, bytes.len(), CodecId::Noisenorm))
}
