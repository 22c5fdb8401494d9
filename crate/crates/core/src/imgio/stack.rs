use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
    pub depth: usize,
}

impl Dims {
    pub const fn new(width: usize, height: usize, depth: usize) -> Self {
        Self { width, height, depth }
    }

    pub const fn plane(width: usize, height: usize) -> Self {
        Self { width, height, depth: 1 }
    }

    pub const fn len(&self) -> usize {
        self.width * self.height * self.depth
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn slice_len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub const fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.height + y) * self.width + x
    }

    #[inline]
    pub const fn coords(&self, index: usize) -> (usize, usize, usize) {
        let plane = self.width * self.height;
        let z = index / plane;
        let r = index % plane;
        (r % self.width, r / self.width, z)
    }

    pub const fn is_3d(&self) -> bool {
        self.depth > 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub const fn bits(self) -> u8 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Sixteen => 16,
        }
    }

    pub const fn max_value(self) -> u16 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => u16::MAX,
        }
    }

    pub const fn bytes_per_sample(self) -> usize {
        match self {
            BitDepth::Eight => 1,
            BitDepth::Sixteen => 2,
        }
    }
}

impl TryFrom<u8> for BitDepth {
    type Error = String;

    fn try_from(bits: u8) -> std::result::Result<Self, String> {
        match bits {
            8 => Ok(BitDepth::Eight),
            16 => Ok(BitDepth::Sixteen),
            other => Err(format!("bit depth must be 8 or 16, got {other}")),
        }
    }
}

impl From<BitDepth> for u8 {
    fn from(b: BitDepth) -> u8 {
        b.bits()
    }
}

/// A 2D image (`depth == 1`) or 3D stack of unsigned samples, stored x-fastest,
/// then y, then z. 8-bit samples are held in `u16` storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    data: Vec<u16>,
    dims: Dims,
    bit_depth: BitDepth,
    voxel_size: [f64; 3],
}

impl ImageStack {
    pub fn new(data: Vec<u16>, dims: Dims, bit_depth: BitDepth) -> Result<Self> {
        if dims.width == 0 || dims.height == 0 || dims.depth == 0 {
            return Err(Error::InvalidSpec(format!("empty dimensions {dims:?}")));
        }
        if data.len() != dims.len() {
            return Err(Error::DimMismatch(format!(
                "{} samples for dims {}x{}x{}",
                data.len(),
                dims.width,
                dims.height,
                dims.depth
            )));
        }
        let max = bit_depth.max_value();
        if let Some(v) = data.iter().find(|&&v| v > max) {
            return Err(Error::InvalidSpec(format!("sample {v} exceeds {}-bit range", bit_depth.bits())));
        }
        Ok(Self { data, dims, bit_depth, voxel_size: [1.0; 3] })
    }

    /// Stack filled with a single value.
    pub fn filled(dims: Dims, bit_depth: BitDepth, value: u16) -> Result<Self> {
        Self::new(vec![value; dims.len()], dims, bit_depth)
    }

    pub fn with_voxel_size(mut self, voxel_size: [f64; 3]) -> Result<Self> {
        if voxel_size.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidSpec(format!("voxel size must be positive, got {voxel_size:?}")));
        }
        self.voxel_size = voxel_size;
        Ok(self)
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u16> {
        self.data
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn bit_depth(&self) -> BitDepth {
        self.bit_depth
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u16 {
        self.data[self.dims.index(x, y, z)]
    }

    pub fn slice(&self, z: usize) -> &[u16] {
        let n = self.dims.slice_len();
        &self.data[z * n..(z + 1) * n]
    }

    pub fn max_sample(&self) -> u16 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Raw payload size in bytes at the stack's bit depth.
    pub fn byte_len(&self) -> usize {
        self.data.len() * self.bit_depth.bytes_per_sample()
    }

    /// Samples converted to floating point.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    /// Same geometry and metadata, new samples.
    pub fn with_data(&self, data: Vec<u16>) -> Result<Self> {
        Ok(Self::new(data, self.dims, self.bit_depth)?.with_voxel_size(self.voxel_size)?)
    }
}

/// Per-pixel 32-bit object ids, 0 meaning background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub data: Vec<u32>,
    pub dims: Dims,
}

impl LabelMap {
    pub fn new(data: Vec<u32>, dims: Dims) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::DimMismatch(format!("{} labels for {dims:?}", data.len())));
        }
        Ok(Self { data, dims })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self { data: vec![0; dims.len()], dims }
    }

    /// Number of distinct nonzero labels.
    pub fn label_count(&self) -> usize {
        let mut seen: Vec<u32> = self.data.iter().copied().filter(|&l| l != 0).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    pub fn foreground(&self) -> Vec<bool> {
        self.data.iter().map(|&l| l != 0).collect()
    }
}
