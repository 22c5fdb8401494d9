//! Projection stacks: storage layout, per-slice reconstruction and volume normalization.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{default_output_size, fbp_reconstruct, forward_radon, FbpFilter, Sinogram};
use crate::error::{Error, Result};
use crate::imgio::{read_stack, write_stack, BitDepth, Dims, ImageStack};

/// Clipping percentiles of the volume normalization.
pub const NORMALIZE_PERCENTILES: (f64, f64) = (0.1, 99.9);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Page `z` is one camera frame at angle `z`: width = detector, height = slice.
    #[default]
    PerAngle,
    /// Page `z` is the sinogram of slice `z`: width = detector, height = angle.
    PerSlice,
}

/// JSON sidecar of a projection stack. Physical line integral = `(adu − offset)·scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinogramGeometry {
    pub angles: Vec<f64>,
    #[serde(default = "one")]
    pub spacing: f64,
    #[serde(default)]
    pub layout: Layout,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub offset: f64,
}

fn one() -> f64 {
    1.0
}

impl SinogramGeometry {
    fn shape(&self, dims: Dims) -> Result<(usize, usize)> {
        let (angles, slices) = match self.layout {
            Layout::PerAngle => (dims.depth, dims.height),
            Layout::PerSlice => (dims.height, dims.depth),
        };
        if angles != self.angles.len() {
            return Err(Error::GeometryMismatch(format!(
                "stack holds {angles} angles, geometry lists {}",
                self.angles.len()
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite() && self.offset.is_finite()) {
            return Err(Error::GeometryMismatch(format!("scale {} offset {}", self.scale, self.offset)));
        }
        Ok((angles, slices))
    }

    /// Sinogram of slice `s` in physical units.
    pub fn sinogram(&self, stack: &ImageStack, slice: usize) -> Result<Sinogram<f64>> {
        let dims = stack.dims();
        let (n_angles, _) = self.shape(dims)?;
        let n_det = dims.width;
        let mut data = Vec::with_capacity(n_angles * n_det);
        for a in 0..n_angles {
            for d in 0..n_det {
                let v = match self.layout {
                    Layout::PerAngle => stack.get(d, slice, a),
                    Layout::PerSlice => stack.get(d, a, slice),
                };
                data.push((f64::from(v) - self.offset) * self.scale);
            }
        }
        Sinogram::new(data, self.angles.clone(), n_det, self.spacing)
    }
}

/// Projects every z-slice of `volume` and quantizes to 16-bit ADU with the
/// largest line integral at `max_adu` and zero at `offset`.
pub fn project_volume(
    volume: &[f64],
    dims: Dims,
    angles: &[f64],
    layout: Layout,
    offset: u16,
    max_adu: u16,
) -> Result<(ImageStack, SinogramGeometry)> {
    if max_adu <= offset {
        return Err(Error::InvalidSpec("max_adu must exceed offset".into()));
    }
    let sinos: Vec<Sinogram<f64>> = (0..dims.depth)
        .map(|z| forward_radon(&volume[z * dims.slice_len()..(z + 1) * dims.slice_len()], dims.width, dims.height, angles))
        .collect::<Result<_>>()?;
    let peak = sinos.iter().flat_map(|s| s.data.iter().copied()).fold(0.0f64, f64::max);
    let scale = if peak > 0.0 { peak / f64::from(max_adu - offset) } else { 1.0 };
    let n_det = sinos[0].n_det;
    let (n_angles, n_slices) = (angles.len(), dims.depth);
    let out_dims = match layout {
        Layout::PerAngle => Dims::new(n_det, n_slices, n_angles),
        Layout::PerSlice => Dims::new(n_det, n_angles, n_slices),
    };
    let mut data = vec![0u16; out_dims.len()];
    for (s, sino) in sinos.iter().enumerate() {
        for a in 0..n_angles {
            for (d, &v) in sino.row(a).iter().enumerate() {
                let q = (f64::from(offset) + v / scale).round_ties_even().clamp(0.0, 65535.0) as u16;
                let i = match layout {
                    Layout::PerAngle => out_dims.index(d, s, a),
                    Layout::PerSlice => out_dims.index(d, a, s),
                };
                data[i] = q;
            }
        }
    }
    let geometry =
        SinogramGeometry { angles: angles.to_vec(), spacing: 1.0, layout, scale, offset: f64::from(offset) };
    Ok((ImageStack::new(data, out_dims, BitDepth::Sixteen)?, geometry))
}

/// Per-slice FBP in physical units; returns the volume and its dims.
pub fn reconstruct_volume(
    stack: &ImageStack,
    geometry: &SinogramGeometry,
    filter: FbpFilter,
    out_size: Option<usize>,
) -> Result<(Vec<f64>, Dims)> {
    let (_, n_slices) = geometry.shape(stack.dims())?;
    let n = out_size.unwrap_or_else(|| default_output_size(stack.dims().width));
    let slices: Vec<Vec<f64>> = (0..n_slices)
        .into_par_iter()
        .map(|s| fbp_reconstruct(&geometry.sinogram(stack, s)?, filter, n))
        .collect::<Result<_>>()?;
    Ok((slices.concat(), Dims::new(n, n, n_slices)))
}

/// Per-slice FBP followed by percentile-clipped min-max scaling to 16 bits.
pub fn reconstruct_stack(
    stack: &ImageStack,
    geometry: &SinogramGeometry,
    filter: FbpFilter,
    out_size: Option<usize>,
) -> Result<ImageStack> {
    let (volume, dims) = reconstruct_volume(stack, geometry, filter, out_size)?;
    ImageStack::new(normalize_volume(&volume), dims, BitDepth::Sixteen)
}

/// Linear-interpolated percentile (`p` in percent) of unsorted values.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let rank = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    v[lo] + (rank - lo as f64) * (v[hi] - v[lo])
}

/// Maps the 0.1 percentile to 0 and the 99.9 percentile to 65535, clipping outside.
pub fn normalize_volume(values: &[f64]) -> Vec<u16> {
    let lo = percentile(values, NORMALIZE_PERCENTILES.0);
    let hi = percentile(values, NORMALIZE_PERCENTILES.1);
    if !(hi > lo) {
        return vec![0; values.len()];
    }
    values
        .iter()
        .map(|&v| ((v - lo) / (hi - lo) * 65535.0).round_ties_even().clamp(0.0, 65535.0) as u16)
        .collect()
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes the stack as TIFF and its geometry next to it with a `.json` extension.
pub fn write_sinogram_stack(stack: &ImageStack, geometry: &SinogramGeometry, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    geometry.shape(stack.dims())?;
    write_stack(stack, path)?;
    let side = sidecar(path);
    fs::write(&side, serde_json::to_string_pretty(geometry)?).map_err(|e| Error::io(&side, e))
}

pub fn read_sinogram_stack(path: impl AsRef<Path>) -> Result<(ImageStack, SinogramGeometry)> {
    let path = path.as_ref();
    let stack = read_stack(path)?;
    let side = sidecar(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let geometry: SinogramGeometry = serde_json::from_str(&text)?;
    geometry.shape(stack.dims())?;
    Ok((stack, geometry))
}
