//! Per-object 3D descriptors: volume and exposed-face surface area.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::Dims;

pub const PARAM_NAMES_3D: [&str; 7] =
    ["volume", "volume_um3", "x_cm", "y_cm", "z_cm", "surface_area", "surface_area_um2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord3D {
    pub label: u32,
    /// Voxel count.
    pub volume: f64,
    pub volume_um3: f64,
    pub x_cm: f64,
    pub y_cm: f64,
    pub z_cm: f64,
    /// Voxel faces adjacent to background or the stack border.
    pub surface_area: f64,
    pub surface_area_um2: f64,
}

impl ObjectRecord3D {
    pub fn values(&self) -> [f64; 7] {
        [self.volume, self.volume_um3, self.x_cm, self.y_cm, self.z_cm, self.surface_area, self.surface_area_um2]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        PARAM_NAMES_3D.iter().position(|&n| n == name).map(|i| self.values()[i])
    }

    pub fn centroid(&self) -> [f64; 3] {
        [self.x_cm, self.y_cm, self.z_cm]
    }
}

/// Exposed faces of `voxels` per axis (x, y, z normal), with `member` telling
/// whether a voxel index belongs to the same object.
pub(crate) fn exposed_faces(voxels: &[usize], dims: Dims, member: impl Fn(usize) -> bool) -> [u64; 3] {
    let mut faces = [0u64; 3];
    for &i in voxels {
        let (x, y, z) = dims.coords(i);
        let neighbours = [
            (0, x > 0, i.wrapping_sub(1)),
            (0, x + 1 < dims.width, i + 1),
            (1, y > 0, i.wrapping_sub(dims.width)),
            (1, y + 1 < dims.height, i + dims.width),
            (2, z > 0, i.wrapping_sub(dims.slice_len())),
            (2, z + 1 < dims.depth, i + dims.slice_len()),
        ];
        for (axis, within, j) in neighbours {
            if !within || !member(j) {
                faces[axis] += 1;
            }
        }
    }
    faces
}

/// Descriptors of one object; `labels` is the full label map so face exposure
/// can be tested, `voxel_size` is `[x, y, z]` in µm.
pub fn object_params_3d(label: u32, voxels: &[usize], labels: &[u32], dims: Dims, voxel_size: [f64; 3]) -> Result<ObjectRecord3D> {
    if voxels.is_empty() {
        return Err(Error::InvalidSpec(format!("object {label} has no voxels")));
    }
    let n = voxels.len() as f64;
    let (mut sx, mut sy, mut sz) = (0.0, 0.0, 0.0);
    for &i in voxels {
        let (x, y, z) = dims.coords(i);
        sx += x as f64;
        sy += y as f64;
        sz += z as f64;
    }
    let faces = exposed_faces(voxels, dims, |j| labels[j] == label);
    let [vx, vy, vz] = voxel_size;
    Ok(ObjectRecord3D {
        label,
        volume: n,
        volume_um3: n * vx * vy * vz,
        x_cm: sx / n,
        y_cm: sy / n,
        z_cm: sz / n,
        surface_area: (faces[0] + faces[1] + faces[2]) as f64,
        surface_area_um2: faces[0] as f64 * vy * vz + faces[1] as f64 * vx * vz + faces[2] as f64 * vx * vy,
    })
}
