//! Connected components and segmentation parameters: per-object shape records
//! (2D), volume and surface records (3D), and global aggregates.

pub mod global;
pub mod hull;
pub mod label;
pub mod shape2d;
pub mod shape3d;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use global::{global_params, GlobalContext, GlobalParams, PlaqueParams};
pub use label::{label_components, label_stack, LabeledObjects};
pub use shape2d::{object_params_2d, ObjectRecord2D, PARAM_NAMES_2D};
pub use shape3d::{object_params_3d, ObjectRecord3D, PARAM_NAMES_3D};

/// Serializes NaN as `null` and reads `null` back as NaN.
pub(crate) mod nullable {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Per-object records of a labeled stack, 2D or 3D by its depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dimensionality", content = "objects")]
pub enum ObjectTable {
    #[serde(rename = "2d")]
    Planar(Vec<ObjectRecord2D>),
    #[serde(rename = "3d")]
    Volumetric(Vec<ObjectRecord3D>),
}

impl ObjectTable {
    pub fn len(&self) -> usize {
        match self {
            ObjectTable::Planar(v) => v.len(),
            ObjectTable::Volumetric(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            ObjectTable::Planar(_) => &PARAM_NAMES_2D,
            ObjectTable::Volumetric(_) => &PARAM_NAMES_3D,
        }
    }

    pub fn centroids(&self) -> Vec<[f64; 3]> {
        match self {
            ObjectTable::Planar(v) => v.iter().map(ObjectRecord2D::centroid).collect(),
            ObjectTable::Volumetric(v) => v.iter().map(ObjectRecord3D::centroid).collect(),
        }
    }

    /// Value of `param` for object `i`.
    pub fn value(&self, i: usize, param: &str) -> Option<f64> {
        match self {
            ObjectTable::Planar(v) => v.get(i)?.get(param),
            ObjectTable::Volumetric(v) => v.get(i)?.get(param),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let res = match self {
            ObjectTable::Planar(v) => v.iter().try_for_each(|r| w.serialize(r)),
            ObjectTable::Volumetric(v) => v.iter().try_for_each(|r| w.serialize(r)),
        };
        res.and_then(|_| w.flush().map_err(csv::Error::from)).map_err(|e| Error::EncodeFailure(e.to_string()))
    }
}

/// Measures every object; 3D stacks need the voxel size in µm.
pub fn measure_objects(objects: &LabeledObjects, voxel_size: [f64; 3]) -> Result<ObjectTable> {
    let dims = objects.dims();
    let lists = objects.pixel_lists();
    if dims.is_3d() {
        let recs = lists
            .par_iter()
            .enumerate()
            .map(|(i, px)| object_params_3d(i as u32 + 1, px, &objects.labels.data, dims, voxel_size))
            .collect::<Result<Vec<_>>>()?;
        Ok(ObjectTable::Volumetric(recs))
    } else {
        let recs = lists
            .par_iter()
            .enumerate()
            .map(|(i, px)| object_params_2d(i as u32 + 1, px, dims))
            .collect::<Result<Vec<_>>>()?;
        Ok(ObjectTable::Planar(recs))
    }
}

/// Labels, measures and aggregates a binary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub objects: LabeledObjects,
    pub table: ObjectTable,
    pub global: GlobalParams,
}

pub fn analyze_mask(
    mask: &[bool],
    dims: crate::imgio::Dims,
    voxel_size: [f64; 3],
    context: GlobalContext<'_>,
) -> Result<Segmentation> {
    let objects = label_components(mask, dims)?;
    let table = measure_objects(&objects, voxel_size)?;
    let global = global_params(&objects, context)?;
    Ok(Segmentation { objects, table, global })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgio::Dims;

    #[test]
    fn areas_sum_to_total() {
        let dims = Dims::plane(12, 6);
        let mask: Vec<bool> = (0..dims.len()).map(|i| (i * 7 + i / 5) % 3 == 0).collect();
        let seg = analyze_mask(&mask, dims, [1.0; 3], GlobalContext::Plain).unwrap();
        let ObjectTable::Planar(recs) = &seg.table else { panic!() };
        let sum: f64 = recs.iter().map(|r| r.area).sum();
        assert_eq!(sum, seg.global.a_tot);
        assert_eq!(sum as usize, mask.iter().filter(|&&m| m).count());
    }

    #[test]
    fn csv_has_19_parameter_columns() {
        let dims = Dims::plane(4, 4);
        let mask = vec![true; 16];
        let seg = analyze_mask(&mask, dims, [1.0; 3], GlobalContext::Plain).unwrap();
        let mut buf = Vec::new();
        seg.table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
        // label + degenerate flag + 19 parameters
        assert_eq!(header.len(), 21);
        assert_eq!(&header[2..], &PARAM_NAMES_2D);
    }

    #[test]
    fn nan_roundtrips_through_json_as_null() {
        let dims = Dims::plane(3, 3);
        let mut mask = vec![false; 9];
        mask[4] = true;
        let seg = analyze_mask(&mask, dims, [1.0; 3], GlobalContext::Plain).unwrap();
        let json = serde_json::to_string(&seg.table).unwrap();
        assert!(json.contains("\"aspect_ratio\":null"));
        let back: ObjectTable = serde_json::from_str(&json).unwrap();
        assert!(back.value(0, "aspect_ratio").unwrap().is_nan());
    }

    #[test]
    fn surface_additive_for_separated_objects() {
        let dims = Dims::new(6, 3, 3);
        let mut mask = vec![false; dims.len()];
        mask[dims.index(1, 1, 1)] = true;
        mask[dims.index(4, 1, 1)] = true;
        mask[dims.index(4, 1, 2)] = true;
        let seg = analyze_mask(&mask, dims, [1.0; 3], GlobalContext::Plain).unwrap();
        let ObjectTable::Volumetric(recs) = &seg.table else { panic!() };
        assert_eq!(recs.len(), 2);
        assert_eq!(seg.global.sa_tot.unwrap(), recs[0].surface_area + recs[1].surface_area);
        assert_eq!(recs[1].surface_area, 10.0);
    }
}
