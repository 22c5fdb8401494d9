//! Aggregate segmentation parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morph::label::LabeledObjects;
use crate::morph::shape3d::exposed_faces;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaqueParams {
    /// Plaque voxels inside the organ.
    pub plaque_total_volume: f64,
    /// `plaque_total_volume / organ volume`.
    pub plaque_load: f64,
    /// Plaques with at least one voxel inside the organ.
    pub plaque_count: usize,
    /// `plaque_total_volume / plaque_count`, 0 without plaques.
    pub plaque_mean_volume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalParams {
    pub n_tot: usize,
    /// Segmented pixels (2D) or voxels (3D).
    pub a_tot: f64,
    /// Exposed voxel faces; 3D only.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sa_tot: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub plaque: Option<PlaqueParams>,
}

impl GlobalParams {
    /// `(name, value)` pairs in a fixed order for scoring.
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        let mut out = vec![("N_tot", self.n_tot as f64)];
        match self.sa_tot {
            None => out.push(("A_tot", self.a_tot)),
            Some(sa) => {
                out.push(("V_tot", self.a_tot));
                out.push(("SA_tot", sa));
            }
        }
        if let Some(p) = &self.plaque {
            out.extend([
                ("plaque_total_volume", p.plaque_total_volume),
                ("plaque_load", p.plaque_load),
                ("plaque_count", p.plaque_count as f64),
                ("plaque_mean_volume", p.plaque_mean_volume),
            ]);
        }
        out
    }
}

pub enum GlobalContext<'a> {
    Plain,
    /// Organ mask, same dims as the labels.
    Plaque(&'a [bool]),
}

pub fn global_params(objects: &LabeledObjects, context: GlobalContext<'_>) -> Result<GlobalParams> {
    let dims = objects.dims();
    let labels = &objects.labels.data;
    let fg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 0).collect();
    let sa_tot = dims.is_3d().then(|| {
        let f = exposed_faces(&fg, dims, |j| labels[j] != 0);
        (f[0] + f[1] + f[2]) as f64
    });
    let plaque = match context {
        GlobalContext::Plain => None,
        GlobalContext::Plaque(organ) => {
            if organ.len() != labels.len() {
                return Err(Error::DimMismatch("organ mask dims differ from labels".into()));
            }
            let organ_volume = organ.iter().filter(|&&o| o).count();
            if organ_volume == 0 {
                return Err(Error::EmptyOrgan);
            }
            let inside: Vec<usize> = fg.iter().copied().filter(|&i| organ[i]).collect();
            let mut ids: Vec<u32> = inside.iter().map(|&i| labels[i]).collect();
            ids.sort_unstable();
            ids.dedup();
            let total = inside.len() as f64;
            Some(PlaqueParams {
                plaque_total_volume: total,
                plaque_load: total / organ_volume as f64,
                plaque_count: ids.len(),
                plaque_mean_volume: if ids.is_empty() { 0.0 } else { total / ids.len() as f64 },
            })
        }
    };
    Ok(GlobalParams { n_tot: objects.count, a_tot: fg.len() as f64, sa_tot, plaque })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgio::{Dims, LabelMap};

    #[test]
    fn totals() {
        // areas 1, 2, 3
        let map = LabelMap::new(vec![1, 0, 2, 2, 0, 3, 3, 3], Dims::plane(8, 1)).unwrap();
        let objs = LabeledObjects { labels: map, count: 3 };
        let g = global_params(&objs, GlobalContext::Plain).unwrap();
        assert_eq!((g.n_tot, g.a_tot), (3, 6.0));
        assert_eq!(g.named()[1], ("A_tot", 6.0));
    }

    #[test]
    fn plaque_load() {
        let dims = Dims::new(10, 10, 10);
        let mut data = vec![0u32; 1000];
        for v in data.iter_mut().take(50) {
            *v = 1;
        }
        let objs = LabeledObjects { labels: LabelMap::new(data, dims).unwrap(), count: 1 };
        let organ = vec![true; 1000];
        let g = global_params(&objs, GlobalContext::Plaque(&organ)).unwrap();
        let p = g.plaque.unwrap();
        assert_eq!(p.plaque_total_volume, 50.0);
        assert!((p.plaque_load - 0.05).abs() < 1e-15);
        assert_eq!(p.plaque_mean_volume, p.plaque_total_volume / p.plaque_count as f64);
        assert!(g.sa_tot.is_some());
    }

    #[test]
    fn empty_organ() {
        let objs = LabeledObjects { labels: LabelMap::zeros(Dims::new(2, 2, 2)), count: 0 };
        assert!(matches!(global_params(&objs, GlobalContext::Plaque(&[false; 8])), Err(Error::EmptyOrgan)));
    }
}
