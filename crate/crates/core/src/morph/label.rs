//! Two-pass union-find connected-component labeling.

use crate::error::{Error, Result};
use crate::imgio::{Dims, ImageStack, LabelMap};

/// Label map plus object count; labels run 1..=count in raster order of each
/// object's first pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledObjects {
    pub labels: LabelMap,
    pub count: usize,
}

impl LabeledObjects {
    pub fn dims(&self) -> Dims {
        self.labels.dims
    }

    /// Flat pixel indices of each object, in raster order; entry `i` is label `i + 1`.
    pub fn pixel_lists(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.count];
        for (i, &l) in self.labels.data.iter().enumerate() {
            if l != 0 {
                out[l as usize - 1].push(i);
            }
        }
        out
    }

    /// Relabels an arbitrary label map so it satisfies the raster-order contract.
    pub fn from_label_map(map: &LabelMap) -> Self {
        let mut remap = std::collections::BTreeMap::new();
        let data = map
            .data
            .iter()
            .map(|&l| {
                if l == 0 {
                    0
                } else {
                    let next = remap.len() as u32 + 1;
                    *remap.entry(l).or_insert(next)
                }
            })
            .collect();
        Self { labels: LabelMap { data, dims: map.dims }, count: remap.len() }
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// Labels foreground pixels with full connectivity: 8 in 2D, 26 in 3D.
pub fn label_components(mask: &[bool], dims: Dims) -> Result<LabeledObjects> {
    if mask.len() != dims.len() {
        return Err(Error::DimMismatch(format!("{} mask samples for {dims:?}", mask.len())));
    }
    let (w, h, d) = (dims.width as isize, dims.height as isize, dims.depth as isize);
    // neighbours preceding the current pixel in raster order
    let mut offsets = Vec::new();
    for dz in -1..=0isize {
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let before = dz < 0 || (dz == 0 && (dy < 0 || (dy == 0 && dx < 0)));
                if before && (d > 1 || dz == 0) {
                    offsets.push((dx, dy, dz));
                }
            }
        }
    }
    let mut provisional = vec![0u32; mask.len()];
    let mut parent: Vec<u32> = vec![0];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let i = ((z * h + y) * w + x) as usize;
                if !mask[i] {
                    continue;
                }
                let mut current = 0u32;
                for &(dx, dy, dz) in &offsets {
                    let (nx, ny, nz) = (x + dx, y + dy, z + dz);
                    if nx < 0 || ny < 0 || nz < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let l = provisional[((nz * h + ny) * w + nx) as usize];
                    if l == 0 {
                        continue;
                    }
                    if current == 0 {
                        current = l;
                    } else {
                        union(&mut parent, current, l);
                    }
                }
                if current == 0 {
                    current = parent.len() as u32;
                    parent.push(current);
                }
                provisional[i] = current;
            }
        }
    }
    let mut final_of = vec![0u32; parent.len()];
    let mut count = 0u32;
    for l in provisional.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = find(&mut parent, *l) as usize;
        if final_of[root] == 0 {
            count += 1;
            final_of[root] = count;
        }
        *l = final_of[root];
    }
    Ok(LabeledObjects { labels: LabelMap { data: provisional, dims }, count: count as usize })
}

/// Labels a binary stack (samples 0 or 1).
pub fn label_stack(mask: &ImageStack) -> Result<LabeledObjects> {
    if mask.data().iter().any(|&v| v > 1) {
        return Err(Error::InvalidSpec("mask must contain only 0 and 1".into()));
    }
    let bits: Vec<bool> = mask.data().iter().map(|&v| v == 1).collect();
    label_components(&bits, mask.dims())
}
