//! Noiseless synthetic scenes with aligned ground truth.
//!
//! Edges are anti-aliased by 4x4 (2D) or 4x4x4 (3D) sub-sample coverage so that
//! boundary pixels carry graded intensities. Ground truth labels are assigned by
//! pixel centre.

use serde::{Deserialize, Serialize};

use super::stack::{BitDepth, Dims, ImageStack, LabelMap};
use crate::error::{Error, Result};
use crate::mlseg::filters::gaussian_blur;
use crate::rng::StreamRng;

const SUB: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhantomKind {
    /// Random disks of radius `radius ± radius_jitter`.
    Disks2d {
        count: usize,
        radius: f64,
        #[serde(default)]
        radius_jitter: f64,
        #[serde(default = "default_true")]
        non_overlapping: bool,
        /// Minimum edge-to-edge gap between disks when non-overlapping.
        #[serde(default = "default_gap")]
        min_gap: f64,
    },
    /// Random ellipses with semi-axes in `[radius·(1−elongation), radius]`.
    Blobs2d {
        count: usize,
        radius: f64,
        #[serde(default = "default_elongation")]
        elongation: f64,
        #[serde(default = "default_true")]
        non_overlapping: bool,
        #[serde(default = "default_gap")]
        min_gap: f64,
    },
    Spheres3d {
        count: usize,
        radius: f64,
        #[serde(default)]
        radius_jitter: f64,
        #[serde(default = "default_true")]
        non_overlapping: bool,
        #[serde(default = "default_gap")]
        min_gap: f64,
    },
    /// Modified Shepp-Logan head; intensity `background + value·(foreground − background)`.
    SheppLogan2d,
    Flatfield { level: u16 },
}

fn default_true() -> bool {
    true
}
fn default_gap() -> f64 {
    2.0
}
fn default_elongation() -> f64 {
    0.4
}
fn default_bit_depth() -> BitDepth {
    BitDepth::Sixteen
}
fn default_depth() -> usize {
    1
}

/// JSON-serializable phantom description; see `docs/phantom_spec.md`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    #[serde(flatten)]
    pub kind: PhantomKind,
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_bit_depth")]
    pub bit_depth: BitDepth,
    /// Background level in ADU.
    #[serde(default)]
    pub background: u16,
    /// Object level in ADU.
    #[serde(default)]
    pub foreground: u16,
    /// Optional Gaussian blur (pixels) applied to the coverage map, widening graded edges.
    #[serde(default)]
    pub blur_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl PhantomSpec {
    pub fn dims(&self) -> Dims {
        Dims::new(self.width, self.height, self.depth)
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.depth == 0 {
            return Err(Error::InvalidSpec("phantom dimensions must be positive".into()));
        }
        let max = self.bit_depth.max_value();
        if self.background > max || self.foreground > max {
            return Err(Error::InvalidSpec(format!(
                "levels {}/{} exceed {}-bit range",
                self.background,
                self.foreground,
                self.bit_depth.bits()
            )));
        }
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return Err(Error::InvalidSpec("blur_sigma must be non-negative".into()));
        }
        match &self.kind {
            PhantomKind::Disks2d { radius, radius_jitter, .. } | PhantomKind::Spheres3d { radius, radius_jitter, .. } => {
                if !(*radius > 0.0) || *radius_jitter < 0.0 || radius_jitter >= radius {
                    return Err(Error::InvalidSpec("radius must be positive and exceed its jitter".into()));
                }
            }
            PhantomKind::Blobs2d { radius, elongation, .. } => {
                if !(*radius > 0.0) || !(0.0..1.0).contains(elongation) {
                    return Err(Error::InvalidSpec("blob radius must be positive, elongation in [0,1)".into()));
                }
            }
            PhantomKind::Flatfield { level } if *level > max => {
                return Err(Error::InvalidSpec(format!("flatfield level {level} exceeds range")));
            }
            _ => {}
        }
        if matches!(self.kind, PhantomKind::Spheres3d { .. }) != (self.depth > 1)
            && !matches!(self.kind, PhantomKind::Flatfield { .. })
        {
            return Err(Error::InvalidSpec("spheres3d requires depth > 1; 2D kinds require depth 1".into()));
        }
        Ok(())
    }
}

/// Modified Shepp-Logan ellipses: (value, a, b, x0, y0, phi degrees), unit-disk coordinates.
pub const SHEPP_LOGAN_MODIFIED: [[f64; 6]; 10] = [
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0],
    [-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0],
    [-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0],
    [0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0],
    [0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0],
    [0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0],
    [0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0],
    [0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0],
    [0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0],
];

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    cz: f64,
    a: f64,
    b: f64,
    c: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn disk(cx: f64, cy: f64, r: f64) -> Self {
        Self { cx, cy, cz: 0.0, a: r, b: r, c: 1.0, cos: 1.0, sin: 0.0 }
    }

    fn sphere(cx: f64, cy: f64, cz: f64, r: f64) -> Self {
        Self { cx, cy, cz, a: r, b: r, c: r, cos: 1.0, sin: 0.0 }
    }

    #[inline]
    fn contains(&self, x: f64, y: f64, z: f64) -> bool {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        let w = (z - self.cz) / self.c;
        (u / self.a).powi(2) + (v / self.b).powi(2) + w * w <= 1.0
    }

    fn bound(&self) -> f64 {
        self.a.max(self.b)
    }
}

/// Rasterized modified Shepp-Logan phantom of side `n`, values in `[0, 1]`.
pub fn shepp_logan_image(n: usize) -> Vec<f64> {
    let ellipses: Vec<(f64, Ellipse)> = SHEPP_LOGAN_MODIFIED
        .iter()
        .map(|&[v, a, b, x0, y0, phi]| {
            let t = phi.to_radians();
            (v, Ellipse { cx: x0, cy: y0, cz: 0.0, a, b, c: 1.0, cos: t.cos(), sin: t.sin() })
        })
        .collect();
    let nf = n as f64;
    let mut out = vec![0.0; n * n];
    for row in 0..n {
        for col in 0..n {
            let mut acc = 0.0;
            for sy in 0..SUB {
                for sx in 0..SUB {
                    let px = col as f64 + (sx as f64 + 0.5) / SUB as f64;
                    let py = row as f64 + (sy as f64 + 0.5) / SUB as f64;
                    let x = 2.0 * px / nf - 1.0;
                    let y = 1.0 - 2.0 * py / nf;
                    acc += ellipses.iter().filter(|(_, e)| e.contains(x, y, 0.0)).map(|(v, _)| v).sum::<f64>();
                }
            }
            out[row * n + col] = acc / (SUB * SUB) as f64;
        }
    }
    out
}

fn shepp_logan_labels(n: usize) -> Vec<u32> {
    let nf = n as f64;
    let ellipses: Vec<Ellipse> = SHEPP_LOGAN_MODIFIED
        .iter()
        .map(|&[_, a, b, x0, y0, phi]| {
            let t = phi.to_radians();
            Ellipse { cx: x0, cy: y0, cz: 0.0, a, b, c: 1.0, cos: t.cos(), sin: t.sin() }
        })
        .collect();
    let mut out = vec![0u32; n * n];
    for row in 0..n {
        for col in 0..n {
            let x = 2.0 * (col as f64 + 0.5) / nf - 1.0;
            let y = 1.0 - 2.0 * (row as f64 + 0.5) / nf;
            out[row * n + col] =
                ellipses.iter().rposition(|e| e.contains(x, y, 0.0)).map_or(0, |i| i as u32 + 1);
        }
    }
    out
}

fn place_objects(spec: &PhantomSpec, rng: &mut StreamRng) -> Result<Vec<Ellipse>> {
    let dims = spec.dims();
    let (count, non_overlapping, min_gap) = match spec.kind {
        PhantomKind::Disks2d { count, non_overlapping, min_gap, .. }
        | PhantomKind::Blobs2d { count, non_overlapping, min_gap, .. }
        | PhantomKind::Spheres3d { count, non_overlapping, min_gap, .. } => (count, non_overlapping, min_gap),
        _ => unreachable!("only object phantoms are placed"),
    };
    let mut placed: Vec<Ellipse> = Vec::with_capacity(count);
    let max_attempts = 10_000 * count.max(1);
    let mut attempts = 0;
    while placed.len() < count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::InvalidSpec(format!(
                "could only place {} of {count} non-overlapping objects",
                placed.len()
            )));
        }
        let obj = match spec.kind {
            PhantomKind::Disks2d { radius, radius_jitter, .. } => {
                let r = radius + radius_jitter * (2.0 * rng.uniform() - 1.0);
                let cx = r + 1.0 + rng.uniform() * (dims.width as f64 - 2.0 * r - 2.0);
                let cy = r + 1.0 + rng.uniform() * (dims.height as f64 - 2.0 * r - 2.0);
                Ellipse::disk(cx, cy, r)
            }
            PhantomKind::Blobs2d { radius, elongation, .. } => {
                let a = radius;
                let b = radius * (1.0 - elongation * rng.uniform());
                let t = std::f64::consts::PI * rng.uniform();
                let cx = a + 1.0 + rng.uniform() * (dims.width as f64 - 2.0 * a - 2.0);
                let cy = a + 1.0 + rng.uniform() * (dims.height as f64 - 2.0 * a - 2.0);
                Ellipse { cx, cy, cz: 0.0, a, b, c: 1.0, cos: t.cos(), sin: t.sin() }
            }
            PhantomKind::Spheres3d { radius, radius_jitter, .. } => {
                let r = radius + radius_jitter * (2.0 * rng.uniform() - 1.0);
                let mut span = |n: usize| r + 1.0 + rng.uniform() * (n as f64 - 2.0 * r - 2.0);
                let cx = span(dims.width);
                let cy = span(dims.height);
                let cz = span(dims.depth);
                Ellipse::sphere(cx, cy, cz, r)
            }
            _ => unreachable!(),
        };
        if obj.cx < 0.0 || obj.cy < 0.0 || obj.cz < 0.0 {
            return Err(Error::InvalidSpec("objects do not fit inside the image".into()));
        }
        if non_overlapping {
            let clash = placed.iter().any(|p| {
                let d = ((p.cx - obj.cx).powi(2) + (p.cy - obj.cy).powi(2) + (p.cz - obj.cz).powi(2)).sqrt();
                d < p.bound() + obj.bound() + min_gap
            });
            if clash {
                continue;
            }
        }
        placed.push(obj);
    }
    Ok(placed)
}

/// Coverage in `[0,1]` and centre-based labels for a set of objects.
fn rasterize(objects: &[Ellipse], dims: Dims) -> (Vec<f64>, Vec<u32>) {
    let mut coverage = vec![0.0; dims.len()];
    let mut labels = vec![0u32; dims.len()];
    let sub_z = if dims.is_3d() { SUB } else { 1 };
    let subs = (SUB * SUB * sub_z) as f64;
    // one bit per sub-sample, so overlapping objects form a union
    let mut inside = vec![0u64; dims.len()];
    for (id, obj) in objects.iter().enumerate() {
        let r = obj.bound() + 1.0;
        let lo = |c: f64| (c - r).floor().max(0.0) as usize;
        let hi = |c: f64, n: usize| ((c + r).ceil() as usize).min(n);
        let (z0, z1) = if dims.is_3d() { (lo(obj.cz), hi(obj.cz, dims.depth)) } else { (0, 1) };
        for z in z0..z1 {
            for y in lo(obj.cy)..hi(obj.cy, dims.height) {
                for x in lo(obj.cx)..hi(obj.cx, dims.width) {
                    let idx = dims.index(x, y, z);
                    let zc = if dims.is_3d() { z as f64 + 0.5 } else { 0.0 };
                    if obj.contains(x as f64 + 0.5, y as f64 + 0.5, zc) {
                        labels[idx] = id as u32 + 1;
                    }
                    for sz in 0..sub_z {
                        for sy in 0..SUB {
                            for sx in 0..SUB {
                                let px = x as f64 + (sx as f64 + 0.5) / SUB as f64;
                                let py = y as f64 + (sy as f64 + 0.5) / SUB as f64;
                                let pz = if dims.is_3d() { z as f64 + (sz as f64 + 0.5) / SUB as f64 } else { 0.0 };
                                if obj.contains(px, py, pz) {
                                    inside[idx] |= 1 << ((sz * SUB + sy) * SUB + sx);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    for (c, &bits) in coverage.iter_mut().zip(&inside) {
        *c = f64::from(bits.count_ones()) / subs;
    }
    (coverage, labels)
}

fn round_level(v: f64, max: u16) -> u16 {
    v.round_ties_even().clamp(0.0, f64::from(max)) as u16
}

/// Renders the noiseless scene and its ground-truth label map. Pure in `spec`.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(ImageStack, LabelMap)> {
    spec.validate()?;
    let dims = spec.dims();
    let max = spec.bit_depth.max_value();
    let bg = f64::from(spec.background);
    let fg = f64::from(spec.foreground);
    let (mut coverage, labels) = match &spec.kind {
        PhantomKind::Flatfield { level } => {
            let stack = ImageStack::filled(dims, spec.bit_depth, *level)?;
            return Ok((stack, LabelMap::zeros(dims)));
        }
        PhantomKind::SheppLogan2d => {
            if spec.width != spec.height {
                return Err(Error::InvalidSpec("shepp_logan2d requires a square image".into()));
            }
            (shepp_logan_image(spec.width), shepp_logan_labels(spec.width))
        }
        _ => {
            let mut rng = StreamRng::new(spec.seed, 0x5048_414e);
            let objects = place_objects(spec, &mut rng)?;
            rasterize(&objects, dims)
        }
    };
    if spec.blur_sigma > 0.0 {
        coverage = gaussian_blur(&coverage, dims, spec.blur_sigma, !dims.is_3d());
    }
    let data = coverage.iter().map(|&c| round_level(bg + c * (fg - bg), max)).collect();
    let stack = ImageStack::new(data, dims, spec.bit_depth)?;
    Ok((stack, LabelMap::new(labels, dims)?))
}
