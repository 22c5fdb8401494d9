//! Per-object 2D shape descriptors in particle-analysis conventions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::Dims;
use crate::morph::hull::{convex_hull, max_caliper, min_caliper, polygon_area, Point};
use crate::morph::nullable;

pub const PARAM_NAMES_2D: [&str; 19] = [
    "area",
    "X_CM",
    "Y_CM",
    "perimeter",
    "major",
    "minor",
    "angle",
    "circularity",
    "feret",
    "feret_x",
    "feret_y",
    "feret_angle",
    "min_feret",
    "aspect_ratio",
    "roundness",
    "solidity",
    "feret_ar",
    "compactness",
    "extent",
];

/// Shape record of one 2D object. Lengths in px, angles in degrees in
/// `[0, 180)` counter-clockwise from +x (y pointing up). `degenerate` marks
/// objects whose fitted ellipse has zero minor axis; ratios over it are NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord2D {
    pub label: u32,
    pub degenerate: bool,
    pub area: f64,
    #[serde(rename = "X_CM")]
    pub x_cm: f64,
    #[serde(rename = "Y_CM")]
    pub y_cm: f64,
    pub perimeter: f64,
    pub major: f64,
    pub minor: f64,
    pub angle: f64,
    pub circularity: f64,
    pub feret: f64,
    pub feret_x: f64,
    pub feret_y: f64,
    pub feret_angle: f64,
    pub min_feret: f64,
    #[serde(with = "nullable")]
    pub aspect_ratio: f64,
    #[serde(with = "nullable")]
    pub roundness: f64,
    pub solidity: f64,
    pub feret_ar: f64,
    #[serde(with = "nullable")]
    pub compactness: f64,
    pub extent: f64,
}

impl ObjectRecord2D {
    pub fn values(&self) -> [f64; 19] {
        [
            self.area,
            self.x_cm,
            self.y_cm,
            self.perimeter,
            self.major,
            self.minor,
            self.angle,
            self.circularity,
            self.feret,
            self.feret_x,
            self.feret_y,
            self.feret_angle,
            self.min_feret,
            self.aspect_ratio,
            self.roundness,
            self.solidity,
            self.feret_ar,
            self.compactness,
            self.extent,
        ]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        PARAM_NAMES_2D.iter().position(|&n| n == name).map(|i| self.values()[i])
    }

    pub fn centroid(&self) -> [f64; 3] {
        [self.x_cm, self.y_cm, 0.0]
    }
}

/// Outer boundary of an 8-connected pixel set as crack-polygon vertices at
/// direction changes, traced clockwise on screen starting at the top-left pixel.
pub fn trace_outline(pixels: &[(i64, i64)]) -> Vec<Point> {
    let (x0, y0) = pixels.iter().fold((i64::MAX, i64::MAX), |m, &(x, y)| (m.0.min(x), m.1.min(y)));
    let (x1, y1) = pixels.iter().fold((i64::MIN, i64::MIN), |m, &(x, y)| (m.0.max(x), m.1.max(y)));
    let w = (x1 - x0 + 1) as usize;
    let h = (y1 - y0 + 1) as usize;
    let mut bitmap = vec![false; w * h];
    for &(x, y) in pixels {
        bitmap[(y - y0) as usize * w + (x - x0) as usize] = true;
    }
    let inside = |x: i64, y: i64| {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && bitmap[y as usize * w + x as usize]
    };
    let start = (0..h as i64)
        .flat_map(|y| (0..w as i64).map(move |x| (x, y)))
        .find(|&(x, y)| inside(x, y))
        .expect("non-empty object");
    let start_dir = (1i64, 0i64);
    let (mut v, mut dir) = (start, start_dir);
    let mut vertices = vec![(start.0 + x0, start.1 + y0)];
    loop {
        v = (v.0 + dir.0, v.1 + dir.1);
        let right = (-dir.1, dir.0);
        let left = (dir.1, -dir.0);
        let cell = |side: (i64, i64)| (v.0 + dir.0.min(0) + side.0.min(0), v.1 + dir.1.min(0) + side.1.min(0));
        let ahead_left = cell(left);
        let ahead_right = cell(right);
        let next = if inside(ahead_left.0, ahead_left.1) {
            left
        } else if inside(ahead_right.0, ahead_right.1) {
            dir
        } else {
            right
        };
        if v == start && next == start_dir {
            break;
        }
        if next != dir {
            vertices.push((v.0 + x0, v.1 + y0));
        }
        dir = next;
    }
    vertices
}

/// Traced perimeter: `Σ|dx| + Σ|dy| − corners·(2 − √2)`.
pub fn traced_perimeter(poly: &[Point]) -> f64 {
    let n = poly.len();
    let (mut sumdx, mut sumdy, mut corners) = (0i64, 0i64, 0i64);
    let mut d1 = (poly[0].0 - poly[n - 1].0, poly[0].1 - poly[n - 1].1);
    let mut side1 = d1.0.abs() + d1.1.abs();
    let mut corner = false;
    for i in 0..n {
        let j = (i + 1) % n;
        let d2 = (poly[j].0 - poly[i].0, poly[j].1 - poly[i].1);
        sumdx += d1.0.abs();
        sumdy += d1.1.abs();
        let side2 = d2.0.abs() + d2.1.abs();
        if side1 > 1 || !corner {
            corner = true;
            corners += 1;
        } else {
            corner = false;
        }
        d1 = d2;
        side1 = side2;
    }
    (sumdx + sumdy) as f64 - corners as f64 * (2.0 - std::f64::consts::SQRT_2)
}

fn wrap_degrees(a: f64) -> f64 {
    let a = a.rem_euclid(180.0);
    if a >= 180.0 {
        0.0
    } else {
        a
    }
}

/// Shape descriptors of one object given as flat pixel indices of a 2D image.
pub fn object_params_2d(label: u32, pixels: &[usize], dims: Dims) -> Result<ObjectRecord2D> {
    if pixels.is_empty() {
        return Err(Error::InvalidSpec(format!("object {label} has no pixels")));
    }
    if dims.depth != 1 {
        return Err(Error::DimMismatch("2D descriptors need a single plane".into()));
    }
    let coords: Vec<(i64, i64)> =
        pixels.iter().map(|&i| ((i % dims.width) as i64, (i / dims.width) as i64)).collect();
    let n = coords.len() as f64;
    let mx = coords.iter().map(|c| c.0 as f64).sum::<f64>() / n;
    let my = coords.iter().map(|c| c.1 as f64).sum::<f64>() / n;
    let (mut u20, mut u02, mut u11) = (0.0, 0.0, 0.0);
    for &(x, y) in &coords {
        let (dx, dy) = (x as f64 - mx, y as f64 - my);
        u20 += dx * dx;
        u02 += dy * dy;
        u11 += dx * dy;
    }
    u20 /= n;
    u02 /= n;
    u11 /= n;
    let half = 0.5 * (u20 + u02);
    let root = (0.25 * (u20 - u02).powi(2) + u11 * u11).sqrt();
    let l1 = (half + root).max(0.0);
    let l2 = (half - root).max(0.0);
    let degenerate = l2 <= 1e-12 * l1.max(1.0);
    let (major, minor) = if degenerate {
        (4.0 * l1.sqrt(), 0.0)
    } else {
        let s = (n / (4.0 * std::f64::consts::PI * (l1 * l2).sqrt())).sqrt();
        (4.0 * l1.sqrt() * s, 4.0 * l2.sqrt() * s)
    };
    // y up: the mixed moment changes sign
    let angle = wrap_degrees(0.5 * (-2.0 * u11).atan2(u20 - u02).to_degrees());

    let outline = trace_outline(&coords);
    let perimeter = traced_perimeter(&outline);
    let circularity = (4.0 * std::f64::consts::PI * n / (perimeter * perimeter)).min(1.0);

    let corners: Vec<Point> = outline.clone();
    let hull = convex_hull(&corners);
    let convex_area = polygon_area(&hull);
    let (feret, a, b) = max_caliper(&hull);
    let mut fa = ((-(b.1 - a.1)) as f64).atan2((b.0 - a.0) as f64).to_degrees();
    let start = if fa < 0.0 || fa >= 180.0 {
        fa = wrap_degrees(fa + 180.0);
        b
    } else {
        a
    };
    let min_feret = min_caliper(&hull);

    let (bx0, by0, bx1, by1) = coords.iter().fold((i64::MAX, i64::MAX, i64::MIN, i64::MIN), |m, &(x, y)| {
        (m.0.min(x), m.1.min(y), m.2.max(x), m.3.max(y))
    });
    let bbox = ((bx1 - bx0 + 1) * (by1 - by0 + 1)) as f64;
    let pi = std::f64::consts::PI;
    Ok(ObjectRecord2D {
        label,
        degenerate,
        area: n,
        x_cm: mx,
        y_cm: my,
        perimeter,
        major,
        minor,
        angle,
        circularity,
        feret,
        feret_x: start.0 as f64,
        feret_y: start.1 as f64,
        feret_angle: fa,
        min_feret,
        aspect_ratio: if degenerate { f64::NAN } else { major / minor },
        roundness: if major > 0.0 { 4.0 * n / (pi * major * major) } else { f64::NAN },
        solidity: (n / convex_area).min(1.0),
        feret_ar: feret / min_feret,
        compactness: if major > 0.0 { (4.0 * n / pi).sqrt() / major } else { f64::NAN },
        extent: n / bbox,
    })
}
