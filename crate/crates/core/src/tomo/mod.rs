//! Parallel-beam forward projection and filtered back projection.
//!
//! Image pixel `(x, y)` has centred coordinates `(x − c, y − c)` with
//! `c = (n − 1)/2`, `y` pointing down. A ray at angle `θ` reaches detector
//! position `s = (x − c)·cos θ + (y − c)·sin θ`, measured from the detector centre
//! `(n_det − 1)/2` in units of `spacing`.

mod volume;

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftNum, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

pub use volume::{
    normalize_volume, percentile, project_volume, read_sinogram_stack, reconstruct_stack, reconstruct_volume,
    write_sinogram_stack, Layout,
    SinogramGeometry, NORMALIZE_PERCENTILES,
};

pub const MIN_ANGLES: usize = 16;
const ANGLE_EPS: f64 = 1e-9;

/// Scalar usable for FFT-based filtering.
pub trait TomoReal: Real + FftNum {}
impl<T: Real + FftNum> TomoReal for T {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sinogram<T> {
    /// `n_angles × n_det`, one row per angle.
    pub data: Vec<T>,
    pub n_angles: usize,
    pub n_det: usize,
    /// Degrees, strictly increasing, span below 360.
    pub angles: Vec<f64>,
    /// Detector bin width in image pixels.
    pub spacing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FbpFilter {
    Ramp,
    #[default]
    Hann,
}

impl std::str::FromStr for FbpFilter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ramp" => Ok(Self::Ramp),
            "hann" => Ok(Self::Hann),
            other => Err(Error::InvalidSpec(format!("unknown filter {other:?} (ramp | hann)"))),
        }
    }
}

/// Detector bins covering the diagonal of an `n × n` image, with the same parity
/// as `n` so that image and detector centres fall on the same sub-pixel phase.
pub fn detector_count(n: usize) -> usize {
    let d = (n as f64 * std::f64::consts::SQRT_2).ceil() as usize + 1;
    d + (d + n) % 2
}

/// Largest square image whose diagonal fits on `n_det` bins of unit spacing.
pub fn default_output_size(n_det: usize) -> usize {
    ((n_det.saturating_sub(1)) as f64 / std::f64::consts::SQRT_2).floor() as usize
}

/// `count` uniformly spaced angles starting at 0 over `span` degrees (end excluded).
pub fn uniform_angles(count: usize, span: f64) -> Vec<f64> {
    (0..count).map(|i| span * i as f64 / count as f64).collect()
}

impl<T: TomoReal> Sinogram<T> {
    pub fn new(data: Vec<T>, angles: Vec<f64>, n_det: usize, spacing: f64) -> Result<Self> {
        let s = Self { n_angles: angles.len(), data, n_det, angles, spacing };
        s.validate()?;
        Ok(s)
    }

    pub fn zeros(angles: Vec<f64>, n_det: usize) -> Result<Self> {
        Self::new(vec![T::zero(); angles.len() * n_det], angles, n_det, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.angles.len() != self.n_angles || self.data.len() != self.n_angles * self.n_det {
            return Err(Error::GeometryMismatch(format!(
                "{} samples for {} angles x {} bins",
                self.data.len(),
                self.n_angles,
                self.n_det
            )));
        }
        if self.n_det == 0 || self.n_angles == 0 {
            return Err(Error::GeometryMismatch("empty sinogram".into()));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::GeometryMismatch(format!("detector spacing {}", self.spacing)));
        }
        if self.angles.iter().any(|a| !a.is_finite()) || self.angles.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::GeometryMismatch("angles must be finite and strictly increasing".into()));
        }
        if self.angles[self.n_angles - 1] - self.angles[0] >= 360.0 {
            return Err(Error::GeometryMismatch("angular span must be below 360 degrees".into()));
        }
        Ok(())
    }

    pub fn row(&self, a: usize) -> &[T] {
        &self.data[a * self.n_det..(a + 1) * self.n_det]
    }

    /// Sum of one projection.
    pub fn mass(&self, a: usize) -> T {
        self.row(a).iter().copied().sum()
    }

    /// `a·self + b·other` on identical geometry.
    pub fn combine(&self, a: T, other: &Self, b: T) -> Result<Self> {
        if self.angles != other.angles || self.n_det != other.n_det || self.spacing != other.spacing {
            return Err(Error::GeometryMismatch("sinograms differ in geometry".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(&x, &y)| a * x + b * y).collect();
        Ok(Self { data, ..self.clone() })
    }
}

/// Line-integral projection of a square image. Each pixel is rotated onto the
/// detector and its value split linearly between the two nearest bins, so every
/// projection conserves the image mass exactly.
pub fn forward_radon<T: TomoReal>(image: &[T], width: usize, height: usize, angles: &[f64]) -> Result<Sinogram<T>> {
    if width != height {
        return Err(Error::NonSquare { width, height });
    }
    if image.len() != width * height {
        return Err(Error::DimMismatch(format!("{} samples for {width}x{height}", image.len())));
    }
    let n = width;
    let n_det = detector_count(n);
    let c = (n as f64 - 1.0) / 2.0;
    let dc = (n_det as f64 - 1.0) / 2.0;
    let rows: Vec<Vec<T>> = angles
        .par_iter()
        .map(|&deg| {
            let (sin, cos) = deg.to_radians().sin_cos();
            let mut row = vec![T::zero(); n_det];
            for y in 0..n {
                let yc = y as f64 - c;
                for x in 0..n {
                    let v = image[y * n + x];
                    if v == T::zero() {
                        continue;
                    }
                    let pos = (x as f64 - c) * cos + yc * sin + dc;
                    let i0 = pos.floor();
                    let f = T::of(pos - i0);
                    let i0 = i0 as usize;
                    row[i0] = row[i0] + v * (T::one() - f);
                    if f != T::zero() {
                        row[i0 + 1] = row[i0 + 1] + v * f;
                    }
                }
            }
            row
        })
        .collect();
    Sinogram::new(rows.concat(), angles.to_vec(), n_det, 1.0)
}

fn ramp_response<T: TomoReal>(size: usize, filter: FbpFilter, fft: &Arc<dyn Fft<T>>) -> Vec<T> {
    // spatial Ram-Lak kernel, whose spectrum approximates |ν| without a DC offset
    let mut h: Vec<Complex<T>> = (0..size)
        .map(|k| {
            let n = if k <= size / 2 { k as f64 } else { k as f64 - size as f64 };
            let v = if k == 0 {
                0.25
            } else if n as i64 % 2 != 0 {
                -1.0 / (std::f64::consts::PI * n).powi(2)
            } else {
                0.0
            };
            Complex::new(T::of(v), T::zero())
        })
        .collect();
    fft.process(&mut h);
    h.iter()
        .enumerate()
        .map(|(k, z)| {
            let nu = if k <= size / 2 { k as f64 } else { k as f64 - size as f64 } / size as f64;
            let w = match filter {
                FbpFilter::Ramp => 1.0,
                FbpFilter::Hann => 0.5 * (1.0 + (2.0 * std::f64::consts::PI * nu).cos()),
            };
            T::of(2.0 * w) * z.re
        })
        .collect()
}

/// Ramp-filters every projection through a zero-padded FFT.
pub fn filter_projections<T: TomoReal>(sino: &Sinogram<T>, filter: FbpFilter) -> Vec<T> {
    let size = (2 * sino.n_det).next_power_of_two().max(64);
    let mut planner = FftPlanner::<T>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let response = ramp_response(size, filter, &fwd);
    let norm = T::one() / T::of_usize(size);
    let rows: Vec<Vec<T>> = (0..sino.n_angles)
        .into_par_iter()
        .map(|a| {
            let mut buf = vec![Complex::new(T::zero(), T::zero()); size];
            for (b, &v) in buf.iter_mut().zip(sino.row(a)) {
                b.re = v;
            }
            fwd.process(&mut buf);
            for (b, &r) in buf.iter_mut().zip(&response) {
                *b = *b * r;
            }
            inv.process(&mut buf);
            buf[..sino.n_det].iter().map(|z| z.re * norm).collect()
        })
        .collect();
    rows.concat()
}

/// Maps views at `θ ≥ first + 180°` onto `θ − 180°` with the detector reversed and
/// averages them with an existing view at that angle.
fn fold_opposite<T: TomoReal>(sino: &Sinogram<T>) -> (Vec<f64>, Vec<Vec<T>>) {
    let start = sino.angles[0];
    let mut views: Vec<(f64, Vec<T>, usize)> = Vec::with_capacity(sino.n_angles);
    for a in 0..sino.n_angles {
        let theta = sino.angles[a];
        if theta < start + 180.0 - ANGLE_EPS {
            views.push((theta, sino.row(a).to_vec(), 1));
        }
    }
    for a in 0..sino.n_angles {
        let theta = sino.angles[a];
        if theta < start + 180.0 - ANGLE_EPS {
            continue;
        }
        let mirrored: Vec<T> = sino.row(a).iter().rev().copied().collect();
        let target = theta - 180.0;
        match views.iter_mut().find(|v| (v.0 - target).abs() < 1e-6) {
            Some(v) => {
                for (acc, m) in v.1.iter_mut().zip(&mirrored) {
                    *acc = *acc + *m;
                }
                v.2 += 1;
            }
            None => views.push((target, mirrored, 1)),
        }
    }
    views.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite angles"));
    views
        .into_iter()
        .map(|(theta, row, count)| {
            let k = T::one() / T::of_usize(count);
            (theta, row.into_iter().map(|v| v * k).collect())
        })
        .unzip()
}

/// Filtered back projection onto an `out_size²` grid, scaled by `π/(2·n_angles)`
/// and zeroed outside the inscribed circle.
pub fn fbp_reconstruct<T: TomoReal>(sino: &Sinogram<T>, filter: FbpFilter, out_size: usize) -> Result<Vec<T>> {
    sino.validate()?;
    if sino.n_angles < MIN_ANGLES {
        return Err(Error::TooFewAngles { got: sino.n_angles, need: MIN_ANGLES });
    }
    let (angles, rows) = fold_opposite(sino);
    let folded = Sinogram { data: rows.concat(), n_angles: angles.len(), angles, ..sino.clone() };
    let filtered = filter_projections(&folded, filter);
    let n_det = folded.n_det;
    let trig: Vec<(f64, f64)> = folded.angles.iter().map(|a| a.to_radians().sin_cos()).collect();
    let c = (out_size as f64 - 1.0) / 2.0;
    let dc = (n_det as f64 - 1.0) / 2.0;
    let radius2 = (out_size as f64 / 2.0).powi(2);
    let inv_spacing = 1.0 / folded.spacing;
    let scale = T::of(std::f64::consts::PI / (2.0 * folded.n_angles as f64));
    let mut out = vec![T::zero(); out_size * out_size];
    out.par_chunks_mut(out_size.max(1)).enumerate().for_each(|(y, row)| {
        let yc = y as f64 - c;
        for (x, px) in row.iter_mut().enumerate() {
            let xc = x as f64 - c;
            if xc * xc + yc * yc > radius2 {
                continue;
            }
            let mut acc = T::zero();
            for (a, &(sin, cos)) in trig.iter().enumerate() {
                let pos = (xc * cos + yc * sin) * inv_spacing + dc;
                if pos < 0.0 || pos > (n_det - 1) as f64 {
                    continue;
                }
                let i0 = (pos.floor() as usize).min(n_det - 1);
                let f = T::of(pos - i0 as f64);
                let p = &filtered[a * n_det..(a + 1) * n_det];
                let v1 = if i0 + 1 < n_det { p[i0 + 1] } else { p[i0] };
                acc = acc + p[i0] + f * (v1 - p[i0]);
            }
            *px = acc * scale;
        }
    });
    Ok(out)
}

/// `RMSE / (max − min)` of `truth` over the inscribed circle of an `n × n` grid.
pub fn nrmse_in_circle(reconstruction: &[f64], truth: &[f64], n: usize) -> f64 {
    let c = (n as f64 - 1.0) / 2.0;
    let r2 = (n as f64 / 2.0).powi(2);
    let (mut se, mut count, mut lo, mut hi) = (0.0, 0usize, f64::INFINITY, f64::NEG_INFINITY);
    for y in 0..n {
        for x in 0..n {
            if (x as f64 - c).powi(2) + (y as f64 - c).powi(2) > r2 {
                continue;
            }
            let i = y * n + x;
            se += (reconstruction[i] - truth[i]).powi(2);
            count += 1;
            lo = lo.min(truth[i]);
            hi = hi.max(truth[i]);
        }
    }
    (se / count as f64).sqrt() / (hi - lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgio::shepp_logan_image;

    fn disk(n: usize, r: f64) -> Vec<f64> {
        let c = (n as f64 - 1.0) / 2.0;
        (0..n * n)
            .map(|i| {
                let (x, y) = ((i % n) as f64 - c, (i / n) as f64 - c);
                if x * x + y * y <= r * r { 1.0 } else { 0.0 }
            })
            .collect()
    }

    #[test]
    fn non_square_rejected() {
        assert!(matches!(forward_radon(&[0.0f64; 6], 3, 2, &[0.0]), Err(Error::NonSquare { .. })));
    }

    #[test]
    fn mass_is_conserved() {
        let img = shepp_logan_image(64);
        let total: f64 = img.iter().sum();
        let s = forward_radon(&img, 64, 64, &uniform_angles(90, 180.0)).unwrap();
        for a in 0..s.n_angles {
            assert!(((s.mass(a) - total) / total).abs() < 1e-12);
        }
    }

    #[test]
    fn centred_impulse_hits_one_bin() {
        let n = 33;
        let mut img = vec![0.0f64; n * n];
        img[16 * n + 16] = 5.0;
        let s = forward_radon(&img, n, n, &uniform_angles(36, 180.0)).unwrap();
        let centre = (s.n_det - 1) / 2;
        for a in 0..s.n_angles {
            let row = s.row(a);
            assert!((row[centre] - 5.0).abs() < 1e-12);
            assert!(row.iter().enumerate().all(|(i, &v)| i == centre || v.abs() < 1e-12));
        }
    }

    #[test]
    fn disk_projections_agree_across_angles() {
        let s = forward_radon(&disk(65, 20.0), 65, 65, &uniform_angles(12, 180.0)).unwrap();
        // linear splatting aliases at oblique angles; compare at the resolution of a 3-bin kernel
        let smooth = |r: &[f64]| -> Vec<f64> { r.windows(3).map(|w| (w[0] + 2.0 * w[1] + w[2]) / 4.0).collect() };
        let mass = s.mass(0);
        let base = smooth(s.row(0));
        for a in 1..s.n_angles {
            let l1: f64 = smooth(s.row(a)).iter().zip(&base).map(|(x, y)| (x - y).abs()).sum();
            assert!(l1 / mass < 0.05, "angle {a}: {}", l1 / mass);
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let s = Sinogram::<f64>::zeros(uniform_angles(20, 180.0), 47).unwrap();
        assert!(fbp_reconstruct(&s, FbpFilter::Ramp, 32).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_few_angles() {
        let s = Sinogram::<f64>::zeros(uniform_angles(15, 180.0), 47).unwrap();
        assert!(matches!(fbp_reconstruct(&s, FbpFilter::Ramp, 32), Err(Error::TooFewAngles { .. })));
    }

    #[test]
    fn invalid_angles() {
        assert!(Sinogram::<f64>::zeros(vec![0.0, 0.0], 5).is_err());
        assert!(Sinogram::<f64>::zeros(vec![0.0, 360.0], 5).is_err());
    }

    #[test]
    fn shepp_logan_roundtrip() {
        let n = 128;
        let img = shepp_logan_image(n);
        let s = forward_radon(&img, n, n, &uniform_angles(180, 180.0)).unwrap();
        let rec = fbp_reconstruct(&s, FbpFilter::Ramp, n).unwrap();
        let e = nrmse_in_circle(&rec, &img, n);
        assert!(e < 0.06, "{e}");
    }

    #[test]
    fn disk_mean_within_two_percent() {
        let n = 96;
        let img = disk(n, 30.0);
        let s = forward_radon(&img, n, n, &uniform_angles(180, 180.0)).unwrap();
        let rec = fbp_reconstruct(&s, FbpFilter::Ramp, n).unwrap();
        let inner: Vec<f64> = disk(n, 24.0).iter().zip(&rec).filter(|(m, _)| **m > 0.0).map(|(_, v)| *v).collect();
        let mean = inner.iter().sum::<f64>() / inner.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn full_turn_matches_half_turn() {
        let n = 64;
        let img = shepp_logan_image(n);
        let half = forward_radon(&img, n, n, &uniform_angles(90, 180.0)).unwrap();
        let full = forward_radon(&img, n, n, &uniform_angles(180, 360.0)).unwrap();
        let a = fbp_reconstruct(&half, FbpFilter::Ramp, n).unwrap();
        let b = fbp_reconstruct(&full, FbpFilter::Ramp, n).unwrap();
        let d = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(d < 1e-2, "{d}");
    }

    #[test]
    fn linearity() {
        let n = 48;
        let s1 = forward_radon(&shepp_logan_image(n), n, n, &uniform_angles(60, 180.0)).unwrap();
        let s2 = forward_radon(&disk(n, 10.0), n, n, &uniform_angles(60, 180.0)).unwrap();
        let (a, b) = (2.5, -0.75);
        let lhs = fbp_reconstruct(&s1.combine(a, &s2, b).unwrap(), FbpFilter::Hann, n).unwrap();
        let r1 = fbp_reconstruct(&s1, FbpFilter::Hann, n).unwrap();
        let r2 = fbp_reconstruct(&s2, FbpFilter::Hann, n).unwrap();
        let scale = lhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..lhs.len() {
            assert!((lhs[i] - (a * r1[i] + b * r2[i])).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn quarter_turn_shift_rotates_image() {
        let n = 48;
        let angles = uniform_angles(60, 180.0);
        let s = forward_radon(&shepp_logan_image(n), n, n, &angles).unwrap();
        let shifted = Sinogram { angles: angles.iter().map(|a| a + 90.0).collect(), ..s.clone() };
        let r = fbp_reconstruct(&s, FbpFilter::Ramp, n).unwrap();
        let q = fbp_reconstruct(&shifted, FbpFilter::Ramp, n).unwrap();
        let scale = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // views at θ + 90° put centred (x, y) where the originals put (y, −x)
        for y in 0..n {
            for x in 0..n {
                let (xr, yr) = (y, n - 1 - x);
                assert!((q[y * n + x] - r[yr * n + xr]).abs() <= 1e-3 * scale, "({x},{y})");
            }
        }
    }

    #[test]
    fn single_precision_reconstruction() {
        let n = 64;
        let img: Vec<f32> = shepp_logan_image(n).iter().map(|&v| v as f32).collect();
        let s = forward_radon(&img, n, n, &uniform_angles(90, 180.0)).unwrap();
        let rec = fbp_reconstruct(&s, FbpFilter::Ramp, n).unwrap();
        let rec64: Vec<f64> = rec.iter().map(|&v| v as f64).collect();
        let truth: Vec<f64> = img.iter().map(|&v| v as f64).collect();
        assert!(nrmse_in_circle(&rec64, &truth, n) < 0.1);
    }
}
