//! Resolution checks: Gaussian PSF fits on bead profiles and bar-target MTF.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::Dims;
use crate::morph::label_components;
use crate::real::Real;

/// `2√(2 ln 2)`.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;
const MAX_ITER: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileFit<T> {
    pub samples: Vec<(T, T)>,
    pub amplitude: T,
    pub center: T,
    pub sigma: T,
    pub baseline: T,
    pub fwhm: T,
    /// One standard error of the FWHM from the fit covariance.
    pub fwhm_uncertainty: T,
    pub residual_rms: T,
    pub iterations: usize,
}

fn gaussian<T: Real>(p: &[T; 4], x: T) -> T {
    let [a, c, s, b] = *p;
    let z = (x - c) / s;
    b + a * (-(z * z) / T::of(2.0)).exp()
}

/// Solves `m·x = v` by Gaussian elimination with partial pivoting.
fn solve<T: Real, const N: usize>(mut m: [[T; N]; N], mut v: [T; N]) -> Option<[T; N]> {
    for col in 0..N {
        let pivot = (col..N).max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).expect("finite"))?;
        if m[pivot][col].abs() <= T::min_positive_value() {
            return None;
        }
        m.swap(col, pivot);
        v.swap(col, pivot);
        for row in col + 1..N {
            let f = m[row][col] / m[col][col];
            for k in col..N {
                m[row][k] = m[row][k] - f * m[col][k];
            }
            v[row] = v[row] - f * v[col];
        }
    }
    let mut x = [T::zero(); N];
    for row in (0..N).rev() {
        let mut s = v[row];
        for k in row + 1..N {
            s = s - m[row][k] * x[k];
        }
        x[row] = s / m[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn residuals<T: Real>(samples: &[(T, T)], p: &[T; 4]) -> T {
    samples.iter().map(|&(x, y)| (y - gaussian(p, x)).powi(2)).sum()
}

/// Levenberg–Marquardt fit of `b + A·exp(−(x−c)²/2σ²)`, started from the peak
/// height, the baseline-subtracted centroid and second moment.
pub fn psf_fwhm<T: Real>(profile: &[(T, T)]) -> Result<ProfileFit<T>> {
    if profile.len() < 7 {
        return Err(Error::InvalidSpec(format!("profile needs >= 7 samples, got {}", profile.len())));
    }
    if profile.iter().any(|&(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidSpec("profile has non-finite samples".into()));
    }
    let (imax, &(_, ymax)) = profile
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).expect("finite"))
        .expect("non-empty");
    let ymin = profile.iter().map(|p| p.1).fold(T::infinity(), T::min);
    let scale = ymax.abs().max(ymin.abs()).max(T::min_positive_value());
    if ymax - ymin <= T::of(1e3) * T::epsilon() * scale || imax == 0 || imax == profile.len() - 1 {
        return Err(Error::NoPeak);
    }
    let weights: Vec<T> = profile.iter().map(|&(_, y)| y - ymin).collect();
    let wsum: T = weights.iter().copied().sum();
    let c0 = profile.iter().zip(&weights).map(|(&(x, _), &w)| w * x).sum::<T>() / wsum;
    let var0 = profile.iter().zip(&weights).map(|(&(x, _), &w)| w * (x - c0).powi(2)).sum::<T>() / wsum;
    let spacing = (profile[profile.len() - 1].0 - profile[0].0).abs() / T::of_usize(profile.len() - 1);
    let mut p = [ymax - ymin, c0, var0.sqrt().max(spacing * T::of(0.5)), ymin];
    let mut cost = residuals(profile, &p);
    let mut lambda = T::of(1e-3);
    let mut iterations = 0;
    let tiny = T::epsilon() * T::of(10.0);
    let mut jtj = [[T::zero(); 4]; 4];
    for it in 0..MAX_ITER {
        iterations = it + 1;
        jtj = [[T::zero(); 4]; 4];
        let mut jtr = [T::zero(); 4];
        for &(x, y) in profile {
            let [a, c, s, _] = p;
            let z = (x - c) / s;
            let e = (-(z * z) / T::of(2.0)).exp();
            let j = [e, a * e * z / s, a * e * z * z / s, T::one()];
            let r = y - gaussian(&p, x);
            for u in 0..4 {
                jtr[u] = jtr[u] + j[u] * r;
                for v in 0..4 {
                    jtj[u][v] = jtj[u][v] + j[u] * j[v];
                }
            }
        }
        let mut improved = false;
        while lambda < T::of(1e12) {
            let mut m = jtj;
            for (k, row) in m.iter_mut().enumerate() {
                row[k] = row[k] * (T::one() + lambda);
            }
            let Some(step) = solve(m, jtr) else {
                lambda = lambda * T::of(10.0);
                continue;
            };
            let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2], p[3] + step[3]];
            let trial_cost = residuals(profile, &trial);
            if trial_cost.is_finite() && trial_cost <= cost {
                let rel_step = (0..4).map(|k| step[k].abs() / (p[k].abs() + tiny)).fold(T::zero(), T::max);
                let gain = cost - trial_cost;
                p = trial;
                cost = trial_cost;
                lambda = (lambda / T::of(10.0)).max(T::of(1e-12));
                improved = rel_step > tiny && gain > tiny * tiny * (cost + scale * scale * tiny);
                break;
            }
            lambda = lambda * T::of(10.0);
        }
        if !improved {
            break;
        }
    }
    let sigma = p[2].abs();
    let lo = profile.iter().map(|s| s.0).fold(T::infinity(), T::min);
    let hi = profile.iter().map(|s| s.0).fold(T::neg_infinity(), T::max);
    if !sigma.is_finite() || sigma <= T::zero() || p.iter().any(|v| !v.is_finite()) || p[1] < lo || p[1] > hi {
        return Err(Error::FitDiverged(format!("parameters {p:?}")));
    }
    let n = T::of_usize(profile.len());
    let dof = T::of_usize(profile.len() - 4);
    let s2 = cost / dof;
    // variance of σ: (JᵀJ)⁻¹ element [2][2] times s²
    let mut unit = [T::zero(); 4];
    unit[2] = T::one();
    let sigma_var = solve(jtj, unit).map(|col| col[2] * s2).unwrap_or(T::zero()).max(T::zero());
    let k = T::of(FWHM_PER_SIGMA);
    Ok(ProfileFit {
        samples: profile.to_vec(),
        amplitude: p[0],
        center: p[1],
        sigma,
        baseline: p[3],
        fwhm: k * sigma,
        fwhm_uncertainty: k * sigma_var.sqrt(),
        residual_rms: (cost / n).sqrt(),
        iterations,
    })
}

/// Removes the bead's own size in quadrature: `√(measured² − bead²)`.
pub fn deconvolve_bead(measured_fwhm: f64, bead_diameter: f64) -> Result<f64> {
    if !(measured_fwhm > bead_diameter && bead_diameter >= 0.0) {
        return Err(Error::InvalidSpec(format!(
            "measured FWHM {measured_fwhm} must exceed bead size {bead_diameter}"
        )));
    }
    Ok((measured_fwhm * measured_fwhm - bead_diameter * bead_diameter).sqrt())
}

/// `M = (I_max − I_min)/(I_max + I_min)` with `I_max`, `I_min` the averaged
/// extremes of the runs above and below the profile mean.
pub fn mtf_modulation<T: Real>(profile: &[T]) -> Result<T> {
    if profile.is_empty() {
        return Err(Error::DegenerateProfile("empty profile".into()));
    }
    if profile.iter().any(|&v| !(v >= T::zero()) || !v.is_finite()) {
        return Err(Error::DegenerateProfile("intensities must be finite and non-negative".into()));
    }
    let mean = profile.iter().copied().sum::<T>() / T::of_usize(profile.len());
    let (mut maxima, mut minima) = (Vec::new(), Vec::new());
    let mut run: Option<(bool, T)> = None;
    for &v in profile {
        let above = v > mean;
        run = match run {
            Some((side, ext)) if side == above => Some((side, if above { ext.max(v) } else { ext.min(v) })),
            Some((side, ext)) => {
                if side { maxima.push(ext) } else { minima.push(ext) }
                Some((above, v))
            }
            None => Some((above, v)),
        };
    }
    if let Some((side, ext)) = run {
        if side { maxima.push(ext) } else { minima.push(ext) }
    }
    let avg = |v: &[T]| v.iter().copied().sum::<T>() / T::of_usize(v.len());
    let (imax, imin) = match (maxima.is_empty(), minima.is_empty()) {
        (true, _) | (_, true) => (mean, mean),
        _ => (avg(&maxima), avg(&minima)),
    };
    if imax + imin <= T::zero() {
        return Err(Error::DegenerateProfile("I_max + I_min is zero".into()));
    }
    Ok((imax - imin) / (imax + imin))
}

/// Cut-off frequency: smallest positive root of the least-squares quadratic
/// through `(frequency, M)` points.
pub fn mtf_cutoff<T: Real>(points: &[(T, T)]) -> Result<T> {
    if points.len() < 4 {
        return Err(Error::InvalidSpec(format!("cut-off fit needs >= 4 points, got {}", points.len())));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite frequencies"));
    if sorted[sorted.len() - 1].1 >= sorted[0].1 {
        return Err(Error::NoRoot);
    }
    // fit in f / f_max for conditioning
    let fmax = sorted.iter().map(|p| p.0.abs()).fold(T::zero(), T::max);
    if fmax <= T::zero() {
        return Err(Error::NoRoot);
    }
    let mut m = [[T::zero(); 3]; 3];
    let mut v = [T::zero(); 3];
    for &(f, y) in points {
        let u = f / fmax;
        let basis = [T::one(), u, u * u];
        for r in 0..3 {
            v[r] = v[r] + basis[r] * y;
            for c in 0..3 {
                m[r][c] = m[r][c] + basis[r] * basis[c];
            }
        }
    }
    let [a, b, c] = solve(m, v).ok_or(Error::NoRoot)?;
    let roots: Vec<T> = if c.abs() <= T::epsilon() * (a.abs() + b.abs()) {
        if b == T::zero() {
            vec![]
        } else {
            vec![-a / b]
        }
    } else {
        let disc = b * b - T::of(4.0) * a * c;
        if disc < T::zero() {
            vec![]
        } else {
            // stable quadratic roots
            let sq = disc.sqrt();
            let qq = -(b + b.signum() * sq) / T::of(2.0);
            let mut r = vec![qq / c];
            if qq != T::zero() {
                r.push(a / qq);
            }
            r
        }
    };
    roots
        .into_iter()
        .filter(|&r| r > T::zero() && r.is_finite())
        .fold(None, |best: Option<T>, r| Some(best.map_or(r, |b| b.min(r))))
        .map(|r| r * fmax)
        .ok_or(Error::NoRoot)
}

/// Bilinear sample of a 2D image with edge clamping.
pub fn bilinear(img: &[f64], dims: Dims, x: f64, y: f64) -> f64 {
    let (w, h) = (dims.width, dims.height);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |xx: usize, yy: usize| img[yy * w + xx];
    (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x1, y0)) + fy * ((1.0 - fx) * at(x0, y1) + fx * at(x1, y1))
}

/// Line cut through `center` along `angle_deg`, sampled every `step` px over
/// `[-half_length, half_length]`; positions are signed offsets from the centre.
pub fn line_profile(img: &[f64], dims: Dims, center: (f64, f64), angle_deg: f64, half_length: f64, step: f64) -> Vec<(f64, f64)> {
    let (dx, dy) = (angle_deg.to_radians().cos(), -angle_deg.to_radians().sin());
    let n = (half_length / step).floor() as i64;
    (-n..=n)
        .map(|k| {
            let t = k as f64 * step;
            (t, bilinear(img, dims, center.0 + t * dx, center.1 + t * dy))
        })
        .collect()
}

/// Intensity-weighted centroids of connected regions above `threshold`.
pub fn bead_centroids(img: &[f64], dims: Dims, threshold: f64) -> Result<Vec<(f64, f64)>> {
    let mask: Vec<bool> = img.iter().map(|&v| v > threshold).collect();
    let objs = label_components(&mask, dims)?;
    Ok(objs
        .pixel_lists()
        .iter()
        .map(|px| {
            let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
            for &i in px {
                let (x, y, _) = dims.coords(i);
                let w = img[i] - threshold;
                sw += w;
                sx += w * x as f64;
                sy += w * y as f64;
            }
            (sx / sw, sy / sw)
        })
        .collect())
}
