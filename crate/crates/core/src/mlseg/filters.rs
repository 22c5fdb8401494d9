//! Separable Gaussian and Gaussian-derivative filtering with half-sample reflect borders.

use rayon::prelude::*;

use crate::imgio::Dims;
use crate::real::Real;

/// Sampled Gaussian kernel (`order` 0, 1 or 2) with radius `ceil(4σ)`.
///
/// Order 0 sums to one. Order 1 responds with exactly 1 to a unit ramp and order 2
/// with exactly 1 to `x²/2`, which keeps derivative magnitudes scale-correct after
/// truncation.
pub fn gaussian_kernel<T: Real>(sigma: f64, order: u8) -> Vec<T> {
    assert!(sigma > 0.0, "sigma must be positive");
    let radius = (4.0 * sigma).ceil().max(1.0) as i64;
    let xs: Vec<f64> = (-radius..=radius).map(|i| i as f64).collect();
    let g: Vec<f64> = xs.iter().map(|x| (-x * x / (2.0 * sigma * sigma)).exp()).collect();
    let k: Vec<f64> = match order {
        0 => {
            let s: f64 = g.iter().sum();
            g.iter().map(|v| v / s).collect()
        }
        1 => {
            // correlation form: out[i] = Σ k[j]·in[i+j]
            let raw: Vec<f64> = xs.iter().zip(&g).map(|(x, v)| x * v).collect();
            let norm: f64 = xs.iter().zip(&raw).map(|(x, v)| x * v).sum();
            raw.iter().map(|v| v / norm).collect()
        }
        2 => {
            let raw: Vec<f64> =
                xs.iter().zip(&g).map(|(x, v)| (x * x / (sigma * sigma) - 1.0) * v).collect();
            let mean = raw.iter().sum::<f64>() / raw.len() as f64;
            let centered: Vec<f64> = raw.iter().map(|v| v - mean).collect();
            let norm: f64 = xs.iter().zip(&centered).map(|(x, v)| 0.5 * x * x * v).sum();
            centered.iter().map(|v| v / norm).collect()
        }
        _ => panic!("derivative order must be 0, 1 or 2"),
    };
    k.into_iter().map(T::of).collect()
}

/// Half-sample symmetric reflection of index `i` into `0..n`.
#[inline]
pub fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Correlates every line along `axis` (0 = x, 1 = y, 2 = z) with `kernel`.
pub fn correlate_axis<T: Real>(data: &[T], dims: Dims, axis: usize, kernel: &[T]) -> Vec<T> {
    let (n, stride) = match axis {
        0 => (dims.width, 1),
        1 => (dims.height, dims.width),
        2 => (dims.depth, dims.width * dims.height),
        _ => panic!("axis out of range"),
    };
    let radius = (kernel.len() / 2) as i64;
    let mut out = vec![T::zero(); data.len()];
    if n == 1 {
        let s: T = kernel.iter().copied().sum();
        out.iter_mut().zip(data).for_each(|(o, &v)| *o = v * s);
        return out;
    }
    let line_starts: Vec<usize> = (0..data.len()).filter(|&i| (i / stride) % n == 0).collect();
    let lines: Vec<(usize, Vec<T>)> = line_starts
        .par_iter()
        .map(|&start| {
            let line: Vec<T> = (0..n).map(|k| data[start + k * stride]).collect();
            let filtered = (0..n as i64)
                .map(|i| {
                    kernel
                        .iter()
                        .enumerate()
                        .map(|(j, &w)| w * line[reflect(i + j as i64 - radius, n)])
                        .fold(T::zero(), |a, b| a + b)
                })
                .collect();
            (start, filtered)
        })
        .collect();
    for (start, filtered) in lines {
        for (k, v) in filtered.into_iter().enumerate() {
            out[start + k * stride] = v;
        }
    }
    out
}

/// Gaussian-derivative filter with per-axis derivative orders `[ox, oy, oz]`.
/// The z axis is skipped for single-slice data.
pub fn gaussian_derivative<T: Real>(data: &[T], dims: Dims, sigma: f64, orders: [u8; 3]) -> Vec<T> {
    let axes = if dims.is_3d() { 3 } else { 2 };
    let mut cur = data.to_vec();
    for (axis, &order) in orders.iter().enumerate().take(axes) {
        let k = gaussian_kernel::<T>(sigma, order);
        cur = correlate_axis(&cur, dims, axis, &k);
    }
    cur
}

/// Isotropic Gaussian smoothing; `planar` restricts smoothing to x and y.
pub fn gaussian_blur(data: &[f64], dims: Dims, sigma: f64, planar: bool) -> Vec<f64> {
    let k = gaussian_kernel::<f64>(sigma, 0);
    let mut cur = correlate_axis(data, dims, 0, &k);
    cur = correlate_axis(&cur, dims, 1, &k);
    if !planar && dims.is_3d() {
        cur = correlate_axis(&cur, dims, 2, &k);
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
        assert_eq!(reflect(-5, 1), 0);
    }

    #[test]
    fn kernel_moments() {
        let k0 = gaussian_kernel::<f64>(1.6, 0);
        assert!((k0.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let k1 = gaussian_kernel::<f64>(1.6, 1);
        let r = (k1.len() / 2) as f64;
        let m1: f64 = k1.iter().enumerate().map(|(i, v)| (i as f64 - r) * v).sum();
        assert!((m1 - 1.0).abs() < 1e-12);
        let k2 = gaussian_kernel::<f64>(1.6, 2);
        assert!(k2.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn blur_of_constant_is_constant() {
        let dims = Dims::plane(9, 7);
        let out = gaussian_blur(&vec![3.5; dims.len()], dims, 2.0, true);
        assert!(out.iter().all(|v| (v - 3.5).abs() < 1e-12));
    }
}
