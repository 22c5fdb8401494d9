//! Per-pixel feature vectors: intensity, edge and texture operators at several
//! Gaussian scales.

use serde::{Deserialize, Serialize};

use super::filters::gaussian_derivative;
use crate::error::{Error, Result};
use crate::imgio::{Dims, ImageStack};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    RawIntensity,
    Gaussian,
    GradientMagnitude,
    Laplacian,
    HessianEigenvalues,
    StructureTensorEigenvalues,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 6] = [
        FeatureKind::RawIntensity,
        FeatureKind::Gaussian,
        FeatureKind::GradientMagnitude,
        FeatureKind::Laplacian,
        FeatureKind::HessianEigenvalues,
        FeatureKind::StructureTensorEigenvalues,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::RawIntensity => "raw_intensity",
            FeatureKind::Gaussian => "gaussian",
            FeatureKind::GradientMagnitude => "gradient_magnitude",
            FeatureKind::Laplacian => "laplacian",
            FeatureKind::HessianEigenvalues => "hessian_eigenvalues",
            FeatureKind::StructureTensorEigenvalues => "structure_tensor_eigenvalues",
        }
    }

    /// Output channels per scale.
    fn channels(self, dimensionality: u8) -> usize {
        match self {
            FeatureKind::HessianEigenvalues | FeatureKind::StructureTensorEigenvalues => dimensionality as usize,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecipe {
    pub sigmas: Vec<f64>,
    pub kinds: Vec<FeatureKind>,
    pub dimensionality: u8,
}

impl Default for FeatureRecipe {
    fn default() -> Self {
        Self {
            sigmas: vec![0.7, 1.0, 1.6, 3.5, 5.0],
            kinds: FeatureKind::ALL.to_vec(),
            dimensionality: 2,
        }
    }
}

impl FeatureRecipe {
    pub fn for_dimensionality(dimensionality: u8) -> Self {
        Self { dimensionality, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() {
            return Err(Error::InvalidSpec("feature recipe needs at least one kind".into()));
        }
        if !matches!(self.dimensionality, 2 | 3) {
            return Err(Error::InvalidSpec("dimensionality must be 2 or 3".into()));
        }
        let scaled = self.kinds.iter().any(|&k| k != FeatureKind::RawIntensity);
        if scaled && self.sigmas.is_empty() {
            return Err(Error::InvalidSpec("smoothed features need at least one sigma".into()));
        }
        if self.sigmas.iter().any(|&s| !(s > 0.0 && s.is_finite())) || self.sigmas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSpec("sigmas must be positive and strictly increasing".into()));
        }
        Ok(())
    }

    /// Feature names in output order.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for &kind in &self.kinds {
            if kind == FeatureKind::RawIntensity {
                names.push(kind.name().to_string());
                continue;
            }
            for &s in &self.sigmas {
                let ch = kind.channels(self.dimensionality);
                for c in 0..ch {
                    if ch == 1 {
                        names.push(format!("{}@{s}", kind.name()));
                    } else {
                        names.push(format!("{}[{c}]@{s}", kind.name()));
                    }
                }
            }
        }
        names
    }

    pub fn feature_count(&self) -> usize {
        self.feature_names().len()
    }
}

/// Pixel-major feature matrix: `data[pixel * n_features + feature]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack<T> {
    pub n_features: usize,
    pub n_pixels: usize,
    pub data: Vec<T>,
}

impl<T: Real> FeatureStack<T> {
    #[inline]
    pub fn row(&self, pixel: usize) -> &[T] {
        &self.data[pixel * self.n_features..(pixel + 1) * self.n_features]
    }

    #[inline]
    pub fn get(&self, pixel: usize, feature: usize) -> T {
        self.data[pixel * self.n_features + feature]
    }

    /// One feature as a plane.
    pub fn channel(&self, feature: usize) -> Vec<T> {
        (0..self.n_pixels).map(|p| self.get(p, feature)).collect()
    }

    fn from_planes(planes: Vec<Vec<T>>, n_pixels: usize) -> Self {
        let n_features = planes.len();
        let mut data = vec![T::zero(); n_pixels * n_features];
        for (f, plane) in planes.iter().enumerate() {
            for (p, &v) in plane.iter().enumerate() {
                data[p * n_features + f] = v;
            }
        }
        Self { n_features, n_pixels, data }
    }
}

/// Single scalar image operators, used for operator standard scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    Gaussian,
    GradientMagnitude,
    Laplacian,
    /// Largest Hessian eigenvalue.
    HessianLargest,
    /// Largest structure-tensor eigenvalue.
    StructureTensorLargest,
}

impl Operator {
    pub const FOUR: [Operator; 4] =
        [Operator::Gaussian, Operator::GradientMagnitude, Operator::Laplacian, Operator::HessianLargest];

    pub fn name(self) -> &'static str {
        match self {
            Operator::Gaussian => "gaussian",
            Operator::GradientMagnitude => "gradient_magnitude",
            Operator::Laplacian => "laplacian",
            Operator::HessianLargest => "hessian_largest",
            Operator::StructureTensorLargest => "structure_tensor_largest",
        }
    }
}

fn axes(dims: Dims) -> usize {
    if dims.is_3d() {
        3
    } else {
        2
    }
}

fn unit(axis: usize, order: u8) -> [u8; 3] {
    let mut o = [0u8; 3];
    o[axis] = order;
    o
}

fn gradient<T: Real>(img: &[T], dims: Dims, sigma: f64) -> Vec<Vec<T>> {
    (0..axes(dims)).map(|a| gaussian_derivative(img, dims, sigma, unit(a, 1))).collect()
}

fn gradient_magnitude<T: Real>(img: &[T], dims: Dims, sigma: f64) -> Vec<T> {
    let g = gradient(img, dims, sigma);
    (0..img.len()).map(|i| g.iter().map(|c| c[i] * c[i]).sum::<T>().sqrt()).collect()
}

/// Upper-triangle second-derivative components: (xx, yy, xy) or (xx, yy, zz, xy, xz, yz).
fn hessian<T: Real>(img: &[T], dims: Dims, sigma: f64) -> Vec<Vec<T>> {
    let d = |o: [u8; 3]| gaussian_derivative(img, dims, sigma, o);
    if dims.is_3d() {
        vec![d([2, 0, 0]), d([0, 2, 0]), d([0, 0, 2]), d([1, 1, 0]), d([1, 0, 1]), d([0, 1, 1])]
    } else {
        vec![d([2, 0, 0]), d([0, 2, 0]), d([1, 1, 0])]
    }
}

fn structure_tensor<T: Real>(img: &[T], dims: Dims, sigma: f64) -> Vec<Vec<T>> {
    let g = gradient(img, dims, 0.5 * sigma);
    let prod = |a: usize, b: usize| -> Vec<T> {
        let p: Vec<T> = g[a].iter().zip(&g[b]).map(|(&u, &v)| u * v).collect();
        gaussian_derivative(&p, dims, sigma, [0, 0, 0])
    };
    if dims.is_3d() {
        vec![prod(0, 0), prod(1, 1), prod(2, 2), prod(0, 1), prod(0, 2), prod(1, 2)]
    } else {
        vec![prod(0, 0), prod(1, 1), prod(0, 1)]
    }
}

/// Eigenvalues of a symmetric 2x2 matrix, descending.
pub fn sym2_eigenvalues<T: Real>(a: T, b: T, c: T) -> [T; 2] {
    let two = T::of(2.0);
    let mean = (a + b) / two;
    let r = (((a - b) / two).powi(2) + c * c).sqrt();
    [mean + r, mean - r]
}

/// Eigenvalues of a symmetric 3x3 matrix `[[a,d,e],[d,b,f],[e,f,c]]`, descending.
pub fn sym3_eigenvalues<T: Real>(a: T, b: T, c: T, d: T, e: T, f: T) -> [T; 3] {
    let p1 = d * d + e * e + f * f;
    let three = T::of(3.0);
    let two = T::of(2.0);
    let q = (a + b + c) / three;
    let p2 = (a - q).powi(2) + (b - q).powi(2) + (c - q).powi(2) + two * p1;
    let p = (p2 / T::of(6.0)).sqrt();
    if p <= T::epsilon() * (T::one() + q.abs()) {
        return [q, q, q];
    }
    let inv = T::one() / p;
    let (ba, bb, bc) = ((a - q) * inv, (b - q) * inv, (c - q) * inv);
    let (bd, be, bf) = (d * inv, e * inv, f * inv);
    let det = ba * (bb * bc - bf * bf) - bd * (bd * bc - bf * be) + be * (bd * bf - bb * be);
    let r = (det / two).max(-T::one()).min(T::one());
    let phi = r.acos() / three;
    let e1 = q + two * p * phi.cos();
    let e3 = q + two * p * (phi + two * T::PI() / three).cos();
    let e2 = three * q - e1 - e3;
    [e1, e2, e3]
}

fn eigen_planes<T: Real>(comps: &[Vec<T>], n: usize) -> Vec<Vec<T>> {
    if comps.len() == 3 {
        let mut out = vec![Vec::with_capacity(n), Vec::with_capacity(n)];
        for i in 0..n {
            let ev = sym2_eigenvalues(comps[0][i], comps[1][i], comps[2][i]);
            out[0].push(ev[0]);
            out[1].push(ev[1]);
        }
        out
    } else {
        let mut out = vec![Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
        for i in 0..n {
            let ev = sym3_eigenvalues(comps[0][i], comps[1][i], comps[2][i], comps[3][i], comps[4][i], comps[5][i]);
            for k in 0..3 {
                out[k].push(ev[k]);
            }
        }
        out
    }
}

fn check_dimensionality(stack: &ImageStack, dimensionality: u8) -> Result<()> {
    let is3d = stack.dims().is_3d();
    if (dimensionality == 3) != is3d {
        return Err(Error::DimMismatch(format!(
            "recipe is {dimensionality}D but stack depth is {}",
            stack.dims().depth
        )));
    }
    Ok(())
}

fn as_real<T: Real>(stack: &ImageStack) -> Vec<T> {
    stack.data().iter().map(|&v| T::of(f64::from(v))).collect()
}

/// Evaluates one scalar operator on real-valued image data.
pub fn apply_operator<T: Real>(img: &[T], dims: Dims, op: Operator, sigma: f64) -> Vec<T> {
    let n = img.len();
    match op {
        Operator::Gaussian => gaussian_derivative(img, dims, sigma, [0, 0, 0]),
        Operator::GradientMagnitude => gradient_magnitude(img, dims, sigma),
        Operator::Laplacian => {
            let h = hessian(img, dims, sigma);
            let ax = axes(dims);
            (0..n).map(|i| (0..ax).map(|a| h[a][i]).sum()).collect()
        }
        Operator::HessianLargest => eigen_planes(&hessian(img, dims, sigma), n).swap_remove(0),
        Operator::StructureTensorLargest => eigen_planes(&structure_tensor(img, dims, sigma), n).swap_remove(0),
    }
}

/// Computes the feature stack for `stack` in recipe order.
pub fn compute_features<T: Real>(stack: &ImageStack, recipe: &FeatureRecipe) -> Result<FeatureStack<T>> {
    recipe.validate()?;
    check_dimensionality(stack, recipe.dimensionality)?;
    let dims = stack.dims();
    let img = as_real::<T>(stack);
    let n = img.len();
    let mut planes: Vec<Vec<T>> = Vec::with_capacity(recipe.feature_count());
    for &kind in &recipe.kinds {
        if kind == FeatureKind::RawIntensity {
            planes.push(img.clone());
            continue;
        }
        for &sigma in &recipe.sigmas {
            match kind {
                FeatureKind::RawIntensity => unreachable!(),
                FeatureKind::Gaussian => planes.push(apply_operator(&img, dims, Operator::Gaussian, sigma)),
                FeatureKind::GradientMagnitude => planes.push(gradient_magnitude(&img, dims, sigma)),
                FeatureKind::Laplacian => planes.push(apply_operator(&img, dims, Operator::Laplacian, sigma)),
                FeatureKind::HessianEigenvalues => planes.extend(eigen_planes(&hessian(&img, dims, sigma), n)),
                FeatureKind::StructureTensorEigenvalues => {
                    planes.extend(eigen_planes(&structure_tensor(&img, dims, sigma), n))
                }
            }
        }
    }
    Ok(FeatureStack::from_planes(planes, n))
}
