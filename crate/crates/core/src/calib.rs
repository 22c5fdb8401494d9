//! Sensor noise calibration: photon-transfer fit of `σ(d)` from repeated flat
//! exposures at square-law spaced illumination levels.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::{read_stack, write_stack, BitDepth, Dims, ImageStack};
use crate::rng::CounterRng;

/// Fewest distinct unsaturated illumination levels accepted by the fit.
pub const MIN_LEVELS: usize = 8;
/// A level is saturated once its variance falls below this fraction of the linear prediction.
pub const SATURATION_TURNOVER: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    Parametric,
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub mode: NoiseMode,
    /// Gain in ADU per photo-electron.
    #[serde(rename = "K")]
    pub gain: f64,
    /// Dark offset `d₀` in ADU.
    pub offset: f64,
    /// Read-noise variance in ADU².
    pub read_variance: f64,
    /// Highest usable mean level in ADU.
    pub saturation: f64,
    /// `(d, σ)` knots, strictly increasing in `d`.
    #[serde(default)]
    pub empirical_curve: Vec<[f64; 2]>,
}

impl NoiseModel {
    pub fn parametric(gain: f64, offset: f64, read_variance: f64, saturation: f64) -> Self {
        Self { mode: NoiseMode::Parametric, gain, offset, read_variance, saturation, empirical_curve: Vec::new() }
    }

    /// Zero-noise model; every `σ(d)` is 0.
    pub fn noiseless(saturation: f64) -> Self {
        Self::parametric(0.0, 0.0, 0.0, saturation)
    }

    pub fn with_mode(mut self, mode: NoiseMode) -> Self {
        self.mode = mode;
        self
    }

    /// `σ(d)`. Parametric: `√(σ_read² + K·max(0, d − d₀))`. Empirical: linear
    /// interpolation between knots, clamped to the end knots outside their range.
    pub fn sigma_of(&self, d: f64) -> f64 {
        match self.mode {
            NoiseMode::Parametric => (self.read_variance + self.gain * (d - self.offset).max(0.0)).max(0.0).sqrt(),
            NoiseMode::Empirical => interpolate_curve(&self.empirical_curve, d),
        }
    }

    /// Checks the physical invariants of a calibrated model.
    pub fn validate(&self) -> Result<()> {
        let finite = [self.gain, self.offset, self.read_variance, self.saturation].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidSpec("noise model has non-finite parameters".into()));
        }
        if self.gain <= 0.0 {
            return Err(Error::NonPhysicalFit { gain: self.gain });
        }
        if self.read_variance < 0.0 || self.offset < 0.0 {
            return Err(Error::InvalidSpec("read variance and offset must be non-negative".into()));
        }
        if self.saturation > f64::from(u16::MAX) || self.saturation <= self.offset {
            return Err(Error::InvalidSpec(format!("saturation {} outside (offset, 65535]", self.saturation)));
        }
        if self.empirical_curve.windows(2).any(|w| w[0][0] >= w[1][0]) {
            return Err(Error::InvalidSpec("empirical curve must be strictly increasing in d".into()));
        }
        if self.mode == NoiseMode::Empirical && self.empirical_curve.is_empty() {
            return Err(Error::InvalidSpec("empirical mode needs curve knots".into()));
        }
        if self.mode == NoiseMode::Empirical && self.empirical_curve.iter().any(|k| !(k[1] > 0.0)) {
            return Err(Error::InvalidSpec("empirical sigma must be positive".into()));
        }
        if self.mode == NoiseMode::Parametric && self.read_variance == 0.0 {
            return Err(Error::InvalidSpec("sigma must be positive at the dark offset".into()));
        }
        Ok(())
    }

    /// Stable content hash (SHA-256 of the canonical JSON), hex encoded.
    pub fn hash(&self) -> String {
        crate::hash::sha256_hex(&serde_json::to_vec(self).expect("model serializes"))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: NoiseModel = serde_json::from_str(&text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn interpolate_curve(curve: &[[f64; 2]], d: f64) -> f64 {
    match curve {
        [] => 0.0,
        [only] => only[1],
        _ => {
            if d <= curve[0][0] {
                return curve[0][1];
            }
            let last = curve[curve.len() - 1];
            if d >= last[0] {
                return last[1];
            }
            let i = curve.partition_point(|k| k[0] <= d);
            let (a, b) = (curve[i - 1], curve[i]);
            a[1] + (b[1] - a[1]) * (d - a[0]) / (b[0] - a[0])
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationLevel {
    /// Mean photo-electron count per pixel, arbitrary units.
    pub photons: f64,
    pub frames: Vec<ImageStack>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSeries {
    pub levels: Vec<CalibrationLevel>,
}

/// Summary statistics of one illumination level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelStats {
    pub photons: f64,
    pub mean: f64,
    /// Temporal variance per pixel, averaged over pixels.
    pub variance: f64,
    /// Degrees of freedom of `variance`.
    pub dof: f64,
}

impl CalibrationSeries {
    pub fn validate(&self) -> Result<()> {
        let first = self
            .levels
            .iter()
            .flat_map(|l| l.frames.first())
            .next()
            .ok_or(Error::InsufficientLevels { usable: 0, required: MIN_LEVELS })?;
        let (dims, depth) = (first.dims(), first.bit_depth());
        for level in &self.levels {
            if level.frames.len() < 2 {
                return Err(Error::InvalidSpec("each level needs at least two frames".into()));
            }
            if level.frames.iter().any(|f| f.dims() != dims || f.bit_depth() != depth) {
                return Err(Error::DimMismatch("calibration frames differ in dims or bit depth".into()));
            }
        }
        Ok(())
    }

    /// Per-level mean and temporal variance, computed in exact integer arithmetic
    /// so the result is independent of frame and pixel order.
    pub fn level_stats(&self) -> Result<Vec<LevelStats>> {
        self.validate()?;
        Ok(self
            .levels
            .par_iter()
            .map(|level| {
                let frames = level.frames.len();
                let npix = level.frames[0].len();
                let mut s1 = vec![0u64; npix];
                let mut s2 = vec![0u128; npix];
                for f in &level.frames {
                    for (p, &v) in f.data().iter().enumerate() {
                        s1[p] += u64::from(v);
                        s2[p] += u128::from(v) * u128::from(v);
                    }
                }
                let total: u128 = s1.iter().map(|&v| u128::from(v)).sum();
                let fr = frames as i128;
                let num: i128 = s1.iter().zip(&s2).map(|(&a, &b)| fr * b as i128 - (a as i128) * (a as i128)).sum();
                let n = (frames * npix) as f64;
                LevelStats {
                    photons: level.photons,
                    mean: total as f64 / n,
                    variance: num as f64 / (fr * (fr - 1)) as f64 / npix as f64,
                    dof: (npix * (frames - 1)) as f64,
                }
            })
            .collect())
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut index = Vec::new();
        for (i, level) in self.levels.iter().enumerate() {
            let name = format!("level_{i:03}.tif");
            let first = &level.frames[0];
            let d = first.dims();
            let mut data = Vec::with_capacity(d.len() * level.frames.len());
            for f in &level.frames {
                data.extend_from_slice(f.data());
            }
            let stack = ImageStack::new(data, Dims::new(d.width, d.height, level.frames.len()), first.bit_depth())?;
            write_stack(&stack, dir.join(&name))?;
            index.push(SeriesEntry { photons: level.photons, file: name });
        }
        let path = dir.join("series.json");
        fs::write(&path, serde_json::to_string_pretty(&SeriesIndex { levels: index })?).map_err(|e| Error::io(&path, e))
    }

    /// Reads a directory holding `series.json` and one multi-page TIFF per level
    /// (one page per frame).
    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("series.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: SeriesIndex = serde_json::from_str(&text)?;
        let mut levels = Vec::with_capacity(index.levels.len());
        for entry in index.levels {
            let stack = read_stack(dir.join(&entry.file))?;
            let d = stack.dims();
            let frames = (0..d.depth)
                .map(|z| ImageStack::new(stack.slice(z).to_vec(), Dims::plane(d.width, d.height), stack.bit_depth()))
                .collect::<Result<Vec<_>>>()?;
            levels.push(CalibrationLevel { photons: entry.photons, frames });
        }
        Ok(Self { levels })
    }
}

#[derive(Serialize, Deserialize)]
struct SeriesEntry {
    photons: f64,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct SeriesIndex {
    levels: Vec<SeriesEntry>,
}

/// Simulates flat-field exposures at `n_levels` square-law spaced photon levels,
/// from darkness to the model's saturation mean. Samples are Normal(mean, σ(mean)),
/// rounded half-to-even and clamped to `[0, saturation]`.
pub fn simulate_calibration_bench(
    model: &NoiseModel,
    dims: Dims,
    n_levels: usize,
    n_frames: usize,
    seed: u64,
) -> Result<CalibrationSeries> {
    if n_levels < MIN_LEVELS || n_frames < 2 {
        return Err(Error::InvalidSpec(format!(
            "bench needs >= {MIN_LEVELS} levels and >= 2 frames (got {n_levels}, {n_frames})"
        )));
    }
    if dims.is_empty() || dims.depth != 1 {
        return Err(Error::InvalidSpec("bench sensor must be a non-empty 2D frame".into()));
    }
    if model.gain < 0.0 || model.read_variance < 0.0 || !(model.saturation > model.offset) {
        return Err(Error::InvalidSpec("bench model must have non-negative noise and saturation above offset".into()));
    }
    let top = model.saturation.min(f64::from(u16::MAX));
    let max_photons = if model.gain > 0.0 { (top - model.offset) / model.gain } else { top - model.offset };
    let npix = dims.len();
    let levels = (0..n_levels)
        .into_par_iter()
        .map(|i| {
            let frac = i as f64 / (n_levels - 1) as f64;
            let photons = max_photons * frac * frac;
            let gain = if model.gain > 0.0 { model.gain } else { 1.0 };
            let mean = model.offset + gain * photons;
            let sigma = model.sigma_of(mean);
            let rng = CounterRng::new(seed, i as u64);
            let frames = (0..n_frames)
                .map(|f| {
                    let data = (0..npix)
                        .map(|p| {
                            let z = rng.normal((f * npix + p) as u64);
                            (mean + sigma * z).round_ties_even().clamp(0.0, top) as u16
                        })
                        .collect();
                    ImageStack::new(data, dims, BitDepth::Sixteen)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(CalibrationLevel { photons, frames })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CalibrationSeries { levels })
}

/// Weighted least-squares fit of `v = a + K·(d − d₀)` with weights `(n−1)/(2v²)`.
fn wls_line(points: &[LevelStats], offset: f64) -> (f64, f64) {
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in points {
        let var_of_var = (2.0 * p.variance * p.variance / p.dof.max(1.0)).max(1e-12);
        let w = 1.0 / var_of_var;
        let x = p.mean - offset;
        sw += w;
        sx += w * x;
        sy += w * p.variance;
        sxx += w * x * x;
        sxy += w * x * p.variance;
    }
    let det = sw * sxx - sx * sx;
    if det.abs() < f64::MIN_POSITIVE {
        return (sy / sw, 0.0);
    }
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sy - slope * sx) / sw;
    (intercept, slope)
}

fn distinct_levels(points: &[LevelStats]) -> usize {
    let mut photons: Vec<f64> = points.iter().map(|p| p.photons).collect();
    photons.sort_by(f64::total_cmp);
    photons.dedup();
    photons.len()
}

/// Pool-adjacent-violators: least-squares non-decreasing fit.
fn isotonic(values: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::new();
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 && blocks[blocks.len() - 2].0 > blocks[blocks.len() - 1].0 {
            let (v2, n2) = blocks.pop().expect("two blocks");
            let (v1, n1) = blocks.pop().expect("two blocks");
            blocks.push(((v1 * n1 as f64 + v2 * n2 as f64) / (n1 + n2) as f64, n1 + n2));
        }
    }
    blocks.into_iter().flat_map(|(v, n)| std::iter::repeat_n(v, n)).collect()
}

/// Fits the photon-transfer model from per-level statistics.
///
/// `d₀` is the mean of the darkest level. Levels are scanned in increasing mean;
/// the first level whose variance falls below 80% of the linear prediction marks
/// saturation and is excluded together with everything above it.
pub fn fit_level_stats(stats: &[LevelStats]) -> Result<NoiseModel> {
    let mut points: Vec<LevelStats> = stats.to_vec();
    points.sort_by(|a, b| a.mean.total_cmp(&b.mean).then(a.photons.total_cmp(&b.photons)));
    if distinct_levels(&points) < MIN_LEVELS {
        return Err(Error::InsufficientLevels { usable: distinct_levels(&points), required: MIN_LEVELS });
    }
    let dark = points
        .iter()
        .min_by(|a, b| a.photons.total_cmp(&b.photons).then(a.mean.total_cmp(&b.mean)))
        .expect("non-empty");
    let offset = dark.mean;

    // a clear drop after the variance peak bounds the candidate linear region
    let peak = points
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.variance.total_cmp(&b.1.variance).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .expect("non-empty");
    let peak_var = points[peak].variance;
    let mut saturation_level =
        (peak + 1..points.len()).find(|&i| points[i].variance < SATURATION_TURNOVER * peak_var);
    let mut end = saturation_level.unwrap_or(points.len());
    let (mut intercept, mut slope);
    loop {
        if distinct_levels(&points[..end]) < MIN_LEVELS {
            return Err(Error::InsufficientLevels { usable: distinct_levels(&points[..end]), required: MIN_LEVELS });
        }
        (intercept, slope) = wls_line(&points[..end], offset);
        let turnover = points[..end].iter().position(|p| {
            let predicted = intercept + slope * (p.mean - offset);
            predicted > 0.0 && p.variance < SATURATION_TURNOVER * predicted
        });
        match turnover {
            Some(i) if i < end => {
                end = i;
                saturation_level = Some(i);
            }
            _ => break,
        }
    }
    if !(slope > 0.0) {
        return Err(Error::NonPhysicalFit { gain: slope });
    }
    let linear = &points[..end];
    let saturation = match saturation_level {
        Some(i) => points[i].mean,
        None => f64::from(u16::MAX),
    };
    let mut curve: Vec<[f64; 2]> = Vec::with_capacity(linear.len());
    for p in linear {
        match curve.last_mut() {
            Some(last) if p.mean <= last[0] => {
                // merge coincident means
                last[1] = 0.5 * (last[1] + p.variance.max(0.0).sqrt());
            }
            _ => curve.push([p.mean, p.variance.max(0.0).sqrt()]),
        }
    }
    let sigmas = isotonic(&curve.iter().map(|k| k[1]).collect::<Vec<_>>());
    for (k, s) in curve.iter_mut().zip(sigmas) {
        k[1] = s;
    }
    Ok(NoiseModel {
        mode: NoiseMode::Parametric,
        gain: slope,
        offset,
        read_variance: intercept.max(0.0),
        saturation,
        empirical_curve: curve,
    })
}

/// Computes per-level statistics and fits the photon-transfer model.
pub fn fit_noise_model(series: &CalibrationSeries) -> Result<NoiseModel> {
    fit_level_stats(&series.level_stats()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact_points() -> Vec<LevelStats> {
        (0..10)
            .map(|i| {
                let d = 100.0 + 150.0 * f64::from(i);
                LevelStats { photons: f64::from(i), mean: d, variance: 9.0 + 2.0 * (d - 100.0), dof: 1000.0 }
            })
            .collect()
    }

    #[test]
    fn exact_linear_data() {
        let m = fit_level_stats(&exact_points()).unwrap();
        assert!((m.gain - 2.0).abs() < 1e-9);
        assert!((m.read_variance - 9.0).abs() < 1e-9);
        assert_eq!(m.offset, 100.0);
        assert_eq!(m.saturation, 65535.0);
        m.validate().unwrap();
    }

    #[test]
    fn turnover_marks_saturation() {
        let mut pts = exact_points();
        let top = pts.len();
        pts.push(LevelStats { photons: 20.0, mean: 2000.0, variance: 1000.0, dof: 1000.0 });
        let m = fit_level_stats(&pts).unwrap();
        assert_eq!(m.saturation, 2000.0);
        assert!((m.gain - 2.0).abs() < 1e-9);
        assert_eq!(m.empirical_curve.len(), top);
    }

    #[test]
    fn dark_only_is_insufficient() {
        let pts: Vec<LevelStats> =
            (0..12).map(|_| LevelStats { photons: 0.0, mean: 100.0, variance: 9.0, dof: 100.0 }).collect();
        assert!(matches!(fit_level_stats(&pts), Err(Error::InsufficientLevels { .. })));
    }

    #[test]
    fn negative_slope_is_non_physical() {
        let pts: Vec<LevelStats> = (0..10)
            .map(|i| LevelStats {
                photons: f64::from(i),
                mean: 100.0 + 10.0 * f64::from(i),
                variance: 10.0 - 0.05 * f64::from(i),
                dof: 100.0,
            })
            .collect();
        assert!(matches!(fit_level_stats(&pts), Err(Error::NonPhysicalFit { .. })));
    }

    #[test]
    fn sigma_of_parametric() {
        let m = NoiseModel::parametric(2.0, 100.0, 9.0, 65535.0);
        assert_eq!(m.sigma_of(100.0), 3.0);
        assert!((m.sigma_of(612.0) - 1033f64.sqrt()).abs() < 1e-12);
        assert_eq!(m.sigma_of(50.0), 3.0);
    }

    #[test]
    fn sigma_of_empirical_knots_and_clamp() {
        let m = NoiseModel {
            empirical_curve: vec![[0.0, 3.0], [100.0, 3.0], [65535.0, 360.0]],
            ..NoiseModel::parametric(2.0, 0.0, 9.0, 65535.0)
        }
        .with_mode(NoiseMode::Empirical);
        assert_eq!(m.sigma_of(100.0), 3.0);
        assert_eq!(m.sigma_of(-5.0), 3.0);
        assert_eq!(m.sigma_of(70000.0), 360.0);
        let mid = m.sigma_of(100.0 + (65535.0 - 100.0) / 2.0);
        assert!((mid - 181.5).abs() < 1e-9);
    }

    #[test]
    fn noiseless_bench_frames_identical() {
        let series =
            simulate_calibration_bench(&NoiseModel::noiseless(4000.0), Dims::plane(4, 4), 8, 3, 1).unwrap();
        for level in &series.levels {
            assert!(level.frames.iter().all(|f| f == &level.frames[0]));
            let v0 = level.frames[0].data()[0];
            assert!(level.frames[0].data().iter().all(|&v| v == v0));
        }
    }

    #[test]
    fn bench_rejects_few_levels() {
        let m = NoiseModel::parametric(2.0, 100.0, 9.0, 60000.0);
        assert!(simulate_calibration_bench(&m, Dims::plane(4, 4), 7, 10, 0).is_err());
        assert!(simulate_calibration_bench(&m, Dims::plane(4, 4), 8, 1, 0).is_err());
    }

    #[test]
    fn two_hundred_levels() {
        let m = NoiseModel::parametric(2.0, 100.0, 9.0, 60000.0);
        let s = simulate_calibration_bench(&m, Dims::plane(16, 16), 200, 1000, 3).unwrap();
        assert_eq!(s.levels.len(), 200);
        assert_eq!(s.levels[0].frames.len(), 1000);
        // square-law spacing
        let ph: Vec<f64> = s.levels.iter().map(|l| l.photons).collect();
        assert_eq!(ph[0], 0.0);
        assert!((ph[100] / ph[199] - (100.0f64 / 199.0).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn level_variance_within_chi_square_band() {
        // each level's pooled variance estimate has dof = P(F-1); its relative sd is sqrt(2/dof)
        let m = NoiseModel::parametric(2.0, 100.0, 9.0, 60000.0);
        let dims = Dims::plane(8, 8);
        let frames = 1000;
        let s = simulate_calibration_bench(&m, dims, 10, frames, 11).unwrap();
        let stats = s.level_stats().unwrap();
        for st in stats.iter().take(9) {
            let truth = m.sigma_of(st.mean).powi(2) + 1.0 / 12.0;
            let rel_sd = (2.0 / st.dof).sqrt();
            assert!(((st.variance - truth) / truth).abs() < 3.0 * rel_sd + 1e-3, "{st:?} vs {truth}");
        }
    }

    #[test]
    fn fit_order_invariant() {
        let m = NoiseModel::parametric(2.0, 100.0, 9.0, 6000.0);
        let s = simulate_calibration_bench(&m, Dims::plane(4, 4), 10, 20, 5).unwrap();
        let a = fit_noise_model(&s).unwrap();
        let mut shuffled = s.clone();
        for level in &mut shuffled.levels {
            level.frames.reverse();
            for f in &mut level.frames {
                let mut d = f.data().to_vec();
                d.reverse();
                *f = f.with_data(d).unwrap();
            }
        }
        shuffled.levels.reverse();
        assert_eq!(a, fit_noise_model(&shuffled).unwrap());
    }

    #[test]
    fn fitted_sigma_non_decreasing() {
        let m = NoiseModel::parametric(1.5, 80.0, 16.0, 30000.0);
        let s = simulate_calibration_bench(&m, Dims::plane(8, 8), 16, 50, 2).unwrap();
        let fit = fit_noise_model(&s).unwrap();
        for mode in [NoiseMode::Parametric, NoiseMode::Empirical] {
            let f = fit.clone().with_mode(mode);
            let mut prev = 0.0;
            for d in (0..40000).step_by(97) {
                let s = f.sigma_of(f64::from(d));
                assert!(s >= prev);
                prev = s;
            }
        }
    }

    #[test]
    fn json_schema_field_names() {
        let m = NoiseModel::parametric(2.0, 100.0, 9.0, 65535.0);
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        for key in ["mode", "K", "offset", "read_variance", "saturation", "empirical_curve"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["mode"], "parametric");
    }

    #[test]
    fn series_dir_roundtrip() {
        let m = NoiseModel::parametric(2.0, 100.0, 9.0, 6000.0);
        let s = simulate_calibration_bench(&m, Dims::plane(3, 2), 8, 4, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.write_dir(dir.path()).unwrap();
        assert_eq!(CalibrationSeries::read_dir(dir.path()).unwrap(), s);
    }
}
