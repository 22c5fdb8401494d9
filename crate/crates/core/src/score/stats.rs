//! Standard scores, predictive uncertainty and object matching.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample mean and sample standard deviation (n−1) of replicate values.
pub fn predictive_uncertainty(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::TooFewReplicates { got: values.len(), need: 2 });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// `ε = (χ_raw − χ_c) / σ_raw`.
pub fn standard_score(chi_raw: f64, chi_c: f64, sigma_raw: f64) -> Result<f64> {
    if !(sigma_raw > 0.0) {
        return Err(Error::DegenerateSpread);
    }
    Ok((chi_raw - chi_c) / sigma_raw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Tolerable,
    Intolerable,
    /// `σ_raw = 0`: the parameter never varied across replicates.
    Indeterminate,
}

impl Verdict {
    pub fn of(epsilon: Option<f64>) -> Self {
        match epsilon {
            None => Verdict::Indeterminate,
            Some(e) if e.abs() < 1.0 => Verdict::Tolerable,
            Some(_) => Verdict::Intolerable,
        }
    }
}

/// Mean and sample std over values; `(0, 0)` for one value.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    match values.len() {
        0 => None,
        1 => Some((values[0], 0.0)),
        _ => predictive_uncertainty(values).ok(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pairing {
    /// `(raw index, other index, distance)`, ascending by distance.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unpaired_raw: Vec<usize>,
    pub unpaired_other: Vec<usize>,
}

impl Pairing {
    /// Partner of each raw object, if any.
    pub fn partner_of_raw(&self, n_raw: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n_raw];
        for &(r, o, _) in &self.pairs {
            out[r] = Some(o);
        }
        out
    }
}

/// Greedy nearest-centroid matching: candidate pairs within `max_distance` are
/// taken in ascending distance (ties by raw, then other index), each object at
/// most once.
pub fn match_objects(raw: &[[f64; 3]], other: &[[f64; 3]], max_distance: f64) -> Pairing {
    let mut candidates = Vec::new();
    for (i, a) in raw.iter().enumerate() {
        for (j, b) in other.iter().enumerate() {
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            if d <= max_distance {
                candidates.push((i, j, d));
            }
        }
    }
    candidates.sort_by(|x, y| x.2.total_cmp(&y.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
    let mut used_raw = vec![false; raw.len()];
    let mut used_other = vec![false; other.len()];
    let mut pairs = Vec::new();
    for (i, j, d) in candidates {
        if !used_raw[i] && !used_other[j] {
            used_raw[i] = true;
            used_other[j] = true;
            pairs.push((i, j, d));
        }
    }
    Pairing {
        pairs,
        unpaired_raw: (0..raw.len()).filter(|&i| !used_raw[i]).collect(),
        unpaired_other: (0..other.len()).filter(|&j| !used_other[j]).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaHistogram {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub bin_width: f64,
    /// Lower edge of the first bin, a multiple of `bin_width`.
    pub bin_start: f64,
    pub counts: Vec<u64>,
}

/// Histogram of `Δ = raw − other` over matched pairs.
pub fn delta_distribution(deltas: &[f64], bin_width: f64) -> Result<DeltaHistogram> {
    if deltas.is_empty() {
        return Err(Error::EmptyPairing);
    }
    if !(bin_width > 0.0) {
        return Err(Error::InvalidSpec("bin width must be positive".into()));
    }
    let (mean, std) = mean_std(deltas).expect("non-empty");
    let lo = deltas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first = (lo / bin_width).floor();
    let bins = ((hi / bin_width).floor() - first) as usize + 1;
    let mut counts = vec![0u64; bins];
    for &d in deltas {
        let b = ((d / bin_width).floor() - first) as usize;
        counts[b.min(bins - 1)] += 1;
    }
    Ok(DeltaHistogram { n: deltas.len(), mean, std, bin_width, bin_start: first * bin_width, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedScore {
    pub mean_epsilon: Option<f64>,
    pub std_epsilon: Option<f64>,
    pub n_objects: usize,
    /// Objects without a usable score (unmatched or `σ_raw = 0`).
    pub n_excluded: usize,
}

pub fn averaged_scores(epsilons: &[Option<f64>]) -> AveragedScore {
    let valid: Vec<f64> = epsilons.iter().flatten().copied().collect();
    let ms = mean_std(&valid);
    AveragedScore {
        mean_epsilon: ms.map(|m| m.0),
        std_epsilon: ms.map(|m| m.1),
        n_objects: valid.len(),
        n_excluded: epsilons.len() - valid.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uncertainty_examples() {
        let (m, s) = predictive_uncertainty(&[10.0, 10.0, 10.0]).unwrap();
        assert_eq!((m, s), (10.0, 0.0));
        let (m, s) = predictive_uncertainty(&[9.0, 11.0]).unwrap();
        assert_eq!(m, 10.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(predictive_uncertainty(&[1.0]), Err(Error::TooFewReplicates { got: 1, need: 2 })));
    }

    #[test]
    fn score_examples() {
        assert_eq!(standard_score(5.0, 5.0, 1.0).unwrap(), 0.0);
        assert_eq!(standard_score(100.0, 98.0, 0.5).unwrap(), 4.0);
        assert!(matches!(standard_score(1.0, 2.0, 0.0), Err(Error::DegenerateSpread)));
    }

    #[test]
    fn verdicts() {
        assert_eq!(Verdict::of(Some(0.99)), Verdict::Tolerable);
        assert_eq!(Verdict::of(Some(-1.0)), Verdict::Intolerable);
        assert_eq!(Verdict::of(None), Verdict::Indeterminate);
    }

    #[test]
    fn matching_examples() {
        let a = vec![[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [20.0, 5.0, 0.0]];
        let same = match_objects(&a, &a, 5.0);
        assert_eq!(same.pairs.iter().map(|p| (p.0, p.1)).collect::<Vec<_>>(), vec![(0, 0), (1, 1), (2, 2)]);
        assert!(same.pairs.iter().all(|p| p.2 == 0.0));
        let shifted: Vec<[f64; 3]> = a.iter().map(|c| [c[0] + 1.0, c[1], c[2]]).collect();
        let m = match_objects(&a, &shifted, 5.0);
        assert_eq!(m.pairs.len(), 3);
        assert!(m.pairs.iter().all(|p| p.2 == 1.0));
        let mut extra = a.clone();
        extra.push([50.0, 50.0, 0.0]);
        let m = match_objects(&a, &extra, 5.0);
        assert_eq!(m.unpaired_other, vec![3]);
        assert!(m.unpaired_raw.is_empty());
    }

    #[test]
    fn delta_examples() {
        let h = delta_distribution(&[0.0, 0.0, 0.0], 0.5).unwrap();
        assert_eq!((h.mean, h.std, h.counts.clone()), (0.0, 0.0, vec![3]));
        let h = delta_distribution(&[1.0, 3.0], 0.5).unwrap();
        assert_eq!(h.mean, 2.0);
        assert!((h.std - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(h.bin_start, 1.0);
        assert_eq!(h.counts, vec![1, 0, 0, 0, 1]);
        assert!(matches!(delta_distribution(&[], 0.5), Err(Error::EmptyPairing)));
    }

    #[test]
    fn averaged_examples() {
        let a = averaged_scores(&[Some(0.0), Some(0.0)]);
        assert_eq!((a.mean_epsilon, a.std_epsilon), (Some(0.0), Some(0.0)));
        let a = averaged_scores(&[Some(-1.0), Some(1.0), None]);
        assert_eq!(a.mean_epsilon, Some(0.0));
        assert!((a.std_epsilon.unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!((a.n_objects, a.n_excluded), (2, 1));
    }

    proptest! {
        #[test]
        fn epsilon_antisymmetric_and_inverse_scaled(a in -1e6f64..1e6, b in -1e6f64..1e6, s in 1e-3f64..1e3, k in 0.1f64..10.0) {
            let e = standard_score(a, b, s).unwrap();
            prop_assert_eq!(standard_score(b, a, s).unwrap(), -e);
            let scaled = standard_score(a, b, s * k).unwrap();
            prop_assert!((scaled * k - e).abs() <= 1e-9 * e.abs().max(1.0));
        }

        #[test]
        fn verdict_monotone(a in -100f64..100.0, b in -100f64..100.0, s in 0.01f64..10.0, t in 0.0f64..1.0) {
            let far = Verdict::of(Some(standard_score(a, b, s).unwrap()));
            let near = Verdict::of(Some(standard_score(a, a + t * (b - a), s).unwrap()));
            prop_assert!(!(far == Verdict::Tolerable && near == Verdict::Intolerable));
        }

        #[test]
        fn matching_order_invariant(pts in proptest::collection::vec((0i32..40, 0i32..40), 1..20), shift in 0usize..20) {
            let a: Vec<[f64; 3]> = pts.iter().map(|&(x, y)| [f64::from(x) * 3.0, f64::from(y) * 3.0, 0.0]).collect();
            let mut b = a.clone();
            b.rotate_left(shift % a.len());
            let m = match_objects(&a, &b, 1.0);
            // every raw object pairs with a coincident copy
            prop_assert_eq!(m.pairs.len(), a.len());
            prop_assert!(m.pairs.iter().all(|p| p.2 == 0.0 && a[p.0] == b[p.1]));
        }
    }
}
