//! Breiman-style random forest over per-pixel feature vectors.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{FeatureRecipe, FeatureStack};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::{derive_seed, StreamRng};

pub const CLASSIFIER_FORMAT_VERSION: u32 = 1;

/// Sparse training labels: pixel index → class index into `classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScribbles {
    pub classes: Vec<String>,
    pub labels: BTreeMap<usize, usize>,
}

impl LabelScribbles {
    pub fn new(classes: Vec<String>) -> Self {
        Self { classes, labels: BTreeMap::new() }
    }

    pub fn insert(&mut self, pixel: usize, class: usize) {
        self.labels.insert(pixel, class);
    }

    pub fn validate(&self, n_pixels: usize) -> Result<()> {
        if let Some((&p, _)) = self.labels.iter().find(|(&p, _)| p >= n_pixels) {
            return Err(Error::InvalidSpec(format!("scribble pixel {p} outside image of {n_pixels} pixels")));
        }
        if let Some((_, &c)) = self.labels.iter().find(|(_, &c)| c >= self.classes.len()) {
            return Err(Error::InvalidSpec(format!("scribble class {c} not among {} classes", self.classes.len())));
        }
        let mut present = vec![false; self.classes.len()];
        for &c in self.labels.values() {
            present[c] = true;
        }
        let n_present = present.iter().filter(|&&p| p).count();
        if self.classes.len() < 2 || n_present < 2 {
            return Err(Error::DegenerateLabels(format!("{n_present} labelled class(es); need at least two")));
        }
        if let Some(missing) = present.iter().position(|&p| !p) {
            return Err(Error::InvalidSpec(format!("class '{}' has no labelled pixel", self.classes[missing])));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node<T> {
    Split { feature: u32, threshold: T, left: u32, right: u32 },
    Leaf { histogram: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree<T> {
    pub nodes: Vec<Node<T>>,
}

impl<T: Real> DecisionTree<T> {
    /// Leaf histogram reached by `row`.
    pub fn leaf(&self, row: &[T]) -> &[u32] {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Split { feature, threshold, left, right } => {
                    i = if row[*feature as usize] <= *threshold { *left as usize } else { *right as usize };
                }
                Node::Leaf { histogram } => return histogram,
            }
        }
    }

    fn max_feature(&self) -> Option<u32> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub min_leaf: usize,
    /// `None` grows until purity or `min_leaf`.
    pub max_depth: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 100, min_leaf: 2, max_depth: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelClassifier<T> {
    pub version: u32,
    pub recipe: FeatureRecipe,
    pub classes: Vec<String>,
    pub n_features: usize,
    pub train_seed: u64,
    pub params: ForestParams,
    pub forest: Vec<DecisionTree<T>>,
}

/// Per-pixel class probabilities, `data[pixel * n_classes + class]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub n_classes: usize,
    pub n_pixels: usize,
    pub data: Vec<f64>,
}

impl ProbabilityMap {
    pub fn get(&self, pixel: usize, class: usize) -> f64 {
        self.data[pixel * self.n_classes + class]
    }

    pub fn class_plane(&self, class: usize) -> Vec<f64> {
        (0..self.n_pixels).map(|p| self.get(p, class)).collect()
    }
}

fn gini(counts: &[u32], total: u32) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = f64::from(total);
    1.0 - counts.iter().map(|&c| (f64::from(c) / t).powi(2)).sum::<f64>()
}

struct Grower<'a, T> {
    features: &'a FeatureStack<T>,
    y: &'a [usize],
    pixels: &'a [usize],
    n_classes: usize,
    mtry: usize,
    params: ForestParams,
    rng: StreamRng,
    nodes: Vec<Node<T>>,
}

struct BestSplit<T> {
    feature: usize,
    threshold: T,
    score: f64,
}

impl<T: Real> Grower<'_, T> {
    fn histogram(&self, samples: &[usize]) -> Vec<u32> {
        let mut h = vec![0u32; self.n_classes];
        for &s in samples {
            h[self.y[s]] += 1;
        }
        h
    }

    fn value(&self, sample: usize, feature: usize) -> T {
        self.features.get(self.pixels[sample], feature)
    }

    fn best_split_on(&self, samples: &[usize], feature: usize, parent: &[u32]) -> Option<BestSplit<T>> {
        let mut order: Vec<(T, usize)> = samples.iter().map(|&s| (self.value(s, feature), self.y[s])).collect();
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));
        if order.first()?.0 == order.last()?.0 {
            return None;
        }
        let n = order.len();
        let mut left = vec![0u32; self.n_classes];
        let mut right = parent.to_vec();
        let mut best: Option<BestSplit<T>> = None;
        let min_leaf = self.params.min_leaf.max(1);
        for i in 0..n - 1 {
            let c = order[i].1;
            left[c] += 1;
            right[c] -= 1;
            if order[i].0 == order[i + 1].0 {
                continue;
            }
            let nl = i + 1;
            let nr = n - nl;
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let score = (nl as f64 * gini(&left, nl as u32) + nr as f64 * gini(&right, nr as u32)) / n as f64;
            if best.as_ref().is_none_or(|b| score < b.score) {
                let two = T::of(2.0);
                let mut threshold = order[i].0 / two + order[i + 1].0 / two;
                if threshold >= order[i + 1].0 {
                    threshold = order[i].0;
                }
                best = Some(BestSplit { feature, threshold, score });
            }
        }
        best
    }

    fn grow(&mut self, samples: Vec<usize>, depth: usize) -> u32 {
        let id = self.nodes.len() as u32;
        let hist = self.histogram(&samples);
        self.nodes.push(Node::Leaf { histogram: hist.clone() });
        let pure = hist.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_capped = self.params.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || samples.len() < 2 * self.params.min_leaf.max(1) {
            return id;
        }
        let parent_gini = gini(&hist, samples.len() as u32);
        // random feature order; constant features do not count toward mtry
        let nf = self.features.n_features;
        let mut feats: Vec<usize> = (0..nf).collect();
        let mut best: Option<BestSplit<T>> = None;
        let mut tried = 0;
        for k in 0..nf {
            let j = k + self.rng.below(nf - k);
            feats.swap(k, j);
            let f = feats[k];
            if let Some(s) = self.best_split_on(&samples, f, &hist) {
                tried += 1;
                if best.as_ref().is_none_or(|b| s.score < b.score) {
                    best = Some(s);
                }
            }
            if tried >= self.mtry {
                break;
            }
        }
        let Some(split) = best else { return id };
        if split.score >= parent_gini {
            return id;
        }
        let (l, r): (Vec<usize>, Vec<usize>) =
            samples.iter().partition(|&&s| self.value(s, split.feature) <= split.threshold);
        if l.is_empty() || r.is_empty() {
            return id;
        }
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id as usize] =
            Node::Split { feature: split.feature as u32, threshold: split.threshold, left, right };
        id
    }
}

/// Trains a forest on the scribbled pixels of `features`. Deterministic in `seed`
/// regardless of thread count.
pub fn train_classifier<T: Real>(
    features: &FeatureStack<T>,
    recipe: &FeatureRecipe,
    scribbles: &LabelScribbles,
    params: ForestParams,
    seed: u64,
) -> Result<PixelClassifier<T>> {
    scribbles.validate(features.n_pixels)?;
    if params.n_trees == 0 {
        return Err(Error::InvalidSpec("forest needs at least one tree".into()));
    }
    if recipe.feature_count() != features.n_features {
        return Err(Error::RecipeMismatch(format!(
            "recipe yields {} features, stack has {}",
            recipe.feature_count(),
            features.n_features
        )));
    }
    if features.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSpec("non-finite feature values".into()));
    }
    let pixels: Vec<usize> = scribbles.labels.keys().copied().collect();
    let y: Vec<usize> = scribbles.labels.values().copied().collect();
    let n = pixels.len();
    let mtry = ((features.n_features as f64).sqrt().floor() as usize).max(1);
    let n_classes = scribbles.classes.len();

    let forest: Vec<DecisionTree<T>> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let tree_seed = derive_seed(seed, t as u64);
            let mut rng = StreamRng::new(tree_seed, 0);
            let bootstrap: Vec<usize> = (0..n).map(|_| rng.below(n)).collect();
            let mut g = Grower {
                features,
                y: &y,
                pixels: &pixels,
                n_classes,
                mtry,
                params,
                rng: StreamRng::new(tree_seed, 1),
                nodes: Vec::new(),
            };
            g.grow(bootstrap, 0);
            DecisionTree { nodes: g.nodes }
        })
        .collect();

    Ok(PixelClassifier {
        version: CLASSIFIER_FORMAT_VERSION,
        recipe: recipe.clone(),
        classes: scribbles.classes.clone(),
        n_features: features.n_features,
        train_seed: seed,
        params,
        forest,
    })
}

impl<T: Real> PixelClassifier<T> {
    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    /// Structural checks for a deserialized classifier.
    pub fn validate(&self) -> Result<()> {
        if self.version != CLASSIFIER_FORMAT_VERSION {
            return Err(Error::InvalidSpec(format!("unsupported classifier version {}", self.version)));
        }
        if self.recipe.feature_count() != self.n_features {
            return Err(Error::RecipeMismatch("recipe and feature count disagree".into()));
        }
        for tree in &self.forest {
            if tree.max_feature().is_some_and(|f| f as usize >= self.n_features) {
                return Err(Error::RecipeMismatch("tree references an unknown feature".into()));
            }
            for node in &tree.nodes {
                match node {
                    Node::Leaf { histogram } if histogram.len() != self.classes.len() => {
                        return Err(Error::InvalidSpec("leaf histogram width differs from class count".into()))
                    }
                    Node::Split { left, right, .. }
                        if *left as usize >= tree.nodes.len() || *right as usize >= tree.nodes.len() =>
                    {
                        return Err(Error::InvalidSpec("dangling tree node".into()))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Mean of normalized leaf histograms over all trees.
    pub fn predict_proba(&self, features: &FeatureStack<T>) -> Result<ProbabilityMap> {
        if features.n_features != self.n_features {
            return Err(Error::RecipeMismatch(format!(
                "classifier expects {} features, got {}",
                self.n_features, features.n_features
            )));
        }
        let k = self.classes.len();
        let n_trees = self.forest.len() as f64;
        let rows: Vec<Vec<f64>> = (0..features.n_pixels)
            .into_par_iter()
            .with_min_len(256)
            .map(|p| {
                let row = features.row(p);
                let mut acc = vec![0.0f64; k];
                for tree in &self.forest {
                    let h = tree.leaf(row);
                    let total: u32 = h.iter().sum();
                    let inv = 1.0 / f64::from(total.max(1));
                    for (a, &c) in acc.iter_mut().zip(h) {
                        *a += f64::from(c) * inv;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= n_trees);
                acc
            })
            .collect();
        Ok(ProbabilityMap { n_classes: k, n_pixels: features.n_pixels, data: rows.concat() })
    }
}

impl<T: Real + Serialize + serde::de::DeserializeOwned> PixelClassifier<T> {
    /// Reads and validates a classifier JSON file.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let clf: Self = serde_json::from_str(&text)?;
        if clf.version != CLASSIFIER_FORMAT_VERSION {
            return Err(Error::InvalidSpec(format!("classifier format version {}", clf.version)));
        }
        clf.validate()?;
        Ok(clf)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the serialized classifier.
    pub fn hash(&self) -> String {
        crate::hash::json_hash(self)
    }
}

/// `P[class] >= threshold` per pixel.
pub fn threshold_mask(proba: &ProbabilityMap, class: usize, threshold: f64) -> Result<Vec<bool>> {
    if class >= proba.n_classes {
        return Err(Error::InvalidSpec(format!("class {class} out of {} classes", proba.n_classes)));
    }
    Ok((0..proba.n_pixels).map(|p| proba.get(p, class) >= threshold).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlseg::features::FeatureKind;

    fn toy() -> (FeatureStack<f64>, FeatureRecipe, LabelScribbles) {
        // 2 features, class = x0 > 0.5
        let n = 200;
        let rng = crate::rng::CounterRng::new(3, 0);
        let mut data = Vec::new();
        let mut s = LabelScribbles::new(vec!["bg".into(), "fg".into()]);
        for p in 0..n {
            let a = rng.uniform(2 * p as u64);
            let b = rng.uniform(2 * p as u64 + 1);
            data.extend([a, b]);
            s.insert(p, usize::from(a > 0.5));
        }
        let fs = FeatureStack { n_features: 2, n_pixels: n, data };
        let recipe = FeatureRecipe {
            sigmas: vec![1.0],
            kinds: vec![FeatureKind::RawIntensity, FeatureKind::Gaussian],
            dimensionality: 2,
        };
        (fs, recipe, s)
    }

    #[test]
    fn separable_training_accuracy() {
        let (fs, recipe, s) = toy();
        let clf = train_classifier(&fs, &recipe, &s, ForestParams { n_trees: 25, ..Default::default() }, 1).unwrap();
        let p = clf.predict_proba(&fs).unwrap();
        let correct = s.labels.iter().filter(|(&px, &c)| (p.get(px, 1) >= 0.5) == (c == 1)).count();
        assert_eq!(correct, s.labels.len());
    }

    #[test]
    fn deterministic_forest() {
        let (fs, recipe, s) = toy();
        let params = ForestParams { n_trees: 10, ..Default::default() };
        let a = train_classifier(&fs, &recipe, &s, params, 5).unwrap();
        let b = train_classifier(&fs, &recipe, &s, params, 5).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| train_classifier(&fs, &recipe, &s, params, 5).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn single_class_is_degenerate() {
        let (fs, recipe, mut s) = toy();
        s.labels.values_mut().for_each(|c| *c = 0);
        let err = train_classifier(&fs, &recipe, &s, ForestParams::default(), 0).unwrap_err();
        assert!(matches!(err, Error::DegenerateLabels(_)));
    }

    #[test]
    fn leaf_histograms_sum_to_sample_count() {
        let (fs, recipe, s) = toy();
        let clf = train_classifier(&fs, &recipe, &s, ForestParams { n_trees: 3, ..Default::default() }, 2).unwrap();
        for tree in &clf.forest {
            // the root histogram covers the whole bootstrap sample
            if let Node::Leaf { histogram } = &tree.nodes[0] {
                assert_eq!(histogram.iter().sum::<u32>() as usize, s.labels.len());
            }
            let leaf_total: u32 = tree
                .nodes
                .iter()
                .filter_map(|n| match n {
                    Node::Leaf { histogram } => Some(histogram.iter().sum::<u32>()),
                    _ => None,
                })
                .sum();
            assert_eq!(leaf_total as usize, s.labels.len());
        }
        clf.validate().unwrap();
    }

    #[test]
    fn pure_leaf_gives_certainty() {
        let tree = DecisionTree {
            nodes: vec![
                Node::Split { feature: 0, threshold: 0.5, left: 1, right: 2 },
                Node::Leaf { histogram: vec![4, 0] },
                Node::Leaf { histogram: vec![1, 3] },
            ],
        };
        let (_, recipe, s) = toy();
        let clf = PixelClassifier {
            version: CLASSIFIER_FORMAT_VERSION,
            recipe,
            classes: s.classes.clone(),
            n_features: 2,
            train_seed: 0,
            params: ForestParams { n_trees: 1, ..Default::default() },
            forest: vec![tree],
        };
        let fs = FeatureStack { n_features: 2, n_pixels: 2, data: vec![0.1, 0.0, 0.9, 0.0] };
        let p = clf.predict_proba(&fs).unwrap();
        assert_eq!(p.get(0, 0), 1.0);
        assert_eq!(p.get(1, 1), 0.75);
        let bad = FeatureStack { n_features: 3, n_pixels: 1, data: vec![0.0; 3] };
        assert!(matches!(clf.predict_proba(&bad), Err(Error::RecipeMismatch(_))));
    }

    #[test]
    fn probabilities_sum_to_one() {
        let (fs, recipe, s) = toy();
        let clf = train_classifier(&fs, &recipe, &s, ForestParams { n_trees: 7, ..Default::default() }, 9).unwrap();
        let p = clf.predict_proba(&fs).unwrap();
        for px in 0..p.n_pixels {
            let sum: f64 = (0..2).map(|c| p.get(px, c)).sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!((0..2).all(|c| (0.0..=1.0).contains(&p.get(px, c))));
        }
    }

    #[test]
    fn threshold_tie_is_foreground() {
        let p = ProbabilityMap { n_classes: 2, n_pixels: 3, data: vec![0.3, 0.7, 0.5, 0.5, 0.6, 0.4] };
        assert_eq!(threshold_mask(&p, 1, 0.5).unwrap(), vec![true, true, false]);
        assert_eq!(threshold_mask(&p, 1, 0.7).unwrap(), vec![true, false, false]);
        assert!(threshold_mask(&p, 2, 0.5).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let (fs, recipe, s) = toy();
        let clf = train_classifier(&fs, &recipe, &s, ForestParams { n_trees: 2, ..Default::default() }, 4).unwrap();
        let json = serde_json::to_string(&clf).unwrap();
        let back: PixelClassifier<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, clf);
    }
}
