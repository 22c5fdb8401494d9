//! Trainable pixel/voxel classification: feature stack, random forest and
//! probability thresholding.

pub mod features;
pub mod filters;
pub mod forest;

pub use features::{apply_operator, compute_features, FeatureKind, FeatureRecipe, FeatureStack, Operator};
pub use forest::{
    threshold_mask, train_classifier, DecisionTree, ForestParams, LabelScribbles, Node, PixelClassifier,
    ProbabilityMap,
};

use crate::error::{Error, Result};
use crate::imgio::LabelMap;
use crate::rng::StreamRng;

/// Draws `per_class` random scribble pixels for each class from a class map
/// (`class_of[pixel]`), without replacement. Classes with fewer pixels contribute all of them.
pub fn sample_scribbles(class_of: &[usize], classes: Vec<String>, per_class: usize, seed: u64) -> Result<LabelScribbles> {
    let mut scribbles = LabelScribbles::new(classes);
    let mut rng = StreamRng::new(seed, 0x5343_5249);
    for class in 0..scribbles.classes.len() {
        let mut pool: Vec<usize> = (0..class_of.len()).filter(|&p| class_of[p] == class).collect();
        let take = per_class.min(pool.len());
        for k in 0..take {
            let j = k + rng.below(pool.len() - k);
            pool.swap(k, j);
            scribbles.insert(pool[k], class);
        }
    }
    Ok(scribbles)
}

/// Two-class map (0 = background, 1 = object) from a ground-truth label map.
pub fn binary_classes(gt: &LabelMap) -> Vec<usize> {
    gt.data.iter().map(|&l| usize::from(l != 0)).collect()
}

/// Trains on `stack`-derived features with scribbles, in one call.
pub fn train_on_stack(
    stack: &crate::imgio::ImageStack,
    recipe: &FeatureRecipe,
    scribbles: &LabelScribbles,
    params: ForestParams,
    seed: u64,
) -> Result<PixelClassifier<f32>> {
    let features = compute_features::<f32>(stack, recipe)?;
    train_classifier(&features, recipe, scribbles, params, seed)
}

/// Features plus prediction for one stack.
pub fn predict_stack(clf: &PixelClassifier<f32>, stack: &crate::imgio::ImageStack) -> Result<ProbabilityMap> {
    let features = compute_features::<f32>(stack, &clf.recipe)
        .map_err(|e| match e {
            Error::DimMismatch(m) => Error::RecipeMismatch(m),
            other => other,
        })?;
    clf.predict_proba(&features)
}
