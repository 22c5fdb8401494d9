//! Per-object and per-pixel standard scores.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imgio::{Dims, ImageStack};
use crate::mlseg::{apply_operator, Operator};
use crate::morph::ObjectTable;
use crate::score::stats::{averaged_scores, delta_distribution, match_objects, AveragedScore, DeltaHistogram, Pairing};

/// Per-object `ε` for every parameter of `raw`'s table. `σ_raw` of an object is
/// the spread of its matched counterparts across replicates; objects matched in
/// fewer than two replicates, unmatched in `comp`, or with `σ_raw = 0` get `None`.
pub fn per_object_epsilons(
    raw: &ObjectTable,
    replicates: &[ObjectTable],
    comp: &ObjectTable,
    max_distance: f64,
) -> Vec<(&'static str, Vec<Option<f64>>)> {
    let raw_c = raw.centroids();
    let rep_partners: Vec<Vec<Option<usize>>> = replicates
        .iter()
        .map(|t| match_objects(&raw_c, &t.centroids(), max_distance).partner_of_raw(raw.len()))
        .collect();
    let comp_partner = match_objects(&raw_c, &comp.centroids(), max_distance).partner_of_raw(raw.len());
    raw.param_names()
        .iter()
        .map(|&param| {
            let eps = (0..raw.len())
                .map(|i| {
                    let c = comp.value(comp_partner[i]?, param)?;
                    let values: Vec<f64> = replicates
                        .iter()
                        .zip(&rep_partners)
                        .filter_map(|(t, p)| t.value(p[i]?, param))
                        .filter(|v| v.is_finite())
                        .collect();
                    let (_, sigma) = crate::score::predictive_uncertainty(&values).ok()?;
                    let x = raw.value(i, param)?;
                    crate::score::standard_score(x, c, sigma).ok().filter(|e| e.is_finite())
                })
                .collect();
            (param, eps)
        })
        .collect()
}

/// Averaged per-object scores for each parameter.
pub fn object_score_summary(
    raw: &ObjectTable,
    replicates: &[ObjectTable],
    comp: &ObjectTable,
    max_distance: f64,
) -> Vec<(&'static str, AveragedScore)> {
    per_object_epsilons(raw, replicates, comp, max_distance)
        .into_iter()
        .map(|(p, e)| (p, averaged_scores(&e)))
        .collect()
}

/// Δ histograms (raw − comp) over matched pairs for the given parameters.
pub fn object_deltas(
    raw: &ObjectTable,
    comp: &ObjectTable,
    pairing: &Pairing,
    params: &[&str],
    bin_width: f64,
) -> Result<Vec<(String, DeltaHistogram)>> {
    params
        .iter()
        .map(|&p| {
            let deltas: Vec<f64> = pairing
                .pairs
                .iter()
                .filter_map(|&(i, j, _)| Some(raw.value(i, p)? - comp.value(j, p)?))
                .filter(|d| d.is_finite())
                .collect();
            Ok((p.to_string(), delta_distribution(&deltas, bin_width)?))
        })
        .collect()
}

/// Averaged per-pixel score of one operator at one scale.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OperatorScore {
    pub operator: String,
    pub sigma: f64,
    pub mean_epsilon: Option<f64>,
    pub std_epsilon: Option<f64>,
    pub n_pixels: usize,
    /// Pixels with zero replicate spread.
    pub n_excluded: usize,
}

fn operator_output(stack: &ImageStack, op: Operator, sigma: f64, planar: bool) -> Vec<f64> {
    let data = stack.to_f64();
    let d = stack.dims();
    if planar && d.depth > 1 {
        let plane = Dims::plane(d.width, d.height);
        data.chunks(d.slice_len()).flat_map(|s| apply_operator(s, plane, op, sigma)).collect()
    } else {
        apply_operator(&data, d, op, sigma)
    }
}

/// Per-pixel `ε` of operator outputs, `σ_raw` from the replicate spread of the
/// same operator, averaged over pixels. `planar` filters each slice on its own
/// (projection stacks); otherwise 3D stacks are filtered volumetrically.
pub fn operator_scores(
    raw: &ImageStack,
    comp: &ImageStack,
    replicates: &[ImageStack],
    operators: &[Operator],
    sigmas: &[f64],
    planar: bool,
) -> Result<Vec<OperatorScore>> {
    if replicates.len() < 2 {
        return Err(Error::TooFewReplicates { got: replicates.len(), need: 2 });
    }
    if comp.dims() != raw.dims() || replicates.iter().any(|r| r.dims() != raw.dims()) {
        return Err(Error::DimMismatch("operator inputs differ in dims".into()));
    }
    let mut out = Vec::new();
    for &op in operators {
        for &sigma in sigmas {
            let r = operator_output(raw, op, sigma, planar);
            let c = operator_output(comp, op, sigma, planar);
            let reps: Vec<Vec<f64>> =
                replicates.par_iter().map(|s| operator_output(s, op, sigma, planar)).collect();
            let n = reps.len() as f64;
            let eps: Vec<Option<f64>> = (0..r.len())
                .into_par_iter()
                .map(|p| {
                    let m = reps.iter().map(|v| v[p]).sum::<f64>() / n;
                    let var = reps.iter().map(|v| (v[p] - m).powi(2)).sum::<f64>() / (n - 1.0);
                    let s = var.sqrt();
                    // spreads at rounding level are treated as zero
                    (s > 1e-9 * m.abs().max(1.0)).then(|| (r[p] - c[p]) / s)
                })
                .collect();
            let avg = averaged_scores(&eps);
            out.push(OperatorScore {
                operator: op.name().to_string(),
                sigma,
                mean_epsilon: avg.mean_epsilon,
                std_epsilon: avg.std_epsilon,
                n_pixels: avg.n_objects,
                n_excluded: avg.n_excluded,
            });
        }
    }
    Ok(out)
}
