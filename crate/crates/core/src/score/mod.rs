//! Predictive uncertainty, standard scores `ε`, object matching, Δ
//! distributions and the tolerance report.

pub mod objects;
pub mod report;
pub mod stats;

pub use objects::{object_deltas, object_score_summary, operator_scores, per_object_epsilons, OperatorScore};
pub use report::{
    CodecScore, CodecSummary, DeltaEntry, MatchingSummary, ObjectScoreEntry, OperatorScoreEntry, OpticsEntry,
    ParameterScore, Provenance, ToleranceReport, REPORT_SCHEMA, REPORT_SCHEMA_VERSION,
};
pub use stats::{
    averaged_scores, delta_distribution, match_objects, mean_std, predictive_uncertainty, standard_score,
    AveragedScore, DeltaHistogram, Pairing, Verdict,
};

use crate::codec::CodecId;
use crate::error::Result;

/// `ε` and verdict. With `σ_raw = 0` an unchanged value scores 0 and any
/// change is indeterminate.
pub fn score_value(chi_raw: f64, chi_c: f64, sigma_raw: f64) -> (Option<f64>, Verdict) {
    let epsilon = match standard_score(chi_raw, chi_c, sigma_raw) {
        Ok(e) => Some(e),
        Err(_) if chi_raw == chi_c => Some(0.0),
        Err(_) => None,
    };
    (epsilon, Verdict::of(epsilon))
}

/// Scores named global parameters: `raw` values, one value set per replicate,
/// and one per codec.
pub fn score_parameters(
    raw: &[(&str, f64)],
    replicates: &[Vec<(&str, f64)>],
    comps: &[(CodecId, Vec<(&str, f64)>)],
) -> Result<Vec<ParameterScore>> {
    raw.iter()
        .enumerate()
        .map(|(k, &(name, chi_raw))| {
            let values: Vec<f64> = replicates.iter().map(|r| r[k].1).collect();
            let (chi_raw_mean, sigma_raw) = predictive_uncertainty(&values)?;
            let codecs = comps
                .iter()
                .map(|(id, c)| {
                    let chi_c = c[k].1;
                    let (epsilon, verdict) = score_value(chi_raw, chi_c, sigma_raw);
                    CodecScore { codec: *id, chi_c, epsilon, verdict }
                })
                .collect();
            Ok(ParameterScore { name: name.to_string(), chi_raw, chi_raw_mean, sigma_raw, codecs })
        })
        .collect()
}
