//! The tolerance report: one JSON document per run, checked against the bundled
//! schema before it is written.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::CodecId;
use crate::error::{Error, Result};
use crate::score::stats::{DeltaHistogram, Verdict};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const REPORT_SCHEMA: &str = include_str!("../../../../schemas/tolerance_report.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecScore {
    pub codec: CodecId,
    pub chi_c: f64,
    pub epsilon: Option<f64>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterScore {
    pub name: String,
    /// Value on the raw image.
    pub chi_raw: f64,
    /// Mean over replicates.
    pub chi_raw_mean: f64,
    pub sigma_raw: f64,
    pub codecs: Vec<CodecScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectScoreEntry {
    pub codec: CodecId,
    pub parameter: String,
    pub mean_epsilon: Option<f64>,
    pub std_epsilon: Option<f64>,
    pub n_objects: usize,
    pub n_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaEntry {
    pub codec: CodecId,
    pub parameter: String,
    #[serde(flatten)]
    pub histogram: DeltaHistogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingSummary {
    pub codec: CodecId,
    pub max_distance: f64,
    pub pairs: usize,
    pub unpaired_raw: usize,
    pub unpaired_comp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecSummary {
    pub codec: CodecId,
    pub compression_ratio: f64,
    pub encoded_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorScoreEntry {
    pub codec: CodecId,
    /// Where the operators were applied, e.g. `image`, `projections`, `reconstruction`.
    pub domain: String,
    pub operator: String,
    pub sigma: f64,
    pub mean_epsilon: Option<f64>,
    pub std_epsilon: Option<f64>,
    pub n_pixels: usize,
    pub n_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticsEntry {
    pub name: String,
    pub value: f64,
    pub uncertainty: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_hash: String,
    pub classifier_hash: String,
    pub recipe_hash: String,
    pub codec_ids: Vec<CodecId>,
    pub seeds: BTreeMap<String, u64>,
    pub n_replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceReport {
    pub schema_version: u32,
    pub dimensionality: u8,
    pub parameters: Vec<ParameterScore>,
    pub object_scores: Vec<ObjectScoreEntry>,
    pub deltas: Vec<DeltaEntry>,
    pub matching: Vec<MatchingSummary>,
    pub codecs: Vec<CodecSummary>,
    pub operator_scores: Vec<OperatorScoreEntry>,
    pub optics: Vec<OpticsEntry>,
    /// Conventions behind the numbers (estimators, matching, synthesis).
    pub notes: Vec<String>,
    pub provenance: Provenance,
}

impl ToleranceReport {
    /// Checks score algebra and verdicts, then the JSON schema.
    pub fn validate(&self) -> Result<()> {
        for p in &self.parameters {
            for c in &p.codecs {
                if p.sigma_raw > 0.0 {
                    let expect = (p.chi_raw - c.chi_c) / p.sigma_raw;
                    if c.epsilon != Some(expect) {
                        return Err(Error::SchemaViolation(format!(
                            "{} / {}: epsilon {:?} differs from {expect}",
                            p.name, c.codec, c.epsilon
                        )));
                    }
                }
                if c.verdict != Verdict::of(c.epsilon) {
                    return Err(Error::SchemaViolation(format!("{} / {}: verdict inconsistent", p.name, c.codec)));
                }
            }
        }
        let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA)?;
        let validator =
            jsonschema::validator_for(&schema).map_err(|e| Error::SchemaViolation(format!("bad schema: {e}")))?;
        let instance = serde_json::to_value(self)?;
        let errors: Vec<String> = validator.iter_errors(&instance).map(|e| format!("{}: {e}", e.instance_path())).collect();
        if !errors.is_empty() {
            return Err(Error::SchemaViolation(errors.join("; ")));
        }
        Ok(())
    }

    /// Validated, pretty-printed JSON with a trailing newline.
    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: ToleranceReport = serde_json::from_str(text)?;
        report.validate()?;
        Ok(report)
    }

    pub fn parameter(&self, name: &str) -> Option<&ParameterScore> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn epsilon(&self, name: &str, codec: CodecId) -> Option<f64> {
        self.parameter(name)?.codecs.iter().find(|c| c.codec == codec)?.epsilon
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::score_parameters;

    pub(crate) fn sample() -> ToleranceReport {
        let raw = vec![("N_tot", 12.0), ("A_tot", 1500.0)];
        let reps = vec![vec![("N_tot", 12.0), ("A_tot", 1498.0)], vec![("N_tot", 12.0), ("A_tot", 1503.0)]];
        let comps = vec![(CodecId::Identity, raw.clone()), (CodecId::Bit8, vec![("N_tot", 11.0), ("A_tot", 1440.0)])];
        ToleranceReport {
            schema_version: REPORT_SCHEMA_VERSION,
            dimensionality: 2,
            parameters: score_parameters(&raw, &reps, &comps).unwrap(),
            object_scores: vec![ObjectScoreEntry {
                codec: CodecId::Bit8,
                parameter: "area".into(),
                mean_epsilon: Some(1.5),
                std_epsilon: None,
                n_objects: 1,
                n_excluded: 0,
            }],
            deltas: vec![],
            matching: vec![MatchingSummary { codec: CodecId::Bit8, max_distance: 5.0, pairs: 11, unpaired_raw: 1, unpaired_comp: 0 }],
            codecs: vec![CodecSummary { codec: CodecId::Bit8, compression_ratio: 2.0, encoded_bytes: 100 }],
            operator_scores: vec![],
            optics: vec![OpticsEntry { name: "psf_fwhm_raw".into(), value: 4.5, uncertainty: Some(0.01) }],
            notes: vec!["per-object sigma".into()],
            provenance: Provenance {
                model_hash: "ab".into(),
                classifier_hash: "cd".into(),
                recipe_hash: "ef".into(),
                codec_ids: vec![CodecId::Identity, CodecId::Bit8],
                seeds: BTreeMap::from([("synth".to_string(), u64::MAX)]),
                n_replicates: 2,
            },
        }
    }

    #[test]
    fn validates_and_roundtrips_bytes() {
        let r = sample();
        let text = r.to_json().unwrap();
        let back = ToleranceReport::from_json(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn inconsistent_epsilon_rejected() {
        let mut r = sample();
        r.parameters[1].codecs[1].epsilon = Some(0.0);
        assert!(matches!(r.validate(), Err(Error::SchemaViolation(_))));
    }

    #[test]
    fn schema_rejects_bad_version() {
        let mut v = serde_json::to_value(sample()).unwrap();
        v["schema_version"] = serde_json::json!(7);
        assert!(matches!(ToleranceReport::from_json(&v.to_string()), Err(Error::SchemaViolation(_))));
    }

    #[test]
    fn schema_rejects_unknown_fields() {
        let mut v = serde_json::to_value(sample()).unwrap();
        v["extra"] = serde_json::json!(1);
        assert!(ToleranceReport::from_json(&v.to_string()).is_err());
    }
}
