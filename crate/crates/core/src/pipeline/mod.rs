//! End-to-end orchestration: calibrate, synthesize, compress, train, predict,
//! segment, match and score, writing every intermediate artifact.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;

pub use config::{
    ClassifierConfig, Crop, InputConfig, MatchingConfig, ModelConfig, OperatorConfig, PipelineConfig, SynthConfig,
    TomoConfig, CONFIG_VERSION, DEMO_CONFIG,
};

use crate::calib::{fit_noise_model, simulate_calibration_bench, NoiseModel};
use crate::codec::{apply_codec, jpeg_search_quality, CodecId};
use crate::error::{Error, Result};
use crate::imgio::{generate_phantom, read_stack, write_stack, Dims, ImageStack, LabelMap};
use crate::mlseg::{
    binary_classes, predict_stack, sample_scribbles, threshold_mask, train_on_stack, FeatureRecipe,
    PixelClassifier,
};
use crate::morph::{analyze_mask, GlobalContext, ObjectTable, Segmentation};
use crate::rng::derive_seed_named;
use crate::score::{
    match_objects, object_deltas, object_score_summary, operator_scores, score_parameters, CodecSummary,
    DeltaEntry, MatchingSummary, ObjectScoreEntry, OperatorScoreEntry, ParameterScore, Provenance,
    ToleranceReport, REPORT_SCHEMA_VERSION,
};
use crate::synth::{generate_raw_equivalents, SynthSpec};
use crate::tomo::{project_volume, reconstruct_stack, uniform_angles, write_sinogram_stack, SinogramGeometry};

/// Training classes, in index order.
pub const TRAIN_CLASSES: [&str; 2] = ["background", "object"];

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: ToleranceReport,
    pub report_path: PathBuf,
    pub artifacts: Vec<PathBuf>,
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// File-name form of a codec id (`jpeg:12` → `jpeg_12`).
pub fn codec_slug(id: CodecId) -> String {
    id.to_string().replace(':', "_")
}

struct Writer {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Writer {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.written.push(p.clone());
        p
    }

    fn stack(&mut self, name: &str, s: &ImageStack) -> Result<()> {
        let p = self.path(name);
        write_stack(s, p)
    }

    fn csv(&mut self, name: &str, t: &ObjectTable) -> Result<()> {
        let p = self.path(name);
        let f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        t.write_csv(std::io::BufWriter::new(f))
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }
}

/// Projection-space state of the tomography scenario.
struct Tomo<'a> {
    cfg: &'a TomoConfig,
    geometry: SinogramGeometry,
    out_size: usize,
}

impl Tomo<'_> {
    fn reconstruct(&self, projections: &ImageStack) -> Result<ImageStack> {
        let rec = reconstruct_stack(projections, &self.geometry, self.cfg.filter, Some(self.out_size))?;
        match self.cfg.crop {
            Some(c) => {
                let data = crop_plane(rec.data(), rec.dims(), c);
                ImageStack::new(data, Dims::new(c.width, c.height, rec.dims().depth), rec.bit_depth())
            }
            None => Ok(rec),
        }
    }
}

fn crop_plane<T: Copy>(data: &[T], dims: Dims, c: Crop) -> Vec<T> {
    let mut out = Vec::with_capacity(c.width * c.height * dims.depth);
    for z in 0..dims.depth {
        for y in c.y..c.y + c.height {
            let row = (z * dims.height + y) * dims.width;
            out.extend_from_slice(&data[row + c.x..row + c.x + c.width]);
        }
    }
    out
}

/// Runs the configured pipeline on a dedicated pool of `workers` threads (all
/// cores when `None`). Outputs do not depend on the worker count.
pub fn run_pipeline(config: &PipelineConfig, workers: Option<usize>) -> Result<PipelineOutput> {
    stage("validate", config.validate())?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| Error::InvalidSpec(format!("thread pool: {e}")).in_stage("validate"))?;
    pool.install(|| run_stages(config))
}

fn population_means(table: &ObjectTable) -> Vec<(String, f64)> {
    table
        .param_names()
        .iter()
        .map(|&p| {
            let v: Vec<f64> = (0..table.len()).filter_map(|i| table.value(i, p)).filter(|x| x.is_finite()).collect();
            let m = if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
            (format!("mean_{p}"), m)
        })
        .collect()
}

fn all_parameters(seg: &Segmentation) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = seg.global.named().into_iter().map(|(n, v)| (n.to_string(), v)).collect();
    out.extend(population_means(&seg.table));
    out
}

fn borrowed(v: &[(String, f64)]) -> Vec<(&str, f64)> {
    v.iter().map(|(n, x)| (n.as_str(), *x)).collect()
}

fn scott_width(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    match crate::score::mean_std(values) {
        Some((_, s)) if s > 0.0 => 3.49 * s / n.cbrt(),
        _ => 1.0,
    }
}

fn run_stages(config: &PipelineConfig) -> Result<PipelineOutput> {
    let seed = config.seed;
    let mut seeds = BTreeMap::new();
    for name in ["calibrate", "synth", "compress", "train"] {
        seeds.insert(name.to_string(), derive_seed_named(seed, name));
    }
    let out_dir = config.output_dir.clone();
    stage("output", fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e)))?;
    let mut w = Writer { dir: out_dir.clone(), written: Vec::new() };

    // input
    info!("input");
    let (image, mut truth): (ImageStack, Option<LabelMap>) = stage("input", (|| match &config.input {
        InputConfig::Phantom { phantom } => {
            seeds.insert("phantom".into(), phantom.seed);
            let (s, gt) = generate_phantom(phantom)?;
            Ok((s, Some(gt)))
        }
        InputConfig::Image { image, ground_truth } => {
            let s = read_stack(image)?;
            let gt = match ground_truth {
                Some(p) => {
                    let g = read_stack(p)?;
                    if g.dims() != s.dims() {
                        return Err(Error::DimMismatch("ground truth differs from input dims".into()));
                    }
                    Some(LabelMap::new(g.data().iter().map(|&v| u32::from(v)).collect(), g.dims())?)
                }
                None => None,
            };
            Ok((s, gt))
        }
    })())?;
    stage("input", w.stack("input.tif", &image))?;

    // noise model
    info!("calibrate");
    let model = stage("calibrate", (|| match &config.noise_model {
        ModelConfig::File { path } => NoiseModel::load(path),
        ModelConfig::Bench { gain, read_sigma, offset, saturation, levels, frames, sensor } => {
            let truth = NoiseModel::parametric(*gain, *offset, read_sigma * read_sigma, *saturation);
            truth.validate()?;
            let series =
                simulate_calibration_bench(&truth, Dims::plane(*sensor, *sensor), *levels, *frames, seeds["calibrate"])?;
            fit_noise_model(&series)
        }
    })())?;
    stage("calibrate", w.text("noise_model.json", &serde_json::to_string_pretty(&model)?))?;

    // tomography: raw data become projections
    let tomo = match &config.tomography {
        None => None,
        Some(t) => {
            info!("project");
            let dims = image.dims();
            let angles = uniform_angles(t.n_angles, t.span);
            let (proj, geometry) =
                stage("project", project_volume(&image.to_f64(), dims, &angles, t.layout, t.offset, t.max_adu))?;
            let p = w.path("projections.tif");
            stage("project", write_sinogram_stack(&proj, &geometry, &p))?;
            w.written.push(p.with_extension("json"));
            if let (Some(c), Some(gt)) = (t.crop, truth.as_mut()) {
                *gt = stage("project", LabelMap::new(crop_plane(&gt.data, gt.dims, c), Dims::new(c.width, c.height, dims.depth)))?;
            }
            Some((proj, Tomo { cfg: t, geometry, out_size: t.out_size.unwrap_or(dims.width) }))
        }
    };
    let raw = tomo.as_ref().map_or(&image, |(p, _)| p);
    let tomo_ctx = tomo.as_ref().map(|(_, t)| t);
    let to_domain = |s: &ImageStack| -> Result<ImageStack> {
        match tomo_ctx {
            Some(t) => t.reconstruct(s),
            None => Ok(s.clone()),
        }
    };

    // synthesis
    info!("synth");
    let spec = SynthSpec::new(config.synth.n_replicates, seeds["synth"]);
    let replicates = stage("synth", generate_raw_equivalents(raw, &model, &spec))?;

    // compression
    info!("compress");
    let mut codec_ids = config.codecs.clone();
    if let Some(r) = config.jpeg_target_ratio {
        let q = stage("compress", jpeg_search_quality(raw, r))?;
        codec_ids.push(CodecId::Jpeg(q));
    }
    let mut codec_summaries = Vec::new();
    let mut compressed = Vec::new();
    for &id in &codec_ids {
        let res = stage("compress", apply_codec(id, raw, &model, seeds["compress"]))?;
        codec_summaries.push(CodecSummary {
            codec: id,
            compression_ratio: res.compression_ratio,
            encoded_bytes: res.encoded_bytes,
        });
        let decoded = res.decoded_16();
        stage("compress", w.stack(&format!("codec_{}.tif", codec_slug(id)), &decoded))?;
        compressed.push((id, decoded));
    }

    // segmentation-domain images
    let domain_raw = stage("reconstruct", to_domain(raw))?;
    if tomo_ctx.is_some() {
        stage("reconstruct", w.stack("reconstruction_raw.tif", &domain_raw))?;
    }
    let domain_reps: Vec<ImageStack> = stage("reconstruct", replicates.iter().map(to_domain).collect())?;
    let domain_comps: Vec<(CodecId, ImageStack)> =
        stage("reconstruct", compressed.iter().map(|(id, s)| Ok((*id, to_domain(s)?))).collect())?;

    // classifier
    info!("train");
    let classifier: PixelClassifier<f32> = stage("train", (|| match &config.classifier {
        ClassifierConfig::File { path } => PixelClassifier::<f32>::load(path),
        ClassifierConfig::Train { scribbles_per_class, forest, recipe } => {
            let gt = truth.as_ref().ok_or_else(|| Error::InvalidSpec("training needs ground truth".into()))?;
            if gt.dims != domain_raw.dims() {
                return Err(Error::GeometryMismatch("ground truth and segmentation domain differ in dims".into()));
            }
            let dimensionality = if domain_raw.dims().is_3d() { 3 } else { 2 };
            let recipe = recipe.clone().unwrap_or_else(|| FeatureRecipe::for_dimensionality(dimensionality));
            let classes = TRAIN_CLASSES.iter().map(|s| s.to_string()).collect();
            let scribbles = sample_scribbles(&binary_classes(gt), classes, *scribbles_per_class, seeds["train"])?;
            train_on_stack(&domain_raw, &recipe, &scribbles, *forest, seeds["train"])
        }
    })())?;
    let class = stage(
        "train",
        classifier
            .class_index(&config.object_class)
            .ok_or_else(|| Error::InvalidSpec(format!("classifier has no class `{}`", config.object_class))),
    )?;
    if matches!(config.classifier, ClassifierConfig::Train { .. }) {
        let p = w.path("classifier.json");
        stage("train", classifier.save(p))?;
    }

    // predict + segment
    info!("segment");
    let seg = |s: &ImageStack| segment_image(&classifier, class, config.threshold, s);
    let seg_raw = stage("segment", seg(&domain_raw))?;
    let seg_reps: Vec<Segmentation> = stage("segment", domain_reps.iter().map(seg).collect())?;
    let seg_comps: Vec<(CodecId, Segmentation)> =
        stage("segment", domain_comps.iter().map(|(id, s)| Ok((*id, seg(s)?))).collect())?;
    stage("segment", w.csv("objects_raw.csv", &seg_raw.table))?;
    for (id, s) in &seg_comps {
        stage("segment", w.csv(&format!("objects_{}.csv", codec_slug(*id)), &s.table))?;
    }

    // scoring
    info!("score");
    let scores = stage("score", score_segmentations(&seg_raw, &seg_reps, &seg_comps, &config.matching))?;
    let mut op_entries = Vec::new();
    if let Some(ops) = &config.operators {
        info!("operator scores");
        let raw_domain = if tomo_ctx.is_some() { "projections" } else { "image" };
        op_entries = stage("score", operator_entries(raw_domain, raw, &replicates, &compressed, ops, tomo_ctx.is_some()))?;
        if tomo_ctx.is_some() {
            op_entries.extend(stage(
                "score",
                operator_entries("reconstruction", &domain_raw, &domain_reps, &domain_comps, ops, false),
            )?);
        }
    }

    let dimensionality = if domain_raw.dims().is_3d() { 3 } else { 2 };
    let mut notes = standard_notes(config.matching.max_distance);
    if tomo_ctx.is_some() {
        notes.push("noise synthesis and compression act on projections; segmentation on FBP reconstructions".into());
    }
    if raw.dims().is_3d() {
        notes.push("slices are synthesized independently; inter-slice noise correlation is not modelled".into());
    }
    let report = ToleranceReport {
        schema_version: REPORT_SCHEMA_VERSION,
        dimensionality,
        parameters: scores.parameters,
        object_scores: scores.object_scores,
        deltas: scores.deltas,
        matching: scores.matching,
        codecs: codec_summaries,
        operator_scores: op_entries,
        optics: Vec::new(),
        notes,
        provenance: Provenance {
            model_hash: model.hash(),
            classifier_hash: classifier.hash(),
            recipe_hash: crate::hash::json_hash(&classifier.recipe),
            codec_ids,
            seeds,
            n_replicates: config.synth.n_replicates,
        },
    };
    info!("report");
    let json = stage("report", report.to_json())?;
    let report_path = w.path("report.json");
    stage("report", fs::write(&report_path, json).map_err(|e| Error::io(&report_path, e)))?;
    Ok(PipelineOutput { report, report_path, artifacts: w.written })
}

/// Conventions recorded in every report.
pub fn standard_notes(max_distance: f64) -> Vec<String> {
    vec![
        "epsilon = (chi_raw - chi_c) / sigma_raw; tolerable when |epsilon| < 1".to_string(),
        "sigma_raw: sample standard deviation (n - 1) over raw-equivalent replicates".to_string(),
        "sigma_raw = 0: unchanged values score 0, changed values are indeterminate (epsilon null)".to_string(),
        "mean_<param>: mean of the per-object parameter over all objects of an image (0 without objects)".to_string(),
        format!("objects paired greedily by ascending centroid distance up to {max_distance} px"),
        "per-object sigma_raw from the matched counterparts in each replicate".to_string(),
    ]
}

/// Probability map, threshold and morphology for one image.
pub fn segment_image(
    classifier: &PixelClassifier<f32>,
    class: usize,
    threshold: f64,
    stack: &ImageStack,
) -> Result<Segmentation> {
    let proba = predict_stack(classifier, stack)?;
    let mask = threshold_mask(&proba, class, threshold)?;
    analyze_mask(&mask, stack.dims(), stack.voxel_size(), GlobalContext::Plain)
}

/// Report sections derived from segmentations.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationScores {
    pub parameters: Vec<ParameterScore>,
    pub object_scores: Vec<ObjectScoreEntry>,
    pub deltas: Vec<DeltaEntry>,
    pub matching: Vec<MatchingSummary>,
}

/// Global and mean-object parameter scores, per-object averaged scores, matching
/// summaries and Δ histograms for every codec.
pub fn score_segmentations(
    raw: &Segmentation,
    replicates: &[Segmentation],
    compressed: &[(CodecId, Segmentation)],
    matching_cfg: &MatchingConfig,
) -> Result<SegmentationScores> {
    if replicates.len() < 2 {
        return Err(Error::TooFewReplicates { got: replicates.len(), need: 2 });
    }
    let raw_params = all_parameters(raw);
    let rep_params: Vec<Vec<(String, f64)>> = replicates.iter().map(all_parameters).collect();
    let comp_params: Vec<(CodecId, Vec<(String, f64)>)> =
        compressed.iter().map(|(id, s)| (*id, all_parameters(s))).collect();
    let parameters = score_parameters(
        &borrowed(&raw_params),
        &rep_params.iter().map(|v| borrowed(v)).collect::<Vec<_>>(),
        &comp_params.iter().map(|(id, v)| (*id, borrowed(v))).collect::<Vec<_>>(),
    )?;

    let rep_tables: Vec<ObjectTable> = replicates.iter().map(|s| s.table.clone()).collect();
    let max_d = matching_cfg.max_distance;
    let mut object_scores = Vec::new();
    let mut deltas = Vec::new();
    let mut matching = Vec::new();
    for (id, seg) in compressed {
        for (param, avg) in object_score_summary(&raw.table, &rep_tables, &seg.table, max_d) {
            object_scores.push(ObjectScoreEntry {
                codec: *id,
                parameter: param.to_string(),
                mean_epsilon: avg.mean_epsilon,
                std_epsilon: avg.std_epsilon,
                n_objects: avg.n_objects,
                n_excluded: avg.n_excluded,
            });
        }
        let pairing = match_objects(&raw.table.centroids(), &seg.table.centroids(), max_d);
        matching.push(MatchingSummary {
            codec: *id,
            max_distance: max_d,
            pairs: pairing.pairs.len(),
            unpaired_raw: pairing.unpaired_raw.len(),
            unpaired_comp: pairing.unpaired_other.len(),
        });
        for &param in raw.table.param_names() {
            let values: Vec<f64> = pairing
                .pairs
                .iter()
                .filter_map(|&(i, j, _)| Some(raw.table.value(i, param)? - seg.table.value(j, param)?))
                .filter(|d| d.is_finite())
                .collect();
            if values.is_empty() {
                continue;
            }
            let width = matching_cfg.delta_bin_width.unwrap_or_else(|| scott_width(&values));
            for (parameter, histogram) in object_deltas(&raw.table, &seg.table, &pairing, &[param], width)? {
                deltas.push(DeltaEntry { codec: *id, parameter, histogram });
            }
        }
    }
    Ok(SegmentationScores { parameters, object_scores, deltas, matching })
}

/// Operator standard scores of every codec output in one domain.
pub fn operator_entries(
    domain: &str,
    raw: &ImageStack,
    replicates: &[ImageStack],
    compressed: &[(CodecId, ImageStack)],
    ops: &OperatorConfig,
    planar: bool,
) -> Result<Vec<OperatorScoreEntry>> {
    let mut out = Vec::new();
    for (id, c) in compressed {
        for s in operator_scores(raw, c, replicates, &ops.operators, &ops.sigmas, planar)? {
            out.push(OperatorScoreEntry {
                codec: *id,
                domain: domain.to_string(),
                operator: s.operator,
                sigma: s.sigma,
                mean_epsilon: s.mean_epsilon,
                std_epsilon: s.std_epsilon,
                n_pixels: s.n_pixels,
                n_excluded: s.n_excluded,
            });
        }
    }
    Ok(out)
}

/// Reads a report back, validating it.
pub fn load_report(path: impl AsRef<Path>) -> Result<ToleranceReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ToleranceReport::from_json(&text)
}
