use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use rawscore::calib::{fit_noise_model, simulate_calibration_bench, CalibrationSeries, NoiseMode, NoiseModel};
use rawscore::codec::{apply_codec, jpeg_target_ratio, CodecId, NoiseNorm, DEFAULT_Q};
use rawscore::imgio::{generate_phantom, read_stack, shepp_logan_image, write_stack, PhantomSpec};
use rawscore::mlseg::{
    binary_classes, predict_stack, sample_scribbles, train_on_stack, FeatureRecipe, ForestParams, Operator,
};
use rawscore::morph::{analyze_mask, GlobalContext, Segmentation};
use rawscore::pipeline::{
    operator_entries, run_pipeline, score_segmentations, segment_image, standard_notes, MatchingConfig,
    OperatorConfig, PipelineConfig, TRAIN_CLASSES,
};
use rawscore::score::{Provenance, ToleranceReport, REPORT_SCHEMA_VERSION};
use rawscore::synth::{generate_raw_equivalents, relative_error_map, SynthSpec};
use rawscore::tomo::{
    default_output_size, fbp_reconstruct, normalize_volume, project_volume, read_sinogram_stack, reconstruct_stack,
    uniform_angles, write_sinogram_stack, FbpFilter, Layout,
};
use rawscore::{BitDepth, Dims, Error, ImageStack, LabelMap, PixelClassifier32, Result};

/// Noise-calibrated tolerance scoring of lossy compression for pixel-classifier segmentation.
#[derive(Parser)]
#[command(name = "rawscore", version, about)]
struct Cli {
    /// Worker threads (default: all cores). Never changes any output.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Log verbosity on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a noise model from a calibration series or a simulated bench.
    Calibrate(CalibrateArgs),
    /// Generate a phantom image and its ground-truth labels.
    Phantom(PhantomArgs),
    /// Generate raw-equivalent replicates of an image.
    Synth(SynthArgs),
    /// Round-trip an image through a codec.
    Compress(CompressArgs),
    /// Train a pixel classifier from ground-truth scribbles.
    Train(TrainArgs),
    /// Write the object-class probability map of an image.
    Predict(PredictArgs),
    /// Segment an image (classifier or mask) and measure objects.
    Segment(SegmentArgs),
    /// Score compressed images against raw-equivalent replicates.
    Score(ScoreArgs),
    /// Forward projection and filtered back projection.
    Tomo(TomoArgs),
    /// Validate and summarize a tolerance report.
    Report(ReportArgs),
    /// Run the full pipeline from a config file.
    RunPipeline(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Parametric,
    Empirical,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Calibration series directory (series.json + level TIFFs).
    #[arg(long, conflicts_with = "simulate")]
    series: Option<PathBuf>,
    /// Simulate the bench instead of reading a series.
    #[arg(long)]
    simulate: bool,
    #[arg(long, default_value_t = 2.0)]
    gain: f64,
    #[arg(long, default_value_t = 3.0)]
    read_sigma: f64,
    #[arg(long, default_value_t = 100.0)]
    offset: f64,
    #[arg(long, default_value_t = 65535.0)]
    saturation: f64,
    #[arg(long, default_value_t = 20)]
    levels: usize,
    #[arg(long, default_value_t = 1000)]
    frames: usize,
    /// Simulated sensor side in pixels.
    #[arg(long, default_value_t = 32)]
    sensor: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the simulated series to this directory.
    #[arg(long)]
    save_series: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "parametric")]
    mode: ModeArg,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct PhantomArgs {
    /// Phantom description (JSON).
    #[arg(long)]
    spec: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Ground-truth label image (16-bit TIFF).
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(short = 'n', long, default_value_t = 10)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(short, long)]
    input: PathBuf,
    /// identity | bit8 | jpeg:<quality> | jpeg (with --target-ratio) | noisenorm
    #[arg(long)]
    codec: String,
    /// JPEG quality search target (input bytes / encoded bytes).
    #[arg(long)]
    target_ratio: Option<f64>,
    /// Noise model, required by noisenorm.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Decoded image (8-bit for bit8, 16-bit otherwise).
    #[arg(short, long)]
    output: PathBuf,
    /// Encoded noisenorm container.
    #[arg(long)]
    encoded: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training image; omit with --phantom.
    #[arg(short, long, requires = "labels", conflicts_with = "phantom")]
    input: Option<PathBuf>,
    /// Ground-truth labels (nonzero = object).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Train on a generated phantom.
    #[arg(long)]
    phantom: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    scribbles: usize,
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long, default_value_t = 2)]
    min_leaf: usize,
    #[arg(long)]
    max_depth: Option<usize>,
    /// Feature scales; the default set when omitted.
    #[arg(long, value_delimiter = ',')]
    sigmas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    classifier: PathBuf,
    #[arg(short, long)]
    input: PathBuf,
    #[arg(long, default_value = "object")]
    class: String,
    /// Probability map scaled to 0..65535.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(short, long, required_unless_present = "mask")]
    input: Option<PathBuf>,
    #[arg(long, requires = "input")]
    classifier: Option<PathBuf>,
    /// Binary mask (nonzero = object) instead of a classifier.
    #[arg(long, conflicts_with = "classifier")]
    mask: Option<PathBuf>,
    #[arg(long, default_value = "object")]
    class: String,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Per-object table.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Global parameters (JSON).
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    raw: PathBuf,
    /// Raw-equivalent replicate (repeat).
    #[arg(long = "replicate", num_args = 1..)]
    replicates: Vec<PathBuf>,
    /// Compressed image as CODEC=PATH (repeat).
    #[arg(long = "compressed", num_args = 1.., required = true)]
    compressed: Vec<String>,
    #[arg(long)]
    classifier: PathBuf,
    /// Noise model, recorded in provenance.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "object")]
    class: String,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 5.0)]
    max_distance: f64,
    /// Also score image operators at these scales.
    #[arg(long, value_delimiter = ',')]
    operator_sigmas: Option<Vec<f64>>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Demo {
    SheppLogan,
}

#[derive(Clone, Copy, ValueEnum)]
enum FilterArg {
    Ramp,
    Hann,
}

impl From<FilterArg> for FbpFilter {
    fn from(f: FilterArg) -> Self {
        match f {
            FilterArg::Ramp => FbpFilter::Ramp,
            FilterArg::Hann => FbpFilter::Hann,
        }
    }
}

#[derive(Args)]
struct TomoArgs {
    /// Project and reconstruct a built-in phantom.
    #[arg(long, value_enum, conflicts_with_all = ["input", "sinogram"])]
    demo: Option<Demo>,
    /// Image or volume to project (z-slices are projected independently).
    #[arg(short, long, conflicts_with = "sinogram")]
    input: Option<PathBuf>,
    /// Projection stack with its JSON sidecar, to reconstruct.
    #[arg(long)]
    sinogram: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, default_value_t = 180)]
    angles: usize,
    #[arg(long, default_value_t = 180.0)]
    span: f64,
    #[arg(long, value_enum, default_value = "hann")]
    filter: FilterArg,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(short, long)]
    input: PathBuf,
    /// Write parameter verdicts as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, required_unless_present = "demo")]
    config: Option<PathBuf>,
    /// Run the bundled demo config.
    #[arg(long, conflicts_with = "config")]
    demo: bool,
    /// Override the configured output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).target(env_logger::Target::Stderr).init();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon_pool(n) {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(cli.command, cli.workers) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code().clamp(1, 255) as u8)
        }
    }
}

fn rayon_pool(n: usize) -> std::result::Result<(), rayon::ThreadPoolBuildError> {
    rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()
}

fn dispatch(cmd: Command, workers: Option<usize>) -> Result<()> {
    match cmd {
        Command::Calibrate(a) => calibrate(a),
        Command::Phantom(a) => phantom(a),
        Command::Synth(a) => synth(a),
        Command::Compress(a) => compress(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Segment(a) => segment(a),
        Command::Score(a) => score(a),
        Command::Tomo(a) => tomo(a),
        Command::Report(a) => report(a),
        Command::RunPipeline(a) => run(a, workers),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::IoFailure { path: path.to_path_buf(), source: e })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::IoFailure { path: path.to_path_buf(), source: e })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::IoFailure { path: path.to_path_buf(), source: e })?;
    Ok(serde_json::from_str(&text)?)
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    let series = match &a.series {
        Some(dir) => CalibrationSeries::read_dir(dir)?,
        None if a.simulate => {
            let truth = NoiseModel::parametric(a.gain, a.offset, a.read_sigma * a.read_sigma, a.saturation);
            truth.validate()?;
            info!("simulating {} levels x {} frames", a.levels, a.frames);
            let s = simulate_calibration_bench(&truth, Dims::plane(a.sensor, a.sensor), a.levels, a.frames, a.seed)?;
            if let Some(dir) = &a.save_series {
                s.write_dir(dir)?;
            }
            s
        }
        None => return Err(Error::InvalidSpec("give --series DIR or --simulate".into())),
    };
    let mode = match a.mode {
        ModeArg::Parametric => NoiseMode::Parametric,
        ModeArg::Empirical => NoiseMode::Empirical,
    };
    let model = fit_noise_model(&series)?.with_mode(mode);
    model.save(&a.output)?;
    println!(
        "K = {:.6} ADU/e-  sigma_read = {:.4} ADU  offset = {:.3} ADU  saturation = {:.1} ADU",
        model.gain,
        model.read_variance.sqrt(),
        model.offset,
        model.saturation
    );
    Ok(())
}

fn labels_to_stack(gt: &LabelMap) -> Result<ImageStack> {
    let data = gt
        .data
        .iter()
        .map(|&l| u16::try_from(l).map_err(|_| Error::InvalidSpec(format!("label {l} exceeds 16 bits"))))
        .collect::<Result<Vec<u16>>>()?;
    ImageStack::new(data, gt.dims, BitDepth::Sixteen)
}

fn stack_to_labels(s: &ImageStack) -> Result<LabelMap> {
    LabelMap::new(s.data().iter().map(|&v| u32::from(v)).collect(), s.dims())
}

fn phantom(a: PhantomArgs) -> Result<()> {
    let spec: PhantomSpec = read_json(&a.spec)?;
    let (image, gt) = generate_phantom(&spec)?;
    write_stack(&image, &a.output)?;
    if let Some(p) = &a.labels {
        write_stack(&labels_to_stack(&gt)?, p)?;
    }
    println!("{} objects, {:?}", gt.label_count(), image.dims());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let raw = read_stack(&a.input)?;
    let model = NoiseModel::load(&a.model)?;
    let reps = generate_raw_equivalents(&raw, &model, &SynthSpec::new(a.replicates, a.seed))?;
    create_dir(&a.out_dir)?;
    for (i, r) in reps.iter().enumerate() {
        write_stack(r, a.out_dir.join(format!("replicate_{i:03}.tif")))?;
    }
    let re = relative_error_map(&reps)?;
    println!("{} replicates, mean relative error {:.6}", reps.len(), re.mean_relative_error());
    Ok(())
}

fn compress(a: CompressArgs) -> Result<()> {
    let input = read_stack(&a.input)?;
    let model = match &a.model {
        Some(p) => Some(NoiseModel::load(p)?),
        None => None,
    };
    let result = if a.codec == "jpeg" {
        let target = a.target_ratio.ok_or_else(|| Error::InvalidSpec("codec `jpeg` needs --target-ratio".into()))?;
        jpeg_target_ratio(&input, target)?
    } else {
        let id: CodecId = a.codec.parse()?;
        let model = match (id, &model) {
            (CodecId::Noisenorm, None) => return Err(Error::InvalidSpec("noisenorm needs --model".into())),
            (_, Some(m)) => m.clone(),
            (_, None) => NoiseModel::noiseless(f64::from(input.bit_depth().max_value())),
        };
        if let (CodecId::Noisenorm, Some(path)) = (id, &a.encoded) {
            let (bytes, _) = NoiseNorm::new(&model, DEFAULT_Q, a.seed)?.encode(&input)?;
            fs::write(path, bytes).map_err(|e| Error::IoFailure { path: path.clone(), source: e })?;
        }
        apply_codec(id, &input, &model, a.seed)?
    };
    write_stack(&result.decoded, &a.output)?;
    println!(
        "codec {}  ratio {:.3}:1  encoded {} bytes  output {}-bit",
        result.codec_id,
        result.compression_ratio,
        result.encoded_bytes,
        result.decoded.bit_depth().bits()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let (image, gt) = match (&a.phantom, &a.input, &a.labels) {
        (Some(spec), _, _) => generate_phantom(&read_json::<PhantomSpec>(spec)?)?,
        (None, Some(img), Some(labels)) => {
            let image = read_stack(img)?;
            let gt = stack_to_labels(&read_stack(labels)?)?;
            if gt.dims != image.dims() {
                return Err(Error::DimMismatch("labels differ from image dims".into()));
            }
            (image, gt)
        }
        _ => return Err(Error::InvalidSpec("give --phantom SPEC or --input IMAGE --labels LABELS".into())),
    };
    let dimensionality = if image.dims().is_3d() { 3 } else { 2 };
    let mut recipe = FeatureRecipe::for_dimensionality(dimensionality);
    if let Some(s) = a.sigmas {
        recipe.sigmas = s;
    }
    let classes = TRAIN_CLASSES.iter().map(|s| s.to_string()).collect();
    let scribbles = sample_scribbles(&binary_classes(&gt), classes, a.scribbles, a.seed)?;
    let params = ForestParams { n_trees: a.trees, min_leaf: a.min_leaf, max_depth: a.max_depth };
    let clf = train_on_stack(&image, &recipe, &scribbles, params, a.seed)?;
    clf.save(&a.output)?;
    println!("{} trees on {} scribbles, {} features", clf.forest.len(), scribbles.labels.len(), clf.n_features);
    Ok(())
}

fn class_of(clf: &PixelClassifier32, name: &str) -> Result<usize> {
    clf.class_index(name).ok_or_else(|| Error::InvalidSpec(format!("classifier has no class `{name}`")))
}

fn predict(a: PredictArgs) -> Result<()> {
    let clf = PixelClassifier32::load(&a.classifier)?;
    let class = class_of(&clf, &a.class)?;
    let image = read_stack(&a.input)?;
    let proba = predict_stack(&clf, &image)?;
    let data = proba.class_plane(class).iter().map(|&p| (p * 65535.0).round() as u16).collect();
    write_stack(&image.with_data(data)?, &a.output)?;
    Ok(())
}

fn segment(a: SegmentArgs) -> Result<()> {
    let seg: Segmentation = match (&a.mask, &a.classifier, &a.input) {
        (Some(mask), _, _) => {
            let m = read_stack(mask)?;
            let bits: Vec<bool> = m.data().iter().map(|&v| v != 0).collect();
            analyze_mask(&bits, m.dims(), m.voxel_size(), GlobalContext::Plain)?
        }
        (None, Some(clf), Some(input)) => {
            let clf = PixelClassifier32::load(clf)?;
            let class = class_of(&clf, &a.class)?;
            segment_image(&clf, class, a.threshold, &read_stack(input)?)?
        }
        _ => return Err(Error::InvalidSpec("give --mask MASK or --input IMAGE --classifier CLF".into())),
    };
    if let Some(p) = &a.csv {
        let f = fs::File::create(p).map_err(|e| Error::IoFailure { path: p.clone(), source: e })?;
        seg.table.write_csv(std::io::BufWriter::new(f))?;
    }
    let global = serde_json::to_string_pretty(&seg.global)?;
    if let Some(p) = &a.json {
        write_text(p, &global)?;
    }
    for (name, v) in seg.global.named() {
        println!("{name} = {v}");
    }
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    if a.replicates.len() < 2 {
        return Err(Error::TooFewReplicates { got: a.replicates.len(), need: 2 });
    }
    let compressed_paths: Vec<(CodecId, PathBuf)> = a
        .compressed
        .iter()
        .map(|s| {
            let (id, path) =
                s.split_once('=').ok_or_else(|| Error::InvalidSpec(format!("expected CODEC=PATH, got `{s}`")))?;
            Ok((id.parse()?, PathBuf::from(path)))
        })
        .collect::<Result<_>>()?;
    let clf = PixelClassifier32::load(&a.classifier)?;
    let class = class_of(&clf, &a.class)?;
    let model = NoiseModel::load(&a.model)?;
    let to16 = |s: ImageStack| -> Result<ImageStack> {
        match s.bit_depth() {
            BitDepth::Eight => rawscore::codec::upsample_8_to_16(&s),
            BitDepth::Sixteen => Ok(s),
        }
    };
    let raw = read_stack(&a.raw)?;
    let reps: Vec<ImageStack> = a.replicates.iter().map(read_stack).collect::<Result<_>>()?;
    let comps: Vec<(CodecId, ImageStack)> =
        compressed_paths.iter().map(|(id, p)| Ok((*id, to16(read_stack(p)?)?))).collect::<Result<_>>()?;
    let seg = |s: &ImageStack| segment_image(&clf, class, a.threshold, s);
    let seg_raw = seg(&raw)?;
    let seg_reps: Vec<Segmentation> = reps.iter().map(seg).collect::<Result<_>>()?;
    let seg_comps: Vec<(CodecId, Segmentation)> =
        comps.iter().map(|(id, s)| Ok((*id, seg(s)?))).collect::<Result<_>>()?;
    let matching = MatchingConfig { max_distance: a.max_distance, delta_bin_width: None };
    let scores = score_segmentations(&seg_raw, &seg_reps, &seg_comps, &matching)?;
    let operator_scores = match &a.operator_sigmas {
        Some(sigmas) => {
            let ops = OperatorConfig { operators: Operator::FOUR.to_vec(), sigmas: sigmas.clone() };
            operator_entries("image", &raw, &reps, &comps, &ops, false)?
        }
        None => Vec::new(),
    };
    let report = ToleranceReport {
        schema_version: REPORT_SCHEMA_VERSION,
        dimensionality: if raw.dims().is_3d() { 3 } else { 2 },
        parameters: scores.parameters,
        object_scores: scores.object_scores,
        deltas: scores.deltas,
        matching: scores.matching,
        codecs: Vec::new(),
        operator_scores,
        optics: Vec::new(),
        notes: standard_notes(a.max_distance),
        provenance: Provenance {
            model_hash: model.hash(),
            classifier_hash: clf.hash(),
            recipe_hash: rawscore::hash::json_hash(&clf.recipe),
            codec_ids: comps.iter().map(|c| c.0).collect(),
            seeds: Default::default(),
            n_replicates: reps.len(),
        },
    };
    write_text(&a.output, &report.to_json()?)?;
    print_report(&report);
    Ok(())
}

fn tomo(a: TomoArgs) -> Result<()> {
    create_dir(&a.out_dir)?;
    let filter = FbpFilter::from(a.filter);
    let angles = uniform_angles(a.angles, a.span);
    let (stack, geometry) = match (&a.demo, &a.input, &a.sinogram) {
        (Some(Demo::SheppLogan), _, _) => {
            let n = a.size;
            let img = shepp_logan_image(n);
            write_stack(&ImageStack::new(normalize_volume(&img), Dims::plane(n, n), BitDepth::Sixteen)?, a.out_dir.join("phantom.tif"))?;
            project_volume(&img, Dims::plane(n, n), &angles, Layout::PerAngle, 0, 60000)?
        }
        (None, Some(input), _) => {
            let img = read_stack(input)?;
            project_volume(&img.to_f64(), img.dims(), &angles, Layout::PerAngle, 0, 60000)?
        }
        (None, None, Some(sino)) => read_sinogram_stack(sino)?,
        _ => return Err(Error::InvalidSpec("give --demo, --input or --sinogram".into())),
    };
    if a.sinogram.is_none() {
        write_sinogram_stack(&stack, &geometry, a.out_dir.join("sinogram.tif"))?;
    }
    let rec = reconstruct_stack(&stack, &geometry, filter, None)?;
    write_stack(&rec, a.out_dir.join("reconstruction.tif"))?;
    if a.demo.is_some() {
        let n = a.size;
        let truth = shepp_logan_image(n);
        let direct = fbp_reconstruct(&geometry.sinogram(&stack, 0)?, filter, default_output_size(stack.dims().width).min(n))?;
        if direct.len() == truth.len() {
            println!("NRMSE inside circle: {:.4}", rawscore::tomo::nrmse_in_circle(&direct, &truth, n));
        }
    }
    println!("{} angles, {} detector bins -> {:?}", geometry.angles.len(), stack.dims().width, rec.dims());
    Ok(())
}

fn print_report(r: &ToleranceReport) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{:<24} {:>12} {:>12} {:>12} {:>12}  verdict", "parameter", "codec", "chi_raw", "sigma_raw", "epsilon");
    for p in &r.parameters {
        for c in &p.codecs {
            let eps = c.epsilon.map_or("null".to_string(), |e| format!("{e:.4}"));
            let _ = writeln!(
                out,
                "{:<24} {:>12} {:>12.4} {:>12.4} {:>12}  {:?}",
                p.name,
                c.codec.to_string(),
                p.chi_raw,
                p.sigma_raw,
                eps,
                c.verdict
            );
        }
    }
}

fn report(a: ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&a.input).map_err(|e| Error::IoFailure { path: a.input.clone(), source: e })?;
    let r = ToleranceReport::from_json(&text)?;
    print_report(&r);
    if let Some(p) = &a.csv {
        let mut s = String::from("parameter,codec,chi_raw,sigma_raw,chi_c,epsilon,verdict\n");
        for p in &r.parameters {
            for c in &p.codecs {
                let eps = c.epsilon.map_or(String::new(), |e| e.to_string());
                let verdict = serde_json::to_value(c.verdict)?;
                s += &format!(
                    "{},{},{},{},{},{},{}\n",
                    p.name,
                    c.codec,
                    p.chi_raw,
                    p.sigma_raw,
                    c.chi_c,
                    eps,
                    verdict.as_str().unwrap_or_default()
                );
            }
        }
        write_text(p, &s)?;
    }
    Ok(())
}

fn run(a: RunArgs, workers: Option<usize>) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::demo("demo_out"),
    };
    if let Some(d) = a.out_dir {
        cfg.output_dir = d;
    }
    let out = run_pipeline(&cfg, workers)?;
    print_report(&out.report);
    println!("report: {}", out.report_path.display());
    Ok(())
}
