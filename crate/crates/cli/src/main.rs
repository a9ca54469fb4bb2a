mod files;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use serde::Serialize;

use nsm_core::config::{ConfigLoader, PipelineConfig};
use nsm_core::eval::{roc, run_report};
use nsm_core::forest::{rf_load, rf_save, rf_train_with_oob, ForestModel, TrainingSet};
use nsm_core::ground::filter_ground;
use nsm_core::io::{load_cloud, load_trajectory, save_cloud, save_trajectory, CloudFormat};
use nsm_core::map::{load_map, save_map, MapEntry, SegmentMap};
use nsm_core::matching::match_segments;
use nsm_core::pipeline::{describe_segments, labeled_pairs, localize};
use nsm_core::segmentation::euclidean_cluster;
use nsm_core::synthgen::{derive_source, generate_scene, Perturbation, SceneLabels, SceneSpec};
use nsm_core::{Error, ErrorClass, PointCloud, Result, RigidTransform};

use files::*;

#[derive(Parser)]
#[command(
    name = "nsm",
    version,
    about = "Segment-based LIDAR localisation in natural environments"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML configuration file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the forest, RANSAC and scene generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    /// Override any configuration value, e.g. `--set registration.epsilon=0.5`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic scene and, optionally, a perturbed source scan of it.
    GenScene(GenScene),
    /// Split a cloud into ground and non-ground points.
    FilterGround(FilterGround),
    /// Cluster a non-ground cloud into segments.
    Segment(SegmentCmd),
    /// Describe a segment directory and store it as a map.
    Describe(Describe),
    /// Ground filter, segment and describe a cloud into a map.
    BuildMap(BuildMap),
    /// Labelled classifier rows from a target cloud and a source cloud with known pose.
    MakePairs(MakePairs),
    /// Train the match classifier.
    TrainRf(TrainRf),
    /// Score candidate matches between source segments and a map.
    Match(MatchCmd),
    /// Localise a source cloud in a map.
    Localize(Localize),
    /// Pose errors against ground truth, and classifier ROC.
    Eval(Eval),
}

#[derive(Args)]
struct GenScene {
    /// Scene description (JSON); the default forest scene when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Also write a source scan of the scene here.
    #[arg(long, requires = "gt")]
    source: Option<PathBuf>,
    /// Trajectory file receiving the source → scene transform.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    yaw_deg: f64,
    /// `x,y,z` in metres.
    #[arg(long, value_parser = parse_xyz, default_value = "0,0,0", allow_hyphen_values = true)]
    translation: [f64; 3],
    /// Perturbation settings (JSON).
    #[arg(long, conflicts_with = "clean")]
    perturbation: Option<PathBuf>,
    /// Copy the scene points without perturbation.
    #[arg(long)]
    clean: bool,
}

#[derive(Args)]
struct FilterGround {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    ground: Option<PathBuf>,
    #[arg(long)]
    pmf_cell_size: Option<f64>,
    #[arg(long)]
    pmf_max_window: Option<i64>,
    #[arg(long)]
    pmf_slope: Option<f64>,
    #[arg(long)]
    pmf_initial_height: Option<f64>,
    #[arg(long)]
    pmf_max_height: Option<f64>,
}

#[derive(Args)]
struct SegmentCmd {
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    min_points: Option<i64>,
    #[arg(long)]
    max_points: Option<i64>,
    #[arg(long)]
    max_dist: Option<f64>,
}

#[derive(Args)]
struct Describe {
    #[arg(long)]
    segments: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildMap {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MakePairs {
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    source: PathBuf,
    /// Trajectory holding the source → target transform, keyed by the
    /// source file stem.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    append: bool,
}

#[derive(Args)]
struct TrainRf {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trees: Option<i64>,
    #[arg(long)]
    depth: Option<i64>,
    /// Held-out pairs used to pick the acceptance threshold.
    #[arg(long)]
    validation: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1, requires = "validation")]
    fpr: f64,
}

#[derive(Args)]
struct MatchCmd {
    #[arg(long)]
    map: PathBuf,
    /// Segment directory.
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    k: Option<i64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Localize {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Eval {
    /// A result file or a directory of them.
    #[arg(long)]
    results: Option<PathBuf>,
    #[arg(long, requires = "results")]
    gt: Option<PathBuf>,
    /// Labelled pairs to score for the ROC curve.
    #[arg(long, requires = "model")]
    pairs: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, requires = "pairs")]
    roc: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    fpr: f64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.global.log_level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Io => 2,
        ErrorClass::Validation => 3,
        ErrorClass::Pipeline => 4,
    }
}

fn run(cli: Cli) -> Result<u8> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidParams(format!("threads: {e}")))?;
    }
    let cfg = resolve_config(&cli.global, &command_overrides(&cli.command))?;
    match cli.command {
        Command::GenScene(a) => gen_scene(a, cli.global.seed),
        Command::FilterGround(a) => cmd_filter_ground(a, &cfg),
        Command::Segment(a) => cmd_segment(a, &cfg),
        Command::Describe(a) => cmd_describe(a, &cfg),
        Command::BuildMap(a) => cmd_build_map(a, &cfg),
        Command::MakePairs(a) => cmd_make_pairs(a, &cfg),
        Command::TrainRf(a) => cmd_train_rf(a, &cfg),
        Command::Match(a) => cmd_match(a, &cfg),
        Command::Localize(a) => cmd_localize(a, &cfg),
        Command::Eval(a) => cmd_eval(a),
    }
    .inspect(|_| log::info!("done"))
}

fn command_overrides(c: &Command) -> Vec<(&'static str, toml::Value)> {
    use toml::Value::{Float, Integer};
    let mut v = Vec::new();
    let mut put = |k, x: Option<toml::Value>| {
        if let Some(x) = x {
            v.push((k, x));
        }
    };
    match c {
        Command::FilterGround(a) => {
            put("pmf.cell_size", a.pmf_cell_size.map(Float));
            put("pmf.max_window", a.pmf_max_window.map(Integer));
            put("pmf.slope", a.pmf_slope.map(Float));
            put("pmf.initial_height_thresh", a.pmf_initial_height.map(Float));
            put("pmf.max_height_thresh", a.pmf_max_height.map(Float));
        }
        Command::Segment(a) => {
            put("segmentation.min_points", a.min_points.map(Integer));
            put("segmentation.max_points", a.max_points.map(Integer));
            put("segmentation.max_distance", a.max_dist.map(Float));
        }
        Command::TrainRf(a) => {
            put("rf.n_trees", a.trees.map(Integer));
            put("rf.max_depth", a.depth.map(Integer));
        }
        Command::Match(a) => {
            put("matching.k_neighbours", a.k.map(Integer));
            put("matching.rf_threshold", a.threshold.map(Float));
        }
        Command::Localize(a) => put("matching.rf_threshold", a.threshold.map(Float)),
        _ => {}
    }
    v
}

fn resolve_config(g: &Global, flags: &[(&str, toml::Value)]) -> Result<PipelineConfig> {
    let mut loader = ConfigLoader::new();
    if let Some(path) = &g.config {
        loader.merge_file(path)?;
    }
    if let Some(seed) = g.seed {
        let seed =
            i64::try_from(seed).map_err(|_| Error::InvalidParams("seed must fit in i64".into()))?;
        loader.set("rf.seed", toml::Value::Integer(seed))?;
        loader.set("registration.seed", toml::Value::Integer(seed))?;
    }
    for item in &g.overrides {
        let (key, value) = item.split_once('=').ok_or_else(|| {
            Error::InvalidParams(format!("--set {item:?}: expected SECTION.KEY=VALUE"))
        })?;
        loader.set(key.trim(), parse_value(value.trim()))?;
    }
    for (key, value) in flags {
        loader.set(key, value.clone())?;
    }
    let resolved = loader.resolve()?;
    log::info!("resolved config: {}", resolved.to_json());
    Ok(resolved.config)
}

/// A TOML literal, or a bare string when it does not parse as one.
fn parse_value(text: &str) -> toml::Value {
    format!("v = {text}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

fn parse_xyz(text: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|_| "expected x,y,z".to_string())
}

fn read_cloud(path: &Path) -> Result<PointCloud> {
    let (cloud, stats) = load_cloud(path, CloudFormat::from_path(path)?)?;
    if stats.dropped_non_finite > 0 {
        log::warn!(
            "{}: dropped {} non-finite points",
            path.display(),
            stats.dropped_non_finite
        );
    }
    Ok(cloud)
}

fn write_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    save_cloud(cloud, path, CloudFormat::from_path(path)?)
}

fn gen_scene(a: GenScene, seed: Option<u64>) -> Result<u8> {
    let mut spec = match &a.spec {
        Some(p) => read_json::<SceneSpec>(p)?,
        None => SceneSpec::forest(0),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let scene = generate_scene(&spec)?;
    write_cloud(
        &scene.cloud.clone().with_frame_id(frame_id_of(&a.out)),
        &a.out,
    )?;
    if let Some(p) = &a.labels {
        write_json(
            p,
            &SceneLabels {
                labels: scene.labels.clone(),
                objects: scene.objects.clone(),
            },
        )?;
    }
    log::info!(
        "{} points, {} objects",
        scene.cloud.len(),
        scene.objects.len()
    );
    if let (Some(src_path), Some(gt_path)) = (&a.source, &a.gt) {
        let pert = if a.clean {
            Perturbation::none()
        } else if let Some(p) = &a.perturbation {
            read_json(p)?
        } else {
            Perturbation::default()
        };
        let t = RigidTransform::from_yaw(a.yaw_deg.to_radians(), Vector3::from(a.translation));
        let src = derive_source(&scene, &t, &pert, spec.seed.wrapping_add(1));
        write_cloud(&src.cloud, src_path)?;
        save_trajectory(gt_path, &[(frame_id_of(src_path), src.gt)])?;
        log::info!("source scan: {} points", src.cloud.len());
    }
    Ok(0)
}

fn cmd_filter_ground(a: FilterGround, cfg: &PipelineConfig) -> Result<u8> {
    let cloud = read_cloud(&a.input)?;
    let labels = filter_ground(&cloud, &cfg.pmf)?;
    let (ground, rest) = labels.split(&cloud);
    log::info!("{} ground, {} non-ground", ground.len(), rest.len());
    write_cloud(&rest, &a.out)?;
    if let Some(p) = &a.ground {
        write_cloud(&ground, p)?;
    }
    Ok(0)
}

fn cmd_segment(a: SegmentCmd, cfg: &PipelineConfig) -> Result<u8> {
    let cloud = read_cloud(&a.input)?;
    let segments = euclidean_cluster(&cloud, &cfg.segmentation)?;
    log::info!("{} segments", segments.len());
    save_segments(&a.out, &cloud.frame_id, &segments)?;
    Ok(0)
}

fn map_from_segments(dir: &Path, cfg: &PipelineConfig) -> Result<SegmentMap> {
    let (frame_id, segments) = load_segments(dir)?;
    let mut map = SegmentMap::new(cfg.map_fingerprint());
    map.frame_id = frame_id;
    for d in describe_segments(&segments, &cfg.gestalt) {
        map.push(MapEntry {
            segment_id: d.id,
            keypose: d.keypose,
            descriptor: d.descriptor,
            points: None,
        })?;
    }
    Ok(map)
}

fn cmd_describe(a: Describe, cfg: &PipelineConfig) -> Result<u8> {
    let map = map_from_segments(&a.segments, cfg)?;
    log::info!("{} described segments", map.len());
    save_map(&map, &a.out)?;
    Ok(0)
}

fn cmd_build_map(a: BuildMap, cfg: &PipelineConfig) -> Result<u8> {
    let cloud = read_cloud(&a.input)?;
    let map = nsm_core::pipeline::build_map(&cloud, cfg)?;
    log::info!(
        "map of {} segments, fingerprint {}",
        map.len(),
        map.fingerprint
    );
    save_map(&map, &a.out)?;
    Ok(0)
}

fn ground_truth_for(path: &Path, frame_id: &str) -> Result<RigidTransform> {
    let poses = load_trajectory(path)?;
    match poses.iter().find(|(id, _)| id == frame_id) {
        Some((_, t)) => Ok(*t),
        None if poses.len() == 1 => Ok(poses[0].1),
        None => Err(Error::InvalidParams(format!(
            "{}: no pose for frame {frame_id:?}",
            path.display()
        ))),
    }
}

fn cmd_make_pairs(a: MakePairs, cfg: &PipelineConfig) -> Result<u8> {
    let target = read_cloud(&a.target)?;
    let source = read_cloud(&a.source)?;
    let gt = ground_truth_for(&a.gt, &source.frame_id)?;
    let set = labeled_pairs(&target, &source, &gt, cfg)?;
    log::info!("{} pairs, {} positive", set.len(), set.positives());
    save_pairs(&a.out, &set, a.append)?;
    Ok(0)
}

#[derive(Serialize)]
struct TrainSummary {
    rows: usize,
    positives: usize,
    trees: usize,
    oob_accuracy: Option<f64>,
    /// Threshold at the requested false-positive rate on the validation pairs.
    threshold: Option<f64>,
    validation_auc: Option<f64>,
}

fn scored(model: &ForestModel, set: &TrainingSet) -> Result<Vec<(f64, bool)>> {
    (0..set.len())
        .map(|i| Ok((model.score(set.row(i))?, set.label(i))))
        .collect()
}

fn cmd_train_rf(a: TrainRf, cfg: &PipelineConfig) -> Result<u8> {
    let set = load_pairs(&a.pairs)?;
    let (model, oob) = rf_train_with_oob(&set, &cfg.rf)?;
    rf_save(&model, &a.out)?;
    let mut summary = TrainSummary {
        rows: set.len(),
        positives: set.positives(),
        trees: model.trees().len(),
        oob_accuracy: oob,
        threshold: None,
        validation_auc: None,
    };
    if let Some(p) = &a.validation {
        let curve = roc(&scored(&model, &load_pairs(p)?)?)?;
        let op = curve.operating_point(a.fpr);
        log::info!(
            "validation AUC {:.3}; FPR {:.3} at threshold {}",
            curve.auc,
            op.fpr,
            op.threshold
        );
        summary.threshold = Some(op.threshold);
        summary.validation_auc = Some(curve.auc);
    }
    println!(
        "{}",
        serde_json::to_string(&summary).expect("summary serialises")
    );
    Ok(0)
}

fn cmd_match(a: MatchCmd, cfg: &PipelineConfig) -> Result<u8> {
    let map = load_map(&a.map, Some(&cfg.map_fingerprint()))?;
    let model = rf_load(&a.model)?;
    let (_, segments) = load_segments(&a.source)?;
    let source = describe_segments(&segments, &cfg.gestalt);
    let candidates = match_segments(&source, &map, &model, &cfg.matching)?;
    log::info!(
        "{} candidates, {} accepted",
        candidates.len(),
        candidates.iter().filter(|c| c.accepted).count()
    );
    write_json(&a.out, &candidates)?;
    Ok(0)
}

fn cmd_localize(a: Localize, cfg: &PipelineConfig) -> Result<u8> {
    let map = load_map(&a.map, None)?;
    let model = rf_load(&a.model)?;
    let cloud = read_cloud(&a.source)?;
    let out = localize(&cloud, &map, &model, cfg)?;
    let r = &out.result;
    log::info!(
        "{:?}: {} inliers, consistency group {}",
        r.status,
        r.inliers.len(),
        r.consistency_cluster_size
    );
    write_json(
        &a.out,
        &ResultFile {
            frame_id: cloud.frame_id.clone(),
            result: out.result.clone(),
        },
    )?;
    Ok(if r.is_localized() { 0 } else { 4 })
}

#[derive(Serialize)]
struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    localization: Option<nsm_core::eval::RunReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    classifier: Option<ClassifierReport>,
}

#[derive(Serialize)]
struct ClassifierReport {
    pairs: usize,
    auc: f64,
    operating_point: nsm_core::eval::RocPoint,
}

fn cmd_eval(a: Eval) -> Result<u8> {
    let mut report = EvalReport {
        localization: None,
        classifier: None,
    };
    if let (Some(results), Some(gt)) = (&a.results, &a.gt) {
        let results: Vec<_> = load_results(results)?
            .into_iter()
            .map(|f| (f.frame_id, f.result))
            .collect();
        let r = run_report(&results, &load_trajectory(gt)?)?;
        log::info!(
            "{}/{} localised, {} false",
            r.localizations,
            r.frames,
            r.false_localizations
        );
        report.localization = Some(r);
    }
    if let (Some(pairs), Some(model)) = (&a.pairs, &a.model) {
        let set = load_pairs(pairs)?;
        let curve = roc(&scored(&rf_load(model)?, &set)?)?;
        if let Some(p) = &a.roc {
            write_text(p, &curve.to_csv())?;
        }
        report.classifier = Some(ClassifierReport {
            pairs: set.len(),
            auc: curve.auc,
            operating_point: curve.operating_point(a.fpr),
        });
    }
    if report.localization.is_none() && report.classifier.is_none() {
        return Err(Error::InvalidParams(
            "eval needs --results with --gt, or --pairs with --model".into(),
        ));
    }
    write_json(&a.out, &report)?;
    Ok(0)
}
