//! Command-line front end: one binary, subcommand per pipeline stage.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or configuration error,
//! 3 numerical failure (NaN in training, failed gradient check). Errors are
//! written to standard error as a single JSON line `{"code", "message"}`;
//! each command's summary goes to standard output as one JSON line too,
//! always carrying the `config_sha256` of the resolved configuration.
//!
//! Configuration layers: built-in defaults, then `--config FILE` (TOML), then
//! individual flags. `POSEFORGE_THREADS` bounds the worker pool.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::builder::ArgPredicate;
use clap::error::ErrorKind;
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::config::GlobalConfig;
use crate::datagen::{generate_dataset, make_shape_set, Dataset, ShapeFamily, Split, SplitMode};
use crate::error::{Error, Result};
use crate::gradcheck::run_gradcheck;
use crate::metrics::{add, add_s, load_pose_file, pair_pose_files};
use crate::model::{PoseNetwork, ShapeInput, ShapeMode};
use crate::render::{place_cameras, render_view_set, Image, RenderOptions, NORMALIZED_TOL};
use crate::shape::{load_obj, PointCloud, TriangleMesh};
use crate::train::{evaluate, resume_train, train, EvalRecord, EvalReport};

/// Parses arguments and dispatches to a subcommand, returning the process
/// exit code: 0 success, 1 usage error, 2 data or configuration error,
/// 3 numerical failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            emit_error(1, &e.to_string());
            return 1;
        }
    };
    if let Err(msg) = init_thread_pool() {
        emit_error(1, &msg);
        return 1;
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            let code = match err {
                Error::Numerical(_) => 3,
                _ => 2,
            };
            emit_error(code, &err.to_string());
            code
        }
    }
}

fn emit_error(code: i32, message: &str) {
    eprintln!("{}", json!({ "code": code, "message": message }));
}

fn emit(value: serde_json::Value) {
    println!("{value}");
}

/// Applies `POSEFORGE_THREADS` to the global worker pool. A repeat
/// initialization (second `run` call in one process) is not an error.
fn init_thread_pool() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var("POSEFORGE_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("POSEFORGE_THREADS must be a positive integer, got {raw:?}"))?;
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    Ok(())
}

#[derive(Parser)]
#[command(
    name = "poseforge",
    version,
    about = "Shape-conditioned object pose estimation: synthetic data, training, evaluation",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset: shapes, point clouds, canonical views,
    /// posed query images and a manifest.
    GenData(GenDataArgs),
    /// Render the canonical view set of one mesh.
    RenderViews(RenderViewsArgs),
    /// Sample a surface point cloud from one mesh.
    SamplePoints(SamplePointsArgs),
    /// Train a pose network on a generated dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split, or score one pose file
    /// against another.
    Eval(EvalArgs),
    /// Predict the pose of one image given its shape.
    Predict(PredictArgs),
    /// Run the finite-difference gradient check suite.
    Gradcheck(GradcheckArgs),
    /// Render an evaluation report as an SVG figure.
    Plot(PlotArgs),
    /// Print the resolved configuration as TOML with its hash.
    Config(ConfigArgs),
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::RenderViews(a) => cmd_render_views(a),
        Command::SamplePoints(a) => cmd_sample_points(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Plot(a) => cmd_plot(a),
        Command::Config(a) => cmd_config(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<GlobalConfig> {
    match path {
        Some(p) => GlobalConfig::load(p),
        None => Ok(GlobalConfig::default()),
    }
}

fn parse_family(s: &str) -> std::result::Result<ShapeFamily, String> {
    ShapeFamily::from_str(s).map_err(|e| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    Split::from_str(s).map_err(|e| e.to_string())
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Loads an OBJ mesh, normalizing it first if it overflows the unit sphere.
fn load_normalized_mesh(path: &Path) -> Result<TriangleMesh> {
    let mesh = load_obj(path)?;
    if mesh.max_vertex_norm() > 1.0 + NORMALIZED_TOL {
        mesh.normalize()
    } else {
        Ok(mesh)
    }
}

/// Loads a query image: PNG by extension, the raw float tensor otherwise.
fn load_image_any(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => Image::load_png(path),
        _ => Image::load_tensor(path),
    }
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, ValueEnum)]
enum SplitModeArg {
    /// Per-sample pseudorandom train/val/test assignment.
    Random,
    /// Hold out whole shape families as the test split.
    NovelShape,
}

#[derive(Args)]
struct GenDataArgs {
    /// Dataset output directory.
    #[arg(long)]
    out: PathBuf,
    /// Total number of shapes, spread across the families.
    #[arg(long)]
    shapes: usize,
    /// Posed query images per shape (default from config: 20).
    #[arg(long)]
    views_per_shape: Option<usize>,
    /// Generation seed (default from config).
    #[arg(long)]
    seed: Option<u64>,
    /// Split assignment strategy (default from config: random).
    #[arg(long, value_enum)]
    split_mode: Option<SplitModeArg>,
    /// Shape families to draw from (default: all).
    #[arg(long, value_delimiter = ',', value_parser = parse_family)]
    families: Option<Vec<ShapeFamily>>,
    /// Families held out as test data; implies --split-mode novel-shape.
    #[arg(
        long,
        value_delimiter = ',',
        value_parser = parse_family,
        default_value_if("split_mode", ArgPredicate::Equals("novel-shape".into()), "l_shape")
    )]
    holdout: Option<Vec<ShapeFamily>>,
    /// TOML configuration layered over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_gen_data(a: GenDataArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(k) = a.views_per_shape {
        cfg.datagen.views_per_shape = k;
    }
    if let Some(s) = a.seed {
        cfg.datagen.seed = s;
    }
    match (a.split_mode, &a.holdout) {
        (Some(SplitModeArg::Random), None) => {
            if !matches!(cfg.datagen.split, SplitMode::Random { .. }) {
                cfg.datagen.split = SplitMode::Random {
                    val_frac: 0.1,
                    test_frac: 0.1,
                };
            }
        }
        (Some(SplitModeArg::Random), Some(_)) => {
            return Err(Error::invalid("--holdout only applies to --split-mode novel-shape"));
        }
        (Some(SplitModeArg::NovelShape), holdout) => {
            let fallback = holdout.clone().expect("default_value_if fills holdout");
            cfg.datagen.split = match &cfg.datagen.split {
                SplitMode::NovelShape { val_frac, .. } => SplitMode::NovelShape {
                    holdout: fallback,
                    val_frac: *val_frac,
                },
                _ => SplitMode::NovelShape {
                    holdout: fallback,
                    val_frac: 0.0,
                },
            };
        }
        (None, Some(holdout)) => {
            cfg.datagen.split = SplitMode::NovelShape {
                holdout: holdout.clone(),
                val_frac: 0.0,
            };
        }
        (None, None) => {}
    }
    cfg.validate()?;
    let sha = cfg.sha256();

    if a.shapes == 0 {
        return Err(Error::invalid("--shapes must be at least 1"));
    }
    let families = a
        .families
        .unwrap_or_else(|| ShapeFamily::ALL.to_vec());
    if families.is_empty() {
        return Err(Error::invalid("--families must name at least one family"));
    }
    let base = a.shapes / families.len();
    let extra = a.shapes % families.len();
    let plan: Vec<(ShapeFamily, usize)> = families
        .iter()
        .enumerate()
        .map(|(i, f)| (*f, base + usize::from(i < extra)))
        .filter(|(_, n)| *n > 0)
        .collect();
    let shapes = make_shape_set(&plan, cfg.datagen.seed)?;
    let dataset = generate_dataset(&a.out, &shapes, &cfg.datagen, &sha)?;
    emit(json!({
        "out": path_str(&a.out),
        "shapes": dataset.manifest.shapes.len(),
        "samples": dataset.manifest.samples.len(),
        "config_sha256": sha,
    }));
    Ok(())
}

// ---------------------------------------------------------------------------
// render-views / sample-points
// ---------------------------------------------------------------------------

#[derive(Args)]
struct RenderViewsArgs {
    /// OBJ mesh to render.
    #[arg(long)]
    mesh: PathBuf,
    /// Number of evenly spaced azimuths.
    #[arg(long)]
    n_azi: usize,
    /// Elevation ring angles in degrees, e.g. `0,30`.
    #[arg(long, value_delimiter = ',')]
    elevations: Vec<f64>,
    /// Output directory for the view-set manifest and images.
    #[arg(long)]
    out: PathBuf,
    /// View resolution in pixels (default from config: 64).
    #[arg(long)]
    size: Option<usize>,
    /// Camera distance from the origin (default from config: 2.5).
    #[arg(long)]
    distance: Option<f64>,
    /// TOML configuration layered over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_render_views(a: RenderViewsArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(px) = a.size {
        cfg.datagen.view_size = px;
    }
    if let Some(d) = a.distance {
        cfg.datagen.distance = d;
    }
    cfg.validate()?;
    let sha = cfg.sha256();

    let mesh = load_normalized_mesh(&a.mesh)?;
    let elevations: Vec<f64> = a.elevations.iter().map(|d| d.to_radians()).collect();
    let cameras = place_cameras(a.n_azi, &elevations, cfg.datagen.distance)?;
    let opts = RenderOptions {
        width: cfg.datagen.view_size,
        height: cfg.datagen.view_size,
        ..RenderOptions::default()
    };
    let set = render_view_set(&mesh, &cameras, &opts)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let manifest = a.out.join("views.json");
    set.save(&manifest, &sha)?;
    emit(json!({
        "out": path_str(&manifest),
        "views": set.images.len(),
        "size": cfg.datagen.view_size,
        "config_sha256": sha,
    }));
    Ok(())
}

#[derive(Args)]
struct SamplePointsArgs {
    /// OBJ mesh to sample.
    #[arg(long)]
    mesh: PathBuf,
    /// Number of surface points.
    #[arg(long)]
    n: usize,
    /// Sampling seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output point-cloud file.
    #[arg(long)]
    out: PathBuf,
    /// TOML configuration layered over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_sample_points(a: SamplePointsArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    cfg.validate()?;
    let mesh = load_normalized_mesh(&a.mesh)?;
    let cloud = mesh.sample_surface(a.n, a.seed)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    cloud.save(&a.out)?;
    emit(json!({
        "out": path_str(&a.out),
        "points": cloud.len(),
        "diameter": cloud.diameter(),
        "config_sha256": cfg.sha256(),
    }));
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    /// Point-cloud shape encoder.
    Pc,
    /// Multi-view shape encoder.
    Mv,
}

impl From<ModeArg> for ShapeMode {
    fn from(m: ModeArg) -> ShapeMode {
        match m {
            ModeArg::Pc => ShapeMode::PointCloud,
            ModeArg::Mv => ShapeMode::MultiView,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// TOML configuration layered over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory written by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Shape-conditioning mode: pc (point cloud) or mv (multi-view).
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Output directory for checkpoints and the training log.
    #[arg(long)]
    out: PathBuf,
    /// Resume from a checkpoint written by a previous run of the same config.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Override the training seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Train on raw samples without augmentation.
    #[arg(long)]
    no_augment: bool,
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    let mode = ShapeMode::from(a.mode);
    cfg.model.shape_mode = mode;
    cfg.train.shape_mode = mode;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if a.no_augment {
        cfg.train.augment = None;
    }
    cfg.validate()?;
    let sha = cfg.sha256();

    let dataset = Dataset::open(&a.data)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let resolved_path = a.out.join("resolved_config.toml");
    let resolved = format!("{}# config_sha256 = {sha}\n", cfg.to_toml());
    fs::write(&resolved_path, resolved).map_err(|e| Error::io(&resolved_path, e))?;

    let outcome = match a.resume {
        Some(ckpt) => resume_train(&ckpt, &dataset, &cfg.train, &a.out, &sha)?,
        None => {
            let mut net = PoseNetwork::build(cfg.model.clone(), cfg.train.seed)?;
            train(&mut net, &dataset, &cfg.train, &a.out, &sha)?
        }
    };
    emit(json!({
        "epochs_run": outcome.epochs_run,
        "total_epochs": outcome.total_epochs,
        "final_checkpoint": path_str(&outcome.final_checkpoint),
        "best_checkpoint": outcome.best_checkpoint.as_deref().map(path_str),
        "log": path_str(&outcome.log_path),
        "config_sha256": sha,
    }));
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Args)]
#[command(group = ArgGroup::new("source").required(true).args(["ckpt", "truth"]))]
struct EvalArgs {
    /// Checkpoint to evaluate (with --data/--split).
    #[arg(long, requires = "data")]
    ckpt: Option<PathBuf>,
    /// Dataset directory written by gen-data.
    #[arg(long, requires = "ckpt")]
    data: Option<PathBuf>,
    /// Dataset split to score (train, val or test).
    #[arg(long, value_parser = parse_split, default_value = "test", requires = "ckpt")]
    split: Split,
    /// Ground-truth pose file (with --pred): score poses without a network.
    #[arg(long, requires = "pred")]
    truth: Option<PathBuf>,
    /// Predicted pose file to score against --truth.
    #[arg(long, requires = "truth")]
    pred: Option<PathBuf>,
    /// Point cloud for average-distance (ADD) metrics; needs translated poses.
    #[arg(long, requires = "truth")]
    points: Option<PathBuf>,
    /// Score distances with the symmetric metric (ADD-S).
    #[arg(long, requires = "points")]
    symmetric: bool,
    /// Report output path.
    #[arg(long)]
    report: PathBuf,
    /// TOML configuration layered over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    cfg.validate()?;

    let report = if let Some(ckpt) = &a.ckpt {
        let data = a.data.as_ref().expect("clap enforces --data with --ckpt");
        let (net, meta) = PoseNetwork::from_checkpoint(ckpt)?;
        let dataset = Dataset::open(data)?;
        let sha = meta
            .get("config_sha256")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .unwrap_or_else(|| cfg.sha256());
        evaluate(&net, &dataset, a.split)?.with_config_sha256(&sha)
    } else {
        let truth_path = a.truth.as_ref().expect("clap enforces the source group");
        let pred_path = a.pred.as_ref().expect("clap enforces --pred with --truth");
        score_pose_files(truth_path, pred_path, a.points.as_deref(), a.symmetric)?
            .with_config_sha256(&cfg.sha256())
    };
    if let Some(dir) = a.report.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    report.save(&a.report)?;
    emit(json!({
        "report": path_str(&a.report),
        "split": report.split,
        "count": report.count,
        "acc_pi6": report.aggregate.acc_pi6,
        "mederr_deg": report.aggregate.mederr_deg,
        "add_accuracy": report.aggregate.add_accuracy,
        "config_sha256": report.config_sha256,
    }));
    Ok(())
}

/// Scores a predicted pose file against ground truth: rotation metrics
/// always, plus diameter-normalized average-distance errors when the poses
/// carry translations and a point cloud is supplied.
fn score_pose_files(
    truth_path: &Path,
    pred_path: &Path,
    points: Option<&Path>,
    symmetric: bool,
) -> Result<EvalReport> {
    let truth = load_pose_file(truth_path)?;
    let pred = load_pose_file(pred_path)?;
    let pairs = pair_pose_files(&truth, &pred)?;
    let cloud = points.map(PointCloud::load).transpose()?;
    let translated = pairs
        .first()
        .map(|(_, p)| p.truth.1.is_some())
        .unwrap_or(false);
    if let Some(cloud) = &cloud {
        if !translated {
            return Err(Error::invalid(
                "average-distance metrics need pose files with translations (field `t`)",
            ));
        }
        let d = cloud.diameter();
        if d <= 0.0 {
            return Err(Error::invalid("point cloud has zero diameter"));
        }
    }
    let records = pairs
        .iter()
        .map(|(id, pair)| -> Result<EvalRecord> {
            let add_frac = match &cloud {
                Some(cloud) => {
                    let err = if symmetric {
                        add_s(pair, cloud)?
                    } else {
                        add(pair, cloud)?
                    };
                    Some(err / cloud.diameter())
                }
                None => None,
            };
            Ok(EvalRecord {
                sample_id: id.clone(),
                error_deg: pair.rotation_error().to_degrees(),
                add_frac,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_records("pose-file", records)
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

#[derive(Args)]
struct PredictArgs {
    /// Checkpoint to load.
    #[arg(long)]
    ckpt: PathBuf,
    /// Query image: PNG, or the raw float tensor format.
    #[arg(long)]
    image: PathBuf,
    /// OBJ mesh of the depicted object.
    #[arg(long)]
    mesh: PathBuf,
    /// TOML configuration layered over the defaults (shape-input settings).
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    cfg.validate()?;
    let (net, meta) = PoseNetwork::from_checkpoint(&a.ckpt)?;
    let image = load_image_any(&a.image)?;
    let mesh = load_normalized_mesh(&a.mesh)?;

    let prediction = match net.config().shape_mode {
        ShapeMode::PointCloud => {
            let cloud = mesh.sample_surface(cfg.datagen.points_per_cloud, cfg.datagen.seed)?;
            net.predict(&image, ShapeInput::Points(&cloud))?
        }
        ShapeMode::MultiView => {
            let elevations: Vec<f64> = cfg
                .datagen
                .elevations_deg
                .iter()
                .map(|d| d.to_radians())
                .collect();
            let cameras = place_cameras(cfg.datagen.n_azi, &elevations, cfg.datagen.distance)?;
            if cameras.len() != net.config().view_count {
                return Err(Error::invalid(format!(
                    "view layout {}x{} gives {} views, checkpoint expects {}",
                    cfg.datagen.n_azi,
                    elevations.len(),
                    cameras.len(),
                    net.config().view_count
                )));
            }
            let opts = RenderOptions {
                width: net.config().image_size,
                height: net.config().image_size,
                ..RenderOptions::default()
            };
            let set = render_view_set(&mesh, &cameras, &opts)?;
            net.predict(&image, ShapeInput::Views(&set))?
        }
    };
    let pose = prediction.decode(&net.config().binning);
    let sha = meta
        .get("config_sha256")
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .unwrap_or_else(|| cfg.sha256());
    emit(json!({
        "azi_deg": pose.azimuth().to_degrees(),
        "ele_deg": pose.elevation().to_degrees(),
        "inp_deg": pose.inplane().to_degrees(),
        "config_sha256": sha,
    }));
    Ok(())
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

#[derive(Args)]
struct GradcheckArgs {
    /// Seed for the randomized check inputs.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    let report = run_gradcheck(a.seed);
    for case in &report.cases {
        emit(json!({
            "case": case.name,
            "coords_checked": case.coords_checked,
            "max_rel_err": case.max_rel_err,
            "pass": case.pass,
        }));
    }
    let failed: Vec<&str> = report
        .cases
        .iter()
        .filter(|c| !c.pass)
        .map(|c| c.name.as_str())
        .collect();
    emit(json!({
        "cases": report.cases.len(),
        "coords_checked": report.total_coords(),
        "epsilon": report.epsilon,
        "tolerance": report.tolerance,
        "all_pass": report.all_pass(),
        "config_sha256": GlobalConfig::default().sha256(),
    }));
    if !failed.is_empty() {
        return Err(Error::Numerical(format!(
            "gradient check failed for: {}",
            failed.join(", ")
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

#[derive(Args)]
struct PlotArgs {
    /// Evaluation report (JSON) to visualize.
    #[arg(long)]
    report: PathBuf,
    /// Output SVG path.
    #[arg(long)]
    out: PathBuf,
}

fn cmd_plot(a: PlotArgs) -> Result<()> {
    let report = EvalReport::load(&a.report)?;
    let svg = report_svg(&report);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&a.out, svg).map_err(|e| Error::io(&a.out, e))?;
    emit(json!({
        "out": path_str(&a.out),
        "samples": report.count,
        "config_sha256": report.config_sha256,
    }));
    Ok(())
}

/// Renders the rotation-error histogram (5-degree bins) and the
/// accuracy-vs-threshold curve of a report as a standalone SVG document.
fn report_svg(report: &EvalReport) -> String {
    const BIN_DEG: f64 = 5.0;
    const BINS: usize = 36; // 0..180 degrees
    const PANEL_W: f64 = 380.0;
    const PANEL_H: f64 = 260.0;
    const MARGIN_L: f64 = 60.0;
    const MARGIN_T: f64 = 58.0;
    const GAP: f64 = 90.0;
    let width = MARGIN_L + PANEL_W + GAP + PANEL_W + 40.0;
    let height = MARGIN_T + PANEL_H + 62.0;

    let errors: Vec<f64> = report.per_sample.iter().map(|r| r.error_deg).collect();
    let mut counts = [0usize; BINS];
    for &e in &errors {
        let bin = ((e / BIN_DEG) as usize).min(BINS - 1);
        counts[bin] += 1;
    }
    let max_count = counts.iter().copied().max().unwrap_or(0).max(1);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"monospace\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{MARGIN_L}\" y=\"24\" font-size=\"15\">rotation errors: split={} n={} \
         acc_pi6={:.4} mederr={:.2}deg</text>\n",
        report.split, report.count, report.aggregate.acc_pi6, report.aggregate.mederr_deg
    ));

    // Panel 1: histogram.
    let (hx, hy) = (MARGIN_L, MARGIN_T);
    svg.push_str(&format!(
        "<rect x=\"{hx}\" y=\"{hy}\" width=\"{PANEL_W}\" height=\"{PANEL_H}\" fill=\"none\" stroke=\"black\"/>\n"
    ));
    let bar_w = PANEL_W / BINS as f64;
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let bh = PANEL_H * c as f64 / max_count as f64;
        svg.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#4878a8\"/>\n",
            hx + i as f64 * bar_w,
            hy + PANEL_H - bh,
            bar_w - 0.5,
            bh
        ));
    }
    for t in [0, 45, 90, 135, 180] {
        let x = hx + PANEL_W * t as f64 / 180.0;
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{t}</text>\n",
            hy + PANEL_H + 16.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">error (deg), {BIN_DEG:.0}-deg bins, max bar = {max_count}</text>\n",
        hx + PANEL_W / 2.0,
        hy + PANEL_H + 38.0
    ));

    // Panel 2: accuracy against the error threshold.
    let (cx, cy) = (MARGIN_L + PANEL_W + GAP, MARGIN_T);
    svg.push_str(&format!(
        "<rect x=\"{cx}\" y=\"{cy}\" width=\"{PANEL_W}\" height=\"{PANEL_H}\" fill=\"none\" stroke=\"black\"/>\n"
    ));
    let mut pts = String::new();
    for t in 0..=180 {
        let acc = errors.iter().filter(|&&e| e < t as f64).count() as f64 / errors.len().max(1) as f64;
        let x = cx + PANEL_W * t as f64 / 180.0;
        let y = cy + PANEL_H * (1.0 - acc);
        pts.push_str(&format!("{x:.2},{y:.2} "));
    }
    svg.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#a84848\" stroke-width=\"1.5\"/>\n",
        pts.trim_end()
    ));
    let x30 = cx + PANEL_W * 30.0 / 180.0;
    svg.push_str(&format!(
        "<line x1=\"{x30:.2}\" y1=\"{cy}\" x2=\"{x30:.2}\" y2=\"{:.1}\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n",
        cy + PANEL_H
    ));
    for (frac, label) in [(0.0, "1.0"), (0.5, "0.5"), (1.0, "0.0")] {
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{label}</text>\n",
            cx - 6.0,
            cy + PANEL_H * frac + 4.0
        ));
    }
    for t in [0, 30, 90, 180] {
        let x = cx + PANEL_W * t as f64 / 180.0;
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{t}</text>\n",
            cy + PANEL_H + 16.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">accuracy vs threshold (deg); dashed = 30</text>\n",
        cx + PANEL_W / 2.0,
        cy + PANEL_H + 38.0
    ));
    svg.push_str("</svg>\n");
    svg
}

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration layered over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_config(a: ConfigArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    cfg.validate()?;
    print!("{}", cfg.to_toml());
    println!("# config_sha256 = {}", cfg.sha256());
    Ok(())
}
