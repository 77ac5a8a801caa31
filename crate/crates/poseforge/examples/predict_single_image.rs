//! Predicts the viewpoint of a single rendered image with both shape
//! conditioning modes — surface point cloud and multi-view render set — and
//! compares against ground truth. Uses a briefly trained miniature network,
//! so expect coarse numbers; the point is the inference API.
//!
//! ```text
//! cargo run --example predict_single_image
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use poseforge::config::GlobalConfig;
use poseforge::datagen::{
    generate_dataset, make_shape_set, BackgroundMode, ShapeFamily, Split, SplitMode,
};
use poseforge::model::{PoseNetwork, ShapeInput, ShapeMode};
use poseforge::render::{place_cameras, render_view_set, Image, RenderOptions};
use poseforge::rot::geodesic_distance;
use poseforge::train::{train, SchedulePhase};

fn out_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../target/example_out")
        .join(name);
    fs::create_dir_all(&dir).expect("create output dir");
    dir
}

fn main() -> poseforge::Result<()> {
    let root = out_dir("predict_single_image");

    let mut cfg = GlobalConfig::default();
    cfg.datagen.views_per_shape = 6;
    cfg.datagen.points_per_cloud = 64;
    cfg.datagen.image_size = 16;
    cfg.datagen.view_size = 16;
    cfg.datagen.n_azi = 2;
    cfg.datagen.background = BackgroundMode::Solid { color: [0.0, 0.0, 0.0] };
    cfg.datagen.split = SplitMode::Random { val_frac: 0.0, test_frac: 0.0 };
    cfg.model.image_size = 16;
    cfg.model.conv_channels = vec![4, 8];
    cfg.model.point_widths = vec![8, 16];
    cfg.model.view_count = 4;
    cfg.model.head_hidden = vec![32, 16];
    cfg.train.batch_size = 6;
    cfg.train.schedule = vec![SchedulePhase { lr: 1e-3, epochs: 10 }];
    cfg.train.augment = None;
    cfg.train.checkpoint_every = 0;
    cfg.validate()?;
    let sha = cfg.sha256();

    let shapes = make_shape_set(&[(ShapeFamily::Cuboid, 1)], 5)?;
    let dataset = generate_dataset(&root.join("data"), &shapes, &cfg.datagen, &sha)?;
    let mut net = PoseNetwork::build(cfg.model.clone(), cfg.train.seed)?;
    train(&mut net, &dataset, &cfg.train, &root.join("run"), &sha)?;

    // Pick one training image and its ground-truth viewpoint.
    let sample = &dataset.samples_in(Split::Train)[0];
    let image = Image::load_png(&dataset.root.join(&sample.image))?;
    let truth = sample.pose()?;
    println!("sample {}  truth: azi {:+.1} ele {:+.1} inp {:+.1}",
        sample.id, sample.azi_deg, sample.ele_deg, sample.inp_deg);

    // Mode 1: condition on a surface point cloud.
    let mesh = &shapes[0].mesh;
    let cloud = mesh.sample_surface(cfg.datagen.points_per_cloud, cfg.datagen.seed)?;
    let pred = net.predict(&image, ShapeInput::Points(&cloud))?.decode(&cfg.model.binning);
    let err = geodesic_distance(&truth.to_matrix(), &pred.to_matrix()).to_degrees();
    println!(
        "point-cloud mode: azi {:+.1} ele {:+.1} inp {:+.1}  ({err:.1} deg off)",
        pred.azimuth().to_degrees(), pred.elevation().to_degrees(), pred.inplane().to_degrees()
    );

    // Mode 2: condition on a ring of canonical renders instead. This needs a
    // network built for view input; reuse the same data with a fresh model.
    cfg.model.shape_mode = ShapeMode::MultiView;
    cfg.train.shape_mode = ShapeMode::MultiView;
    cfg.validate()?;
    let sha_mv = cfg.sha256();
    let mut net_mv = PoseNetwork::build(cfg.model.clone(), cfg.train.seed)?;
    train(&mut net_mv, &dataset, &cfg.train, &root.join("run_mv"), &sha_mv)?;

    let elevations: Vec<f64> = cfg.datagen.elevations_deg.iter().map(|e| e.to_radians()).collect();
    let cameras = place_cameras(cfg.datagen.n_azi, &elevations, cfg.datagen.distance)?;
    let opts = RenderOptions {
        width: cfg.datagen.view_size,
        height: cfg.datagen.view_size,
        ..RenderOptions::default()
    };
    let views = render_view_set(mesh, &cameras, &opts)?;
    let pred = net_mv.predict(&image, ShapeInput::Views(&views))?.decode(&cfg.model.binning);
    let err = geodesic_distance(&truth.to_matrix(), &pred.to_matrix()).to_degrees();
    println!(
        "multi-view mode:  azi {:+.1} ele {:+.1} inp {:+.1}  ({err:.1} deg off)",
        pred.azimuth().to_degrees(), pred.elevation().to_degrees(), pred.inplane().to_degrees()
    );
    Ok(())
}
