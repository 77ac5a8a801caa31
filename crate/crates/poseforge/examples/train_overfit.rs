//! End-to-end training demo at miniature scale: generate a 12-image dataset,
//! fit the point-cloud pose network until it memorizes it, then reload the
//! checkpoint and verify the evaluation reproduces. Artifacts land in
//! `target/example_out/train_overfit/`.
//!
//! ```text
//! cargo run --example train_overfit
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use poseforge::config::GlobalConfig;
use poseforge::datagen::{
    generate_dataset, make_shape_set, BackgroundMode, ShapeFamily, Split, SplitMode,
};
use poseforge::model::{PoseNetwork, ShapeMode};
use poseforge::train::{evaluate, train, SchedulePhase};

fn out_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../target/example_out")
        .join(name);
    fs::create_dir_all(&dir).expect("create output dir");
    dir
}

fn main() -> poseforge::Result<()> {
    let root = out_dir("train_overfit");

    // One tiny config drives data generation, the model, and training.
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
    cfg.model.head_hidden = vec![32, 16];
    cfg.train.batch_size = 12;
    cfg.train.schedule = vec![
        SchedulePhase { lr: 1e-3, epochs: 250 },
        SchedulePhase { lr: 1e-4, epochs: 50 },
    ];
    cfg.train.augment = None;
    cfg.train.checkpoint_every = 0;
    cfg.validate()?;
    let sha = cfg.sha256();

    let data_dir = root.join("data");
    let shapes = make_shape_set(&[(ShapeFamily::Cuboid, 1), (ShapeFamily::LShape, 1)], 5)?;
    let dataset = generate_dataset(&data_dir, &shapes, &cfg.datagen, &sha)?;
    println!("{} training images of {} shapes", dataset.manifest.samples.len(), shapes.len());

    let run_dir = root.join("run");
    let mut net = PoseNetwork::build(cfg.model.clone(), cfg.train.seed)?;
    let outcome = train(&mut net, &dataset, &cfg.train, &run_dir, &sha)?;
    for rec in &outcome.history {
        if rec.epoch % 50 == 0 || rec.epoch == 1 {
            println!("epoch {:3}  lr {:.0e}  loss {:.4}", rec.epoch, rec.lr, rec.mean_loss);
        }
    }

    let report = evaluate(&net, &dataset, Split::Train)?;
    println!(
        "train-split fit: acc@30deg {:.2}  median error {:.2} deg",
        report.aggregate.acc_pi6, report.aggregate.mederr_deg
    );

    // The checkpoint restores to a network with identical behavior.
    let (reloaded, meta) = PoseNetwork::from_checkpoint(&outcome.final_checkpoint)?;
    assert_eq!(reloaded.config().shape_mode, ShapeMode::PointCloud);
    assert_eq!(meta.get("config_sha256").and_then(|v| v.as_str()), Some(sha.as_str()));
    let replay = evaluate(&reloaded, &dataset, Split::Train)?;
    assert_eq!(replay.aggregate, report.aggregate);
    println!("checkpoint reload reproduces the evaluation bit for bit");
    Ok(())
}
