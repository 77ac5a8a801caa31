//! The training loop: the classification-plus-regression pose loss, seeded
//! mini-batch scheduling with on-the-fly augmentation, Adam updates,
//! checkpointing with bit-identical resume, and evaluation.
//!
//! Determinism contract: given the same dataset bytes, network build seed and
//! `TrainConfig`, a run produces byte-identical checkpoints and log records
//! (`wall_ms` excepted) on one platform, regardless of thread count. Every
//! random draw comes from a named stream — `(seed, "shuffle:<epoch>")` for
//! batch order and `(seed, "augment:<epoch>:<sample_id>")` for augmentation —
//! so no draw depends on scheduling.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, Graph, NodeId, Tensor};
use crate::datagen::{
    draw_augment_params, stream_rng, AugmentParams, AugmentPolicy, Dataset, Sample, Split,
};
use crate::error::{Error, Result};
use crate::metrics::{accuracy_below, median};
use crate::model::{
    images_to_tensor, points_to_tensor, views_to_tensor, PoseNetwork, PosePrediction, ShapeInput,
    ShapeMode,
};
use crate::render::{render_view_set, Image, RenderOptions, ViewSet};
use crate::rot::{geodesic_distance, AngleBinning, BinnedPose};
use crate::shape::{PointCloud, TriangleMesh};

/// Huber transition point for the offset regression term.
pub const HUBER_DELTA: f64 = 1.0;

/// Probability floor inside the cross-entropy term (gradients vanish below
/// it), matching the graph operator.
pub const CROSS_ENTROPY_CLAMP: f64 = 1e-12;

/// Training log file name inside the output directory.
pub const LOG_FILE: &str = "train_log.jsonl";
/// Checkpoint written after the last scheduled epoch.
pub const FINAL_CKPT: &str = "ckpt_final.pfsckpt";
/// Checkpoint of the best validation accuracy seen so far.
pub const BEST_CKPT: &str = "ckpt_best.pfsckpt";

/// Periodic checkpoint file name for a completed 1-based epoch.
pub fn epoch_ckpt_name(epoch: usize) -> String {
    format!("ckpt_epoch_{epoch:04}.pfsckpt")
}

/// One constant-learning-rate stretch of the schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulePhase {
    pub lr: f64,
    pub epochs: usize,
}

/// Everything the training loop needs besides the network and the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Samples per optimizer step; at least 2 (train-mode batchnorm needs a
    /// batch statistic). A trailing shuffled chunk of one sample is skipped.
    pub batch_size: usize,
    pub schedule: Vec<SchedulePhase>,
    pub seed: u64,
    /// Write a numbered checkpoint every this many epochs; 0 disables
    /// periodic checkpoints (the final one is always written).
    pub checkpoint_every: usize,
    /// Must match the network; kept here so a config file fully describes a
    /// run and mismatches surface as errors rather than silent retraining.
    pub shape_mode: ShapeMode,
    /// `None` trains on the raw samples (useful for overfitting oracles).
    pub augment: Option<AugmentPolicy>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            schedule: vec![
                SchedulePhase { lr: 1e-4, epochs: 100 },
                SchedulePhase { lr: 1e-5, epochs: 100 },
            ],
            seed: 0,
            checkpoint_every: 10,
            shape_mode: ShapeMode::PointCloud,
            augment: Some(AugmentPolicy::default()),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Desk-scale preset: the default schedule compressed to 30 + 30 epochs
    /// with a 10x higher starting rate, keeping the 10x mid-run drop.
    pub fn desk() -> TrainConfig {
        TrainConfig {
            schedule: vec![
                SchedulePhase { lr: 1e-3, epochs: 30 },
                SchedulePhase { lr: 1e-4, epochs: 30 },
            ],
            ..TrainConfig::default()
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.schedule.iter().map(|p| p.epochs).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid(format!(
                "batch_size must be at least 2 for train-mode batchnorm, got {}",
                self.batch_size
            )));
        }
        if self.schedule.is_empty() {
            return Err(Error::invalid("schedule must have at least one phase"));
        }
        for phase in &self.schedule {
            if phase.lr <= 0.0 || !phase.lr.is_finite() {
                return Err(Error::invalid(format!(
                    "learning rates must be positive and finite, got {}",
                    phase.lr
                )));
            }
            if phase.epochs == 0 {
                return Err(Error::invalid("schedule phases must run at least one epoch"));
            }
        }
        if let Some(policy) = &self.augment {
            policy.validate()?;
        }
        Ok(())
    }

    /// Learning rate for a 0-based epoch index, or `None` past the schedule.
    pub fn epoch_lr(&self, epoch_index: usize) -> Option<f64> {
        let mut start = 0;
        for phase in &self.schedule {
            if epoch_index < start + phase.epochs {
                return Some(phase.lr);
            }
            start += phase.epochs;
        }
        None
    }
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

fn check_binning(
    counts: [usize; 3],
    widths: impl Fn(usize) -> usize,
    targets: &[BinnedPose],
) -> Result<()> {
    for (a, &count) in counts.iter().enumerate() {
        if widths(a) != count {
            return Err(Error::invalid(format!(
                "prediction has {} bins for angle {a}, binning expects {count}",
                widths(a)
            )));
        }
        for t in targets {
            if t.labels[a] >= count {
                return Err(Error::invalid(format!(
                    "target label {} out of range for angle {a} with {count} bins",
                    t.labels[a]
                )));
            }
        }
    }
    Ok(())
}

/// Builds the pose loss on the graph from raw per-angle logits and offsets
/// (`[N, L_a]` each): per sample, the sum over the three angles of
/// cross-entropy on the softmaxed logits plus a Huber penalty on the
/// tanh-squashed offset read at the ground-truth bin only; the batch loss is
/// the mean over samples. Offsets at non-ground-truth bins do not enter the
/// loss, so their gradients are exactly zero.
pub fn pose_loss(
    g: &mut Graph,
    logits: &[NodeId; 3],
    offsets: &[NodeId; 3],
    targets: &[BinnedPose],
    binning: &AngleBinning,
) -> Result<NodeId> {
    let counts = binning.counts();
    check_binning(counts, |a| g.value(logits[a]).dim(1), targets)?;
    check_binning(counts, |a| g.value(offsets[a]).dim(1), targets)?;
    let n = targets.len();
    for a in 0..3 {
        if g.value(logits[a]).dim(0) != n || g.value(offsets[a]).dim(0) != n {
            return Err(Error::invalid(format!(
                "prediction batch size does not match {n} targets"
            )));
        }
    }
    if n == 0 {
        return Err(Error::invalid("pose loss over an empty batch"));
    }

    let mut total: Option<NodeId> = None;
    for a in 0..3 {
        let labels: Vec<usize> = targets.iter().map(|t| t.labels[a]).collect();
        let deltas: Vec<f64> = targets.iter().map(|t| t.offsets[a]).collect();
        let probs = g.softmax(logits[a]);
        let ce = g.cross_entropy(probs, &labels);
        let squashed = g.tanh(offsets[a]);
        let at_gt = g.gather(squashed, &labels);
        let target = g.input(Tensor::from_vec(&[n], deltas));
        let residual = g.sub(at_gt, target);
        let reg = g.huber(residual, HUBER_DELTA);
        let term = g.add(ce, reg);
        total = Some(match total {
            Some(acc) => g.add(acc, term),
            None => term,
        });
    }
    Ok(g.mean(total.expect("three angle terms")))
}

fn huber_value(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        0.5 * r * r
    } else {
        delta * (r.abs() - 0.5 * delta)
    }
}

/// The per-sample loss on plain values: cross-entropy of the predicted bin
/// probabilities plus the Huber penalty of the predicted offset at the
/// ground-truth bin, summed over the three angles. Matches the graph loss of
/// [`pose_loss`] for a batch of one.
pub fn pose_loss_value(
    pred: &PosePrediction,
    target: &BinnedPose,
    binning: &AngleBinning,
) -> Result<f64> {
    let counts = binning.counts();
    check_binning(counts, |a| pred.probabilities[a].len(), std::slice::from_ref(target))?;
    check_binning(counts, |a| pred.offsets[a].len(), std::slice::from_ref(target))?;
    let mut loss = 0.0;
    for a in 0..3 {
        let gt = target.labels[a];
        loss += -pred.probabilities[a][gt].max(CROSS_ENTROPY_CLAMP).ln();
        loss += huber_value(pred.offsets[a][gt] - target.offsets[a], HUBER_DELTA);
    }
    Ok(loss)
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// One evaluated sample: geodesic rotation error in degrees, plus the
/// average-distance error as a fraction of the shape diameter when poses
/// carry translations (ADD, or ADD-S for rotation-symmetric shapes).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecord {
    pub sample_id: String,
    pub error_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub add_frac: Option<f64>,
}

/// Aggregates recomputable from the per-sample list.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalAggregate {
    /// Fraction of samples with rotation error strictly below 30 degrees.
    pub acc_pi6: f64,
    /// Median rotation error, degrees.
    pub mederr_deg: f64,
    /// Fraction of samples whose average-distance error is strictly below
    /// 0.1 of the shape diameter; present iff the records carry `add_frac`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub add_accuracy: Option<f64>,
}

/// Evaluation result: per-sample errors sorted by sample id plus their
/// aggregates. The report is self-auditing: [`EvalReport::audit`] recomputes
/// the aggregates from the list and demands exact agreement, and `load`
/// audits automatically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub split: String,
    pub count: usize,
    /// Hash of the resolved configuration that produced this report, when
    /// written by the pipeline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_sha256: Option<String>,
    pub aggregate: EvalAggregate,
    pub per_sample: Vec<EvalRecord>,
}

impl EvalReport {
    /// Sorts the records by sample id and computes the aggregates.
    pub fn from_records(split: &str, mut records: Vec<EvalRecord>) -> Result<EvalReport> {
        if records.is_empty() {
            return Err(Error::invalid(format!("no samples to evaluate in split '{split}'")));
        }
        records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        for pair in records.windows(2) {
            if pair[0].sample_id == pair[1].sample_id {
                return Err(Error::invalid(format!(
                    "duplicate sample id {:?} in evaluation",
                    pair[0].sample_id
                )));
            }
        }
        let errors: Vec<f64> = records.iter().map(|r| r.error_deg).collect();
        let with_add = records.iter().filter(|r| r.add_frac.is_some()).count();
        let add_accuracy = match with_add {
            0 => None,
            n if n == records.len() => {
                let fracs: Vec<f64> = records.iter().map(|r| r.add_frac.unwrap()).collect();
                Some(accuracy_below(&fracs, 0.1)?)
            }
            n => {
                return Err(Error::invalid(format!(
                    "only {n} of {} records carry an average-distance error; it must be all or none",
                    records.len()
                )))
            }
        };
        Ok(EvalReport {
            split: split.to_string(),
            count: records.len(),
            config_sha256: None,
            aggregate: EvalAggregate {
                acc_pi6: accuracy_below(&errors, 30.0)?,
                mederr_deg: median(&errors)?,
                add_accuracy,
            },
            per_sample: records,
        })
    }

    /// Stamps the hash of the configuration that produced the report.
    pub fn with_config_sha256(mut self, sha: &str) -> EvalReport {
        self.config_sha256 = Some(sha.to_string());
        self
    }

    /// Verifies that counts, ordering and aggregates match the per-sample
    /// list exactly.
    pub fn audit(&self) -> Result<()> {
        let rebuilt = EvalReport::from_records(&self.split, self.per_sample.clone())?;
        let add_matches = match (rebuilt.aggregate.add_accuracy, self.aggregate.add_accuracy) {
            (None, None) => true,
            (Some(a), Some(b)) => a.to_bits() == b.to_bits(),
            _ => false,
        };
        if rebuilt.count != self.count
            || rebuilt.per_sample != self.per_sample
            || rebuilt.aggregate.acc_pi6.to_bits() != self.aggregate.acc_pi6.to_bits()
            || rebuilt.aggregate.mederr_deg.to_bits() != self.aggregate.mederr_deg.to_bits()
            || !add_matches
        {
            return Err(Error::invalid(
                "evaluation report fails its self-audit: aggregates or ordering do not match the per-sample list",
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json =
            serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        json.push('\n');
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<EvalReport> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: EvalReport =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        report.audit()?;
        Ok(report)
    }
}

enum ShapeAsset {
    Cloud(PointCloud),
    Views(ViewSet),
}

fn load_eval_assets(
    dataset: &Dataset,
    mode: ShapeMode,
    shape_ids: impl Iterator<Item = String>,
) -> Result<std::collections::HashMap<String, ShapeAsset>> {
    let mut assets = std::collections::HashMap::new();
    for id in shape_ids {
        if assets.contains_key(&id) {
            continue;
        }
        let entry = dataset.shape(&id)?;
        let asset = match mode {
            ShapeMode::PointCloud => ShapeAsset::Cloud(dataset.load_points(entry)?),
            ShapeMode::MultiView => ShapeAsset::Views(dataset.load_views(entry)?),
        };
        assets.insert(id, asset);
    }
    Ok(assets)
}

/// Evaluates every sample of `split` with eval-mode forward passes (no
/// augmentation, running statistics untouched): predict, decode to Euler
/// angles, and score the geodesic distance against the label's rotation.
/// Samples shard across threads; the report is merged in sample-id order.
pub fn evaluate(net: &PoseNetwork, dataset: &Dataset, split: Split) -> Result<EvalReport> {
    let entries = dataset.samples_in(split);
    if entries.is_empty() {
        return Err(Error::invalid(format!("split '{split}' is empty")));
    }
    let mode = net.config().shape_mode;
    let assets = load_eval_assets(
        dataset,
        mode,
        entries.iter().map(|e| e.shape_id.clone()),
    )?;
    let binning = &net.config().binning;
    let records: Vec<EvalRecord> = entries
        .par_iter()
        .map(|entry| -> Result<EvalRecord> {
            let sample = dataset.load_sample(entry)?;
            let input = match assets.get(&entry.shape_id).expect("asset preloaded") {
                ShapeAsset::Cloud(c) => ShapeInput::Points(c),
                ShapeAsset::Views(v) => ShapeInput::Views(v),
            };
            let prediction = net.predict(&sample.image, input)?;
            let decoded = prediction.decode(binning);
            let err = geodesic_distance(&decoded.to_matrix(), &sample.pose.to_matrix());
            Ok(EvalRecord {
                sample_id: sample.id,
                error_deg: err.to_degrees(),
                add_frac: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_records(split.name(), records)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// One epoch's log record; written as one JSON line. `val_*` fields are null
/// when the dataset has no validation split. `wall_ms` is the only
/// nondeterministic field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub val_acc_pi6: Option<f64>,
    pub val_mederr: Option<f64>,
    pub wall_ms: u64,
}

/// Best validation result seen so far; carried in checkpoint metadata so
/// resumed runs keep selecting correctly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BestVal {
    pub epoch: usize,
    pub acc_pi6: f64,
    pub mederr_deg: f64,
}

impl BestVal {
    /// Higher accuracy wins; ties break toward lower median error.
    fn improves_on(&self, other: Option<BestVal>) -> bool {
        match other {
            None => true,
            Some(b) => {
                self.acc_pi6 > b.acc_pi6
                    || (self.acc_pi6 == b.acc_pi6 && self.mederr_deg < b.mederr_deg)
            }
        }
    }
}

/// What a finished (or finished-from-resume) run produced.
#[derive(Debug)]
pub struct TrainOutcome {
    /// Epochs executed by this call (a resume excludes the checkpointed ones).
    pub epochs_run: usize,
    pub total_epochs: usize,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: Option<PathBuf>,
    pub log_path: PathBuf,
    /// This call's log records, in order.
    pub history: Vec<EpochRecord>,
}

struct TrainItem {
    sample: Sample,
}

struct ShapeAssets {
    mesh: TriangleMesh,
    cloud: PointCloud,
    views: Option<ViewSet>,
}

struct Prepared {
    image: Image,
    target: BinnedPose,
    input: PreparedInput,
}

enum PreparedInput {
    Cloud(PointCloud),
    Views(ViewSet),
}

fn view_render_options(reference: &ViewSet) -> RenderOptions {
    let first = &reference.images[0];
    RenderOptions {
        width: first.width(),
        height: first.height(),
        ..RenderOptions::default()
    }
}

/// Builds the augmented (or raw) network inputs for one sample.
fn prepare_item(
    item: &TrainItem,
    assets: &ShapeAssets,
    mode: ShapeMode,
    params: Option<&AugmentParams>,
    binning: &AngleBinning,
) -> Result<Prepared> {
    let (image, pose, rotation, rotated_mesh) = match params {
        Some(p) => {
            let aug = crate::datagen::apply_augment(&item.sample, &assets.mesh, p)?;
            (aug.image, aug.pose, aug.shape_rotation, Some(aug.shape))
        }
        None => (item.sample.image.clone(), item.sample.pose, 0.0, None),
    };
    let input = match mode {
        ShapeMode::PointCloud => PreparedInput::Cloud(if rotation == 0.0 {
            assets.cloud.clone()
        } else {
            assets.cloud.rotate_about_up(rotation)
        }),
        ShapeMode::MultiView => {
            let stored = assets.views.as_ref().expect("views loaded in multi-view mode");
            let set = match rotated_mesh {
                Some(mesh) if rotation != 0.0 => {
                    render_view_set(&mesh, &stored.cameras, &view_render_options(stored))?
                }
                _ => stored.clone(),
            };
            PreparedInput::Views(set)
        }
    };
    Ok(Prepared {
        image,
        target: binning.encode(&pose),
        input,
    })
}

fn checkpoint_meta(
    config: &TrainConfig,
    config_sha256: &str,
    epoch: usize,
    best: Option<BestVal>,
) -> serde_json::Value {
    serde_json::json!({
        "epoch": epoch,
        "config_sha256": config_sha256,
        "train": config,
        "best": best,
    })
}

/// Trains `net` on the dataset's train split from scratch. See
/// [`resume_train`] for continuing a checkpointed run.
pub fn train(
    net: &mut PoseNetwork,
    dataset: &Dataset,
    config: &TrainConfig,
    out_dir: &Path,
    config_sha256: &str,
) -> Result<TrainOutcome> {
    run_epochs(net, dataset, config, out_dir, config_sha256, 0, None)
}

/// Continues training from a checkpoint written by [`train`]. The checkpoint
/// must carry the same training configuration and config hash; the schedule
/// resumes at the recorded epoch and the continuation is bit-identical to the
/// uninterrupted run.
pub fn resume_train(
    ckpt: &Path,
    dataset: &Dataset,
    config: &TrainConfig,
    out_dir: &Path,
    config_sha256: &str,
) -> Result<TrainOutcome> {
    let (mut net, meta) = PoseNetwork::from_checkpoint(ckpt)?;
    let saved_train = meta
        .get("train")
        .cloned()
        .ok_or_else(|| Error::format(ckpt, "checkpoint meta lacks a 'train' config"))?;
    let current = serde_json::to_value(config).expect("config serializes");
    if saved_train != current {
        return Err(Error::invalid(
            "checkpoint/config mismatch: the checkpoint was written under a different training configuration",
        ));
    }
    let saved_sha = meta.get("config_sha256").and_then(|v| v.as_str());
    if saved_sha != Some(config_sha256) {
        return Err(Error::invalid(format!(
            "checkpoint/config mismatch: checkpoint config hash {:?} differs from {config_sha256:?}",
            saved_sha.unwrap_or("<missing>")
        )));
    }
    let done = meta
        .get("epoch")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::format(ckpt, "checkpoint meta lacks an 'epoch' counter"))?
        as usize;
    let best: Option<BestVal> = match meta.get("best") {
        None | Some(serde_json::Value::Null) => None,
        Some(v) => Some(
            serde_json::from_value(v.clone())
                .map_err(|e| Error::format(ckpt, format!("bad 'best' record: {e}")))?,
        ),
    };
    run_epochs(&mut net, dataset, config, out_dir, config_sha256, done, best)
}

fn run_epochs(
    net: &mut PoseNetwork,
    dataset: &Dataset,
    config: &TrainConfig,
    out_dir: &Path,
    config_sha256: &str,
    start_epoch: usize,
    mut best: Option<BestVal>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let total_epochs = config.total_epochs();
    if start_epoch >= total_epochs {
        return Err(Error::invalid(format!(
            "checkpoint already covers all {total_epochs} scheduled epochs"
        )));
    }
    let mode = net.config().shape_mode;
    if mode != config.shape_mode {
        return Err(Error::invalid(format!(
            "training config wants {} but the network was built for {mode}",
            config.shape_mode
        )));
    }

    // Load the train split and all per-shape assets up front.
    let mut entries = dataset.samples_in(Split::Train);
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    if entries.len() < 2 {
        return Err(Error::invalid(format!(
            "training needs at least 2 samples, split 'train' has {}",
            entries.len()
        )));
    }
    let items: Vec<TrainItem> = entries
        .iter()
        .map(|e| Ok(TrainItem { sample: dataset.load_sample(e)? }))
        .collect::<Result<Vec<_>>>()?;
    let mut shape_assets = std::collections::HashMap::new();
    for entry in &entries {
        if shape_assets.contains_key(&entry.shape_id) {
            continue;
        }
        let shape = dataset.shape(&entry.shape_id)?;
        shape_assets.insert(
            entry.shape_id.clone(),
            ShapeAssets {
                mesh: dataset.load_mesh(shape)?,
                cloud: dataset.load_points(shape)?,
                views: match mode {
                    ShapeMode::MultiView => Some(dataset.load_views(shape)?),
                    ShapeMode::PointCloud => None,
                },
            },
        );
    }

    // Input compatibility checks before spending any compute.
    let net_cfg = net.config();
    let probe = &items[0].sample.image;
    if probe.channels() != net_cfg.image_channels
        || probe.height() != net_cfg.image_size
        || probe.width() != net_cfg.image_size
    {
        return Err(Error::invalid(format!(
            "dataset images are {}x{}x{}, network expects {}x{}x{}",
            probe.channels(),
            probe.height(),
            probe.width(),
            net_cfg.image_channels,
            net_cfg.image_size,
            net_cfg.image_size
        )));
    }
    if mode == ShapeMode::MultiView {
        for assets in shape_assets.values() {
            let views = assets.views.as_ref().expect("loaded above");
            if views.images.len() != net_cfg.view_count {
                return Err(Error::invalid(format!(
                    "dataset stores {} views per shape, network expects {}",
                    views.images.len(),
                    net_cfg.view_count
                )));
            }
            for v in &views.images {
                if v.height() != net_cfg.image_size || v.width() != net_cfg.image_size {
                    return Err(Error::invalid(format!(
                        "rendered views are {}x{}, network expects {}x{}",
                        v.height(),
                        v.width(),
                        net_cfg.image_size,
                        net_cfg.image_size
                    )));
                }
            }
        }
    }
    let binning = net_cfg.binning;
    let has_val = !dataset.samples_in(Split::Val).is_empty();

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join(LOG_FILE);
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;

    let mut history = Vec::with_capacity(total_epochs - start_epoch);
    let mut best_path = None;
    for epoch_index in start_epoch..total_epochs {
        let epoch = epoch_index + 1;
        let lr = config.epoch_lr(epoch_index).expect("epoch within schedule");
        let started = Instant::now();

        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut stream_rng(config.seed, &format!("shuffle:{epoch}")));

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let prepared: Vec<Prepared> = chunk
                .par_iter()
                .map(|&i| {
                    let item = &items[i];
                    let assets = &shape_assets[&item.sample.shape_id];
                    let params = config.augment.as_ref().map(|policy| {
                        let tag = format!("augment:{epoch}:{}", item.sample.id);
                        draw_augment_params(policy, &mut stream_rng(config.seed, &tag))
                    });
                    prepare_item(item, assets, mode, params.as_ref(), &binning)
                })
                .collect::<Result<Vec<_>>>()?;

            let images: Vec<&Image> = prepared.iter().map(|p| &p.image).collect();
            let targets: Vec<BinnedPose> = prepared.iter().map(|p| p.target).collect();
            let (loss_value, updated_store) = {
                let mut g = Graph::new(&net.store, true);
                let img = g.input(images_to_tensor(&images)?);
                let out = match mode {
                    ShapeMode::PointCloud => {
                        let clouds: Vec<&PointCloud> = prepared
                            .iter()
                            .map(|p| match &p.input {
                                PreparedInput::Cloud(c) => c,
                                PreparedInput::Views(_) => unreachable!("mode checked"),
                            })
                            .collect();
                        let pts = g.input(points_to_tensor(&clouds)?);
                        net.forward_with_points(&mut g, img, pts)
                    }
                    ShapeMode::MultiView => {
                        let sets: Vec<&ViewSet> = prepared
                            .iter()
                            .map(|p| match &p.input {
                                PreparedInput::Views(v) => v,
                                PreparedInput::Cloud(_) => unreachable!("mode checked"),
                            })
                            .collect();
                        let views = g.input(views_to_tensor(&sets)?);
                        net.forward_with_views(&mut g, img, views)
                    }
                };
                let (logits, offsets) = net.split_output(&mut g, out);
                let loss = pose_loss(&mut g, &logits, &offsets, &targets, &binning)?;
                let grads = g.backward(loss);
                let mut updated = net.store.clone();
                g.apply_grads(&grads, &mut updated);
                (g.value(loss).data()[0], updated)
            };
            net.store = updated_store;
            net.store.adam_step(lr, &config.adam)?;
            loss_sum += loss_value * chunk.len() as f64;
            seen += chunk.len();
        }
        let mean_loss = loss_sum / seen as f64;

        let (val_acc, val_med) = if has_val {
            let report = evaluate(net, dataset, Split::Val)?;
            (Some(report.aggregate.acc_pi6), Some(report.aggregate.mederr_deg))
        } else {
            (None, None)
        };
        if let (Some(acc), Some(med)) = (val_acc, val_med) {
            let candidate = BestVal {
                epoch,
                acc_pi6: acc,
                mederr_deg: med,
            };
            if candidate.improves_on(best) {
                best = Some(candidate);
                let path = out_dir.join(BEST_CKPT);
                net.save(&path, checkpoint_meta(config, config_sha256, epoch, best))?;
                best_path = Some(path);
            }
        }

        let record = EpochRecord {
            epoch,
            lr,
            mean_loss,
            val_acc_pi6: val_acc,
            val_mederr: val_med,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        let line = serde_json::to_string(&record).expect("record serializes");
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        history.push(record);

        if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
            let path = out_dir.join(epoch_ckpt_name(epoch));
            net.save(&path, checkpoint_meta(config, config_sha256, epoch, best))?;
        }
        if epoch == total_epochs {
            let path = out_dir.join(FINAL_CKPT);
            net.save(&path, checkpoint_meta(config, config_sha256, epoch, best))?;
        }
    }

    Ok(TrainOutcome {
        epochs_run: total_epochs - start_epoch,
        total_epochs,
        final_checkpoint: out_dir.join(FINAL_CKPT),
        best_checkpoint: best_path.or_else(|| {
            best.map(|_| out_dir.join(BEST_CKPT))
        }),
        log_path,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{
        generate_dataset, make_shape_set, BackgroundMode, DatagenConfig, PoseDistribution,
        ShapeFamily, SplitMode,
    };
    use crate::model::PoseNetworkConfig;
    use crate::rot::EulerPose;

    fn tiny_dataset(dir: &Path, split: SplitMode) -> Dataset {
        let shapes = make_shape_set(&[(ShapeFamily::Cuboid, 1)], 3).unwrap();
        let cfg = DatagenConfig {
            views_per_shape: 6,
            points_per_cloud: 32,
            image_size: 16,
            view_size: 16,
            n_azi: 2,
            elevations_deg: vec![0.0, 30.0],
            background: BackgroundMode::Solid { color: [0.0; 3] },
            pose: PoseDistribution::default(),
            split,
            seed: 5,
            ..DatagenConfig::default()
        };
        generate_dataset(dir, &shapes, &cfg, "testsha").unwrap()
    }

    fn tiny_net_config(mode: ShapeMode) -> PoseNetworkConfig {
        PoseNetworkConfig {
            shape_mode: mode,
            image_size: 16,
            conv_channels: vec![4, 8],
            point_widths: vec![8, 16],
            view_count: 4,
            head_hidden: vec![16, 8],
            ..PoseNetworkConfig::default()
        }
    }

    fn tiny_train_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            schedule: vec![SchedulePhase { lr: 1e-3, epochs }],
            seed: 1,
            checkpoint_every: 0,
            shape_mode: ShapeMode::PointCloud,
            augment: None,
            adam: AdamConfig::default(),
        }
    }

    fn uniform_graph_loss() -> (f64, Vec<BinnedPose>) {
        // Zero logits softmax to uniform; zero raw offsets tanh to zero; with
        // targets at bin centers the regression term vanishes.
        let binning = AngleBinning::default();
        let store = crate::autodiff::ParamStore::new();
        let mut g = Graph::new(&store, false);
        let counts = binning.counts();
        let n = 3;
        let logits = [0, 1, 2].map(|a| g.input(Tensor::zeros(&[n, counts[a]])));
        let offsets = [0, 1, 2].map(|a| g.input(Tensor::zeros(&[n, counts[a]])));
        let targets: Vec<BinnedPose> = (0..n)
            .map(|i| BinnedPose {
                labels: [i, i, i],
                offsets: [0.0; 3],
            })
            .collect();
        let loss = pose_loss(&mut g, &logits, &offsets, &targets, &binning).unwrap();
        (g.value(loss).data()[0], targets)
    }

    #[test]
    fn uniform_prediction_loss_matches_analytic_constant() {
        let expected = (24f64).ln() + (12f64).ln() + (24f64).ln();
        let (loss, _) = uniform_graph_loss();
        assert!(
            (loss - expected).abs() < 1e-6,
            "uniform loss {loss} differs from ln24+ln12+ln24 = {expected}"
        );

        let binning = AngleBinning::default();
        let pred = PosePrediction {
            probabilities: [vec![1.0 / 24.0; 24], vec![1.0 / 12.0; 12], vec![1.0 / 24.0; 24]],
            offsets: [vec![0.0; 24], vec![0.0; 12], vec![0.0; 24]],
        };
        let target = BinnedPose {
            labels: [5, 3, 17],
            offsets: [0.0; 3],
        };
        let value = pose_loss_value(&pred, &target, &binning).unwrap();
        assert!((value - expected).abs() < 1e-6);
    }

    #[test]
    fn concentrated_prediction_loss_vanishes() {
        let binning = AngleBinning::default();
        let spread = 1e-12 / 23.0;
        let mut probabilities = [vec![spread; 24], vec![1e-12 / 11.0; 12], vec![spread; 24]];
        let target = BinnedPose {
            labels: [7, 2, 20],
            offsets: [0.35, -0.6, 0.1],
        };
        let mut offsets = [vec![0.0; 24], vec![0.0; 12], vec![0.0; 24]];
        for a in 0..3 {
            probabilities[a][target.labels[a]] = 1.0 - 1e-12;
            offsets[a][target.labels[a]] = target.offsets[a];
        }
        let pred = PosePrediction {
            probabilities,
            offsets,
        };
        let loss = pose_loss_value(&pred, &target, &binning).unwrap();
        assert!(loss < 1e-9, "concentrated loss should vanish, got {loss}");
    }

    #[test]
    fn loss_rejects_binning_mismatch() {
        let binning = AngleBinning::default();
        let pred = PosePrediction {
            probabilities: [vec![0.5; 2], vec![1.0 / 12.0; 12], vec![1.0 / 24.0; 24]],
            offsets: [vec![0.0; 2], vec![0.0; 12], vec![0.0; 24]],
        };
        let target = BinnedPose {
            labels: [0, 0, 0],
            offsets: [0.0; 3],
        };
        assert!(pose_loss_value(&pred, &target, &binning).is_err());
    }

    #[test]
    fn offset_gradients_flow_only_through_ground_truth_bins() {
        let binning = AngleBinning::default();
        let counts = binning.counts();
        let store = crate::autodiff::ParamStore::new();
        let mut g = Graph::new(&store, false);
        let n = 2;
        let logits = [0, 1, 2].map(|a| g.input(Tensor::from_fn(&[n, counts[a]], |i| 0.01 * i as f64)));
        let raw = 0.3f64;
        let offsets = [0, 1, 2].map(|a| g.input(Tensor::from_fn(&[n, counts[a]], |_| raw)));
        let targets = vec![
            BinnedPose {
                labels: [4, 1, 9],
                offsets: [0.8, -0.5, 0.0],
            },
            BinnedPose {
                labels: [0, 11, 23],
                offsets: [-0.2, 0.4, 0.9],
            },
        ];
        let loss = pose_loss(&mut g, &logits, &offsets, &targets, &binning).unwrap();
        let grads = g.backward(loss);
        for a in 0..3 {
            let grad = grads.wrt(offsets[a]).expect("offsets reach the loss");
            for (row, target) in targets.iter().enumerate() {
                for col in 0..counts[a] {
                    let got = grad.data()[row * counts[a] + col];
                    if col == target.labels[a] {
                        // d/dx huber(tanh(x) - d) / N with the Huber slope
                        // clamped to +-delta.
                        let r = raw.tanh() - target.offsets[a];
                        let expected = r.clamp(-HUBER_DELTA, HUBER_DELTA)
                            * (1.0 - raw.tanh() * raw.tanh())
                            / n as f64;
                        assert!(
                            (got - expected).abs() < 1e-6,
                            "gt-bin offset grad {got} != huber chain {expected}"
                        );
                    } else {
                        assert_eq!(
                            got, 0.0,
                            "non-gt offset grad must be exactly zero at angle {a}, row {row}, col {col}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn schedule_lookup_and_validation() {
        let config = TrainConfig::desk();
        assert_eq!(config.total_epochs(), 60);
        assert_eq!(config.epoch_lr(0), Some(1e-3));
        assert_eq!(config.epoch_lr(29), Some(1e-3));
        assert_eq!(config.epoch_lr(30), Some(1e-4));
        assert_eq!(config.epoch_lr(59), Some(1e-4));
        assert_eq!(config.epoch_lr(60), None);

        assert!(TrainConfig { batch_size: 1, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { schedule: vec![], ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig {
            schedule: vec![SchedulePhase { lr: 0.0, epochs: 5 }],
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            schedule: vec![SchedulePhase { lr: 1e-3, epochs: 0 }],
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn loss_decreases_over_first_epochs_on_tiny_set() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path(), SplitMode::Random { val_frac: 0.0, test_frac: 0.0 });
        let mut net = PoseNetwork::build(tiny_net_config(ShapeMode::PointCloud), 7).unwrap();
        let out = tempfile::tempdir().unwrap();
        // Full-batch (6 samples), so each epoch logs the loss of a
        // deterministic Adam trajectory on one fixed batch.
        let config = TrainConfig {
            batch_size: 6,
            ..tiny_train_config(5)
        };
        let outcome = train(&mut net, &ds, &config, out.path(), "testsha").unwrap();
        assert_eq!(outcome.epochs_run, 5);
        let losses: Vec<f64> = outcome.history.iter().map(|r| r.mean_loss).collect();
        for pair in losses.windows(2) {
            assert!(
                pair[1] < pair[0],
                "loss should decrease across early epochs, got {losses:?}"
            );
        }
        assert!(outcome.final_checkpoint.is_file());
        assert!(outcome.history.iter().all(|r| r.val_acc_pi6.is_none()));
    }

    #[test]
    fn log_records_have_the_documented_shape() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path(), SplitMode::Random { val_frac: 0.0, test_frac: 0.0 });
        let mut net = PoseNetwork::build(tiny_net_config(ShapeMode::PointCloud), 7).unwrap();
        let out = tempfile::tempdir().unwrap();
        let outcome = train(&mut net, &ds, &tiny_train_config(1), out.path(), "testsha").unwrap();
        let text = fs::read_to_string(&outcome.log_path).unwrap();
        let line = text.lines().next().unwrap();
        let value: serde_json::Value = serde_json::from_str(line).unwrap();
        let obj = value.as_object().unwrap();
        let mut keys: Vec<&str> = obj.keys().map(|k| k.as_str()).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            vec!["epoch", "lr", "mean_loss", "val_acc_pi6", "val_mederr", "wall_ms"]
        );
        assert_eq!(obj["epoch"], 1);
        assert!(obj["val_acc_pi6"].is_null());
    }

    #[test]
    fn augmented_training_steps_run_in_both_modes() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path(), SplitMode::Random { val_frac: 0.0, test_frac: 0.0 });
        for mode in [ShapeMode::PointCloud, ShapeMode::MultiView] {
            let mut net = PoseNetwork::build(tiny_net_config(mode), 9).unwrap();
            let out = tempfile::tempdir().unwrap();
            let config = TrainConfig {
                shape_mode: mode,
                augment: Some(AugmentPolicy::default()),
                ..tiny_train_config(1)
            };
            let outcome = train(&mut net, &ds, &config, out.path(), "testsha").unwrap();
            assert!(outcome.history[0].mean_loss.is_finite());
        }
    }

    #[test]
    fn training_is_deterministic_and_resume_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path(), SplitMode::Random { val_frac: 0.0, test_frac: 0.0 });
        let config = TrainConfig {
            checkpoint_every: 1,
            schedule: vec![
                SchedulePhase { lr: 1e-3, epochs: 2 },
                SchedulePhase { lr: 5e-4, epochs: 2 },
            ],
            ..tiny_train_config(1)
        };

        let out_a = tempfile::tempdir().unwrap();
        let mut net_a = PoseNetwork::build(tiny_net_config(ShapeMode::PointCloud), 11).unwrap();
        let full = train(&mut net_a, &ds, &config, out_a.path(), "testsha").unwrap();

        // A second fresh run is bit-identical.
        let out_b = tempfile::tempdir().unwrap();
        let mut net_b = PoseNetwork::build(tiny_net_config(ShapeMode::PointCloud), 11).unwrap();
        let again = train(&mut net_b, &ds, &config, out_b.path(), "testsha").unwrap();
        assert_eq!(
            fs::read(&full.final_checkpoint).unwrap(),
            fs::read(&again.final_checkpoint).unwrap()
        );
        for (x, y) in full.history.iter().zip(&again.history) {
            assert_eq!(x.mean_loss.to_bits(), y.mean_loss.to_bits());
            assert_eq!(x.lr, y.lr);
        }

        // Resuming from the epoch-2 checkpoint reproduces epochs 3 and 4.
        let out_c = tempfile::tempdir().unwrap();
        let resumed = resume_train(
            &out_a.path().join(epoch_ckpt_name(2)),
            &ds,
            &config,
            out_c.path(),
            "testsha",
        )
        .unwrap();
        assert_eq!(resumed.epochs_run, 2);
        for (x, y) in resumed.history.iter().zip(&full.history[2..]) {
            assert_eq!(x.epoch, y.epoch);
            assert_eq!(x.mean_loss.to_bits(), y.mean_loss.to_bits());
        }
        assert_eq!(
            fs::read(&full.final_checkpoint).unwrap(),
            fs::read(&resumed.final_checkpoint).unwrap()
        );

        // A different training config is rejected at resume time.
        let other = TrainConfig { seed: 99, ..config.clone() };
        assert!(resume_train(
            &out_a.path().join(epoch_ckpt_name(2)),
            &ds,
            &other,
            out_c.path(),
            "testsha"
        )
        .is_err());
        // So is a different dataset/config hash.
        assert!(resume_train(
            &out_a.path().join(epoch_ckpt_name(2)),
            &ds,
            &config,
            out_c.path(),
            "othersha"
        )
        .is_err());
    }

    #[test]
    fn evaluation_reports_are_sorted_audited_and_side_effect_free() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path(), SplitMode::Random { val_frac: 0.0, test_frac: 0.0 });
        let net = PoseNetwork::build(tiny_net_config(ShapeMode::PointCloud), 13).unwrap();

        let before: Vec<Vec<u64>> = net
            .store
            .iter()
            .map(|(_, p)| p.value.data().iter().map(|v| v.to_bits()).collect())
            .collect();
        let report = evaluate(&net, &ds, Split::Train).unwrap();
        let after: Vec<Vec<u64>> = net
            .store
            .iter()
            .map(|(_, p)| p.value.data().iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(before, after, "evaluation must not touch any parameter");

        assert_eq!(report.count, 6);
        for pair in report.per_sample.windows(2) {
            assert!(pair[0].sample_id < pair[1].sample_id);
        }
        report.audit().unwrap();

        let path = dir.path().join("report.json");
        report.save(&path).unwrap();
        let loaded = EvalReport::load(&path).unwrap();
        assert_eq!(loaded, report);

        // A tampered aggregate fails the audit on load.
        let mut tampered: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        tampered["aggregate"]["acc_pi6"] = serde_json::json!(0.123456);
        fs::write(&path, serde_json::to_string(&tampered).unwrap()).unwrap();
        assert!(EvalReport::load(&path).is_err());

        assert!(evaluate(&net, &ds, Split::Val).is_err(), "empty split must error");
    }

    #[test]
    fn known_error_injections_score_as_expected() {
        // Ground truth against itself: perfect scores.
        let poses: Vec<(String, EulerPose)> = (0..4)
            .map(|i| {
                (
                    format!("s{i}"),
                    EulerPose::from_degrees(30.0 * i as f64 - 45.0, 10.0 + 5.0 * i as f64, 3.0)
                        .unwrap(),
                )
            })
            .collect();
        let identity: Vec<EvalRecord> = poses
            .iter()
            .map(|(id, p)| EvalRecord {
                sample_id: id.clone(),
                error_deg: geodesic_distance(&p.to_matrix(), &p.to_matrix()).to_degrees(),
                add_frac: None,
            })
            .collect();
        let report = EvalReport::from_records("test", identity).unwrap();
        assert_eq!(report.aggregate.acc_pi6, 1.0);
        // Not exactly zero: the trace of R^T R accumulates to 1 - epsilon.
        assert!(report.aggregate.mederr_deg < 1e-5);

        // A fixed 40-degree azimuth error at zero elevation is a 40-degree
        // geodesic error: nothing clears the 30-degree bar.
        let shifted: Vec<EvalRecord> = (0..4)
            .map(|i| {
                let gt = EulerPose::from_degrees(50.0 * i as f64 - 100.0, 0.0, 0.0).unwrap();
                let pred = gt.shift_azimuth((-40f64).to_radians());
                let err = geodesic_distance(&pred.to_matrix(), &gt.to_matrix()).to_degrees();
                assert!((err - 40.0).abs() < 1e-9, "pure azimuth error should be 40, got {err}");
                EvalRecord {
                    sample_id: format!("s{i}"),
                    error_deg: err,
                    add_frac: None,
                }
            })
            .collect();
        let report = EvalReport::from_records("test", shifted).unwrap();
        assert_eq!(report.aggregate.acc_pi6, 0.0);
    }

    #[test]
    fn reports_with_distance_errors_aggregate_and_audit() {
        let make = |fracs: &[Option<f64>]| -> Vec<EvalRecord> {
            fracs
                .iter()
                .enumerate()
                .map(|(i, f)| EvalRecord {
                    sample_id: format!("s{i}"),
                    error_deg: 5.0,
                    add_frac: *f,
                })
                .collect()
        };

        // 0.05 and 0.1 against the strict 0.1 bar: exactly half clear it.
        let report = EvalReport::from_records(
            "test",
            make(&[Some(0.05), Some(0.1), Some(0.25), Some(0.075)]),
        )
        .unwrap();
        assert_eq!(report.aggregate.add_accuracy, Some(0.5));
        report.audit().unwrap();

        // Round trip keeps the optional fields and the config stamp.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        report.clone().with_config_sha256("abc").save(&path).unwrap();
        let loaded = EvalReport::load(&path).unwrap();
        assert_eq!(loaded.config_sha256.as_deref(), Some("abc"));
        assert_eq!(loaded.aggregate, report.aggregate);

        // Reports without distance errors serialize without the keys at all.
        let plain = EvalReport::from_records("test", make(&[None, None])).unwrap();
        let json = serde_json::to_string(&plain).unwrap();
        assert!(!json.contains("add_frac") && !json.contains("add_accuracy"));
        assert!(!json.contains("config_sha256"));

        // Mixed presence is rejected.
        assert!(EvalReport::from_records("test", make(&[Some(0.1), None])).is_err());
    }

    #[test]
    fn train_rejects_incompatible_setups() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path(), SplitMode::Random { val_frac: 0.0, test_frac: 0.0 });
        let out = tempfile::tempdir().unwrap();

        // Mode mismatch between config and network.
        let mut net = PoseNetwork::build(tiny_net_config(ShapeMode::PointCloud), 3).unwrap();
        let bad_mode = TrainConfig {
            shape_mode: ShapeMode::MultiView,
            ..tiny_train_config(1)
        };
        assert!(train(&mut net, &ds, &bad_mode, out.path(), "testsha").is_err());

        // Image-size mismatch between dataset and network.
        let mut big = PoseNetwork::build(
            PoseNetworkConfig {
                image_size: 32,
                ..tiny_net_config(ShapeMode::PointCloud)
            },
            3,
        )
        .unwrap();
        assert!(train(&mut big, &ds, &tiny_train_config(1), out.path(), "testsha").is_err());

        // View-count mismatch in multi-view mode.
        let mut mv = PoseNetwork::build(
            PoseNetworkConfig {
                view_count: 12,
                ..tiny_net_config(ShapeMode::MultiView)
            },
            3,
        )
        .unwrap();
        let mv_cfg = TrainConfig {
            shape_mode: ShapeMode::MultiView,
            ..tiny_train_config(1)
        };
        assert!(train(&mut mv, &ds, &mv_cfg, out.path(), "testsha").is_err());
    }
}
