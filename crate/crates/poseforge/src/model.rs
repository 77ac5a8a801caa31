//! The pose network: image encoder, shape encoder (point cloud or rendered
//! multi-view), and the classification-plus-regression orientation head.
//!
//! The head emits `2 × (L_azi + L_ele + L_inp)` values per sample: one logit
//! block and one offset block per angle. Training reads the offset at the
//! ground-truth bin; prediction reads it at the argmax bin.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    load_checkpoint, save_checkpoint, Graph, NodeId, ParamId, ParamStore, Tensor,
};
use crate::error::{Error, Result};
use crate::render::{Image, ViewSet, MIN_DIM};
use crate::rot::{AngleBinning, BinnedPose, EulerPose};
use crate::shape::PointCloud;

const BN_MOMENTUM: f64 = 0.9;
const BN_EPS: f64 = 1e-5;

/// Which shape representation the network consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeMode {
    PointCloud,
    MultiView,
}

impl std::fmt::Display for ShapeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ShapeMode::PointCloud => "point_cloud",
            ShapeMode::MultiView => "multi_view",
        })
    }
}

/// Architecture hyperparameters. The defaults give a 4-block stride-2 CNN
/// with a 128-dim image feature, a 3-64-128-256 point encoder, a 12-view
/// shared-weight view encoder, and the 800-400-200 head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseNetworkConfig {
    pub shape_mode: ShapeMode,
    pub binning: AngleBinning,
    /// Query images (and rendered views) are square with this side length.
    pub image_size: usize,
    pub image_channels: usize,
    /// Output channels of each stride-2 conv block; the last is the image
    /// feature dimension.
    pub conv_channels: Vec<usize>,
    /// Per-point MLP widths; the last is the point feature dimension.
    pub point_widths: Vec<usize>,
    /// Number of rendered views consumed in multi-view mode.
    pub view_count: usize,
    pub head_hidden: Vec<usize>,
}

impl Default for PoseNetworkConfig {
    fn default() -> Self {
        PoseNetworkConfig {
            shape_mode: ShapeMode::PointCloud,
            binning: AngleBinning::default(),
            image_size: 64,
            image_channels: 3,
            conv_channels: vec![16, 32, 64, 128],
            point_widths: vec![64, 128, 256],
            view_count: 12,
            head_hidden: vec![800, 400, 200],
        }
    }
}

impl PoseNetworkConfig {
    pub fn image_feature_dim(&self) -> usize {
        *self.conv_channels.last().unwrap_or(&0)
    }

    pub fn shape_feature_dim(&self) -> usize {
        match self.shape_mode {
            ShapeMode::PointCloud => *self.point_widths.last().unwrap_or(&0),
            ShapeMode::MultiView => self.view_count * self.image_feature_dim(),
        }
    }

    pub fn head_input_dim(&self) -> usize {
        self.image_feature_dim() + self.shape_feature_dim()
    }

    pub fn head_output_dim(&self) -> usize {
        2 * self.binning.total()
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(Error::invalid("conv_channels must be non-empty and positive"));
        }
        if self.head_hidden.is_empty() || self.head_hidden.contains(&0) {
            return Err(Error::invalid("head_hidden must be non-empty and positive"));
        }
        match self.shape_mode {
            ShapeMode::PointCloud => {
                if self.point_widths.is_empty() || self.point_widths.contains(&0) {
                    return Err(Error::invalid(
                        "point_widths must be non-empty and positive in point-cloud mode",
                    ));
                }
            }
            ShapeMode::MultiView => {
                if self.view_count == 0 {
                    return Err(Error::invalid("view_count must be positive in multi-view mode"));
                }
            }
        }
        if self.image_size < MIN_DIM {
            return Err(Error::invalid(format!(
                "image_size must be at least {MIN_DIM}, got {}",
                self.image_size
            )));
        }
        if self.image_channels == 0 {
            return Err(Error::invalid("image_channels must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvBlock {
    w: ParamId,
    gamma: ParamId,
    beta: ParamId,
    rm: ParamId,
    rv: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: Option<ParamId>,
}

#[derive(Debug, Clone, Copy)]
struct BnIds {
    gamma: ParamId,
    beta: ParamId,
    rm: ParamId,
    rv: ParamId,
}

#[derive(Debug)]
struct Layers {
    image: Vec<ConvBlock>,
    points: Vec<Linear>,
    views: Vec<ConvBlock>,
    head: Vec<(Linear, BnIds)>,
    out: Linear,
}

enum ParamKind {
    /// Uniform Kaiming-style init with the given fan-in.
    Weight { fan_in: usize },
    Ones,
    Zeros,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    fn trainable(&self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

/// Declares every parameter of the architecture in a fixed order. Both fresh
/// initialization and checkpoint attachment run through this single path, so
/// names and shapes cannot drift between the two.
fn wire(
    config: &PoseNetworkConfig,
    mut alloc: impl FnMut(String, Vec<usize>, ParamKind) -> Result<ParamId>,
) -> Result<Layers> {
    let conv_stack = |prefix: &str, alloc: &mut dyn FnMut(String, Vec<usize>, ParamKind) -> Result<ParamId>|
     -> Result<Vec<ConvBlock>> {
        let mut blocks = Vec::new();
        let mut cin = config.image_channels;
        for (i, &cout) in config.conv_channels.iter().enumerate() {
            let w = alloc(
                format!("{prefix}.block{i}.conv.weight"),
                vec![cout, cin, 3, 3],
                ParamKind::Weight { fan_in: cin * 9 },
            )?;
            let gamma = alloc(format!("{prefix}.block{i}.bn.gamma"), vec![cout], ParamKind::Ones)?;
            let beta = alloc(format!("{prefix}.block{i}.bn.beta"), vec![cout], ParamKind::Zeros)?;
            let rm = alloc(
                format!("{prefix}.block{i}.bn.running_mean"),
                vec![cout],
                ParamKind::RunningMean,
            )?;
            let rv = alloc(
                format!("{prefix}.block{i}.bn.running_var"),
                vec![cout],
                ParamKind::RunningVar,
            )?;
            blocks.push(ConvBlock { w, gamma, beta, rm, rv });
            cin = cout;
        }
        Ok(blocks)
    };

    let image = conv_stack("image", &mut alloc)?;
    let mut points = Vec::new();
    let mut views = Vec::new();
    match config.shape_mode {
        ShapeMode::PointCloud => {
            let mut fan_in = 3;
            for (i, &width) in config.point_widths.iter().enumerate() {
                let w = alloc(
                    format!("points.lin{i}.weight"),
                    vec![fan_in, width],
                    ParamKind::Weight { fan_in },
                )?;
                let b = alloc(format!("points.lin{i}.bias"), vec![width], ParamKind::Zeros)?;
                points.push(Linear { w, b: Some(b) });
                fan_in = width;
            }
        }
        ShapeMode::MultiView => {
            views = conv_stack("views", &mut alloc)?;
        }
    }

    let mut head = Vec::new();
    let mut fan_in = config.head_input_dim();
    for (i, &width) in config.head_hidden.iter().enumerate() {
        let w = alloc(
            format!("head.lin{i}.weight"),
            vec![fan_in, width],
            ParamKind::Weight { fan_in },
        )?;
        let gamma = alloc(format!("head.bn{i}.gamma"), vec![width], ParamKind::Ones)?;
        let beta = alloc(format!("head.bn{i}.beta"), vec![width], ParamKind::Zeros)?;
        let rm = alloc(format!("head.bn{i}.running_mean"), vec![width], ParamKind::RunningMean)?;
        let rv = alloc(format!("head.bn{i}.running_var"), vec![width], ParamKind::RunningVar)?;
        head.push((Linear { w, b: None }, BnIds { gamma, beta, rm, rv }));
        fan_in = width;
    }
    let out_w = alloc(
        "head.out.weight".to_string(),
        vec![fan_in, config.head_output_dim()],
        ParamKind::Weight { fan_in },
    )?;
    let out_b = alloc(
        "head.out.bias".to_string(),
        vec![config.head_output_dim()],
        ParamKind::Zeros,
    )?;

    Ok(Layers {
        image,
        points,
        views,
        head,
        out: Linear { w: out_w, b: Some(out_b) },
    })
}

/// The composed differentiable model plus its parameter store.
#[derive(Debug)]
pub struct PoseNetwork {
    config: PoseNetworkConfig,
    pub store: ParamStore,
    layers: Layers,
}

impl PoseNetwork {
    /// Builds a freshly initialized network. The same seed gives bit-identical
    /// parameters.
    pub fn build(config: PoseNetworkConfig, seed: u64) -> Result<PoseNetwork> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let layers = wire(&config, |name, shape, kind| {
            let value = match kind {
                ParamKind::Weight { fan_in } => {
                    let bound = (6.0 / fan_in as f64).sqrt();
                    Tensor::from_fn(&shape, |_| rng.gen_range(-bound..bound))
                }
                ParamKind::Ones | ParamKind::RunningVar => Tensor::from_fn(&shape, |_| 1.0),
                ParamKind::Zeros | ParamKind::RunningMean => Tensor::zeros(&shape),
            };
            Ok(store.add(name, value, kind.trainable()))
        })?;
        Ok(PoseNetwork { config, store, layers })
    }

    /// Attaches an existing parameter store (typically from a checkpoint),
    /// verifying that every expected parameter is present with the right
    /// shape and that the store holds nothing else.
    pub fn from_store(config: PoseNetworkConfig, store: ParamStore) -> Result<PoseNetwork> {
        config.validate()?;
        let mut seen = 0usize;
        let layers = wire(&config, |name, shape, kind| {
            let id = store
                .by_name(&name)
                .ok_or_else(|| Error::invalid(format!("checkpoint is missing parameter '{name}'")))?;
            let p = store.get(id);
            if p.value.shape() != shape {
                return Err(Error::invalid(format!(
                    "parameter '{name}' has shape {:?}, expected {shape:?}",
                    p.value.shape()
                )));
            }
            if p.trainable != kind.trainable() {
                return Err(Error::invalid(format!(
                    "parameter '{name}' trainable flag does not match the architecture"
                )));
            }
            seen += 1;
            Ok(id)
        })?;
        if seen != store.len() {
            return Err(Error::invalid(format!(
                "checkpoint holds {} parameters, architecture defines {seen}",
                store.len()
            )));
        }
        Ok(PoseNetwork { config, store, layers })
    }

    /// Loads a checkpoint whose manifest `meta.model` embeds the network
    /// config, returning the network and the full meta value.
    pub fn from_checkpoint(path: &Path) -> Result<(PoseNetwork, serde_json::Value)> {
        let (store, meta) = load_checkpoint(path)?;
        let cfg_value = meta
            .get("model")
            .cloned()
            .ok_or_else(|| Error::format(path, "checkpoint meta lacks a 'model' config"))?;
        let config: PoseNetworkConfig = serde_json::from_value(cfg_value)
            .map_err(|e| Error::format(path, format!("bad model config in checkpoint: {e}")))?;
        let net = PoseNetwork::from_store(config, store)?;
        Ok((net, meta))
    }

    /// Saves parameters plus `extra_meta` (must be a JSON object); the network
    /// config is stored under the reserved `model` key, making the file
    /// self-describing.
    pub fn save(&self, path: &Path, extra_meta: serde_json::Value) -> Result<()> {
        let mut meta = match extra_meta {
            serde_json::Value::Object(map) => map,
            other => {
                return Err(Error::invalid(format!(
                    "checkpoint meta must be a JSON object, got {other}"
                )))
            }
        };
        meta.insert(
            "model".to_string(),
            serde_json::to_value(&self.config).expect("config serializes"),
        );
        save_checkpoint(path, &self.store, &serde_json::Value::Object(meta))
    }

    pub fn config(&self) -> &PoseNetworkConfig {
        &self.config
    }

    fn encode_images(&self, g: &mut Graph, x: NodeId, blocks: &[ConvBlock]) -> NodeId {
        let mut cur = x;
        for b in blocks {
            let w = g.param(b.w);
            cur = g.conv2d(cur, w, 2, 1);
            let gamma = g.param(b.gamma);
            let beta = g.param(b.beta);
            cur = g.batchnorm(cur, gamma, beta, b.rm, b.rv, BN_MOMENTUM, BN_EPS);
            cur = g.relu(cur);
        }
        g.global_avg_pool2d(cur)
    }

    fn encode_points(&self, g: &mut Graph, points: NodeId) -> NodeId {
        let shape = g.value(points).shape().to_vec();
        assert!(
            shape.len() == 3 && shape[2] == 3,
            "point input must be [N, P, 3], got {shape:?}"
        );
        let (n, p) = (shape[0], shape[1]);
        let mut cur = g.reshape(points, &[n * p, 3]);
        for lin in &self.layers.points {
            let w = g.param(lin.w);
            cur = g.matmul(cur, w);
            if let Some(b) = lin.b {
                let bias = g.param(b);
                cur = g.add_bias(cur, bias);
            }
            cur = g.relu(cur);
        }
        let width = *self.config.point_widths.last().unwrap();
        let per_point = g.reshape(cur, &[n, p, width]);
        g.global_max_pool(per_point)
    }

    fn head_forward(&self, g: &mut Graph, fused: NodeId) -> NodeId {
        let mut cur = fused;
        for (lin, bn) in &self.layers.head {
            let w = g.param(lin.w);
            cur = g.matmul(cur, w);
            let gamma = g.param(bn.gamma);
            let beta = g.param(bn.beta);
            cur = g.batchnorm(cur, gamma, beta, bn.rm, bn.rv, BN_MOMENTUM, BN_EPS);
            cur = g.relu(cur);
        }
        let w = g.param(self.layers.out.w);
        cur = g.matmul(cur, w);
        let b = g.param(self.layers.out.b.expect("output layer has a bias"));
        g.add_bias(cur, b)
    }

    /// Point-cloud-mode forward: images `[N, C, H, W]`, points `[N, P, 3]`;
    /// returns the raw head output `[N, 2ΣL]`.
    pub fn forward_with_points(&self, g: &mut Graph, images: NodeId, points: NodeId) -> NodeId {
        assert_eq!(
            self.config.shape_mode,
            ShapeMode::PointCloud,
            "network was built in multi-view mode"
        );
        let img_feat = self.encode_images(g, images, &self.layers.image);
        let pt_feat = self.encode_points(g, points);
        let fused = g.concat(&[img_feat, pt_feat]);
        self.head_forward(g, fused)
    }

    /// Multi-view-mode forward: images `[N, C, H, W]`, views `[N·K, C, H, W]`
    /// in canonical view order per sample; returns `[N, 2ΣL]`.
    pub fn forward_with_views(&self, g: &mut Graph, images: NodeId, views: NodeId) -> NodeId {
        assert_eq!(
            self.config.shape_mode,
            ShapeMode::MultiView,
            "network was built in point-cloud mode"
        );
        let n = g.value(images).dim(0);
        let k = self.config.view_count;
        assert_eq!(
            g.value(views).dim(0),
            n * k,
            "expected {n} x {k} stacked views, got {}",
            g.value(views).dim(0)
        );
        let img_feat = self.encode_images(g, images, &self.layers.image);
        let view_feat = self.encode_images(g, views, &self.layers.views);
        let per_sample = g.reshape(view_feat, &[n, k * self.config.image_feature_dim()]);
        let fused = g.concat(&[img_feat, per_sample]);
        self.head_forward(g, fused)
    }

    /// Splits the raw head output into per-angle logit and offset nodes, in
    /// (azimuth, elevation, in-plane) order.
    pub fn split_output(&self, g: &mut Graph, out: NodeId) -> ([NodeId; 3], [NodeId; 3]) {
        let counts = self.config.binning.counts();
        let total: usize = counts.iter().sum();
        let mut start = 0;
        let logits = counts.map(|l| {
            let s = g.slice_cols(out, start, l);
            start += l;
            s
        });
        let mut start = total;
        let offsets = counts.map(|l| {
            let s = g.slice_cols(out, start, l);
            start += l;
            s
        });
        (logits, offsets)
    }

    /// Eval-mode single-sample prediction.
    pub fn predict(&self, image: &Image, shape: ShapeInput) -> Result<PosePrediction> {
        let c = self.config.image_channels;
        let s = self.config.image_size;
        if image.channels() != c || image.height() != s || image.width() != s {
            return Err(Error::invalid(format!(
                "image is {}x{}x{}, network expects {c}x{s}x{s}",
                image.channels(),
                image.height(),
                image.width()
            )));
        }
        let mut g = Graph::new(&self.store, false);
        let img = g.input(images_to_tensor(&[image])?);
        let out = match (self.config.shape_mode, shape) {
            (ShapeMode::PointCloud, ShapeInput::Points(cloud)) => {
                if cloud.is_empty() {
                    return Err(Error::invalid("point cloud is empty"));
                }
                let pts = g.input(points_to_tensor(&[cloud])?);
                self.forward_with_points(&mut g, img, pts)
            }
            (ShapeMode::MultiView, ShapeInput::Views(set)) => {
                if set.images.len() != self.config.view_count {
                    return Err(Error::invalid(format!(
                        "view set has {} views, network expects {}",
                        set.images.len(),
                        self.config.view_count
                    )));
                }
                for v in &set.images {
                    if v.channels() != c || v.height() != s || v.width() != s {
                        return Err(Error::invalid(format!(
                            "rendered view is {}x{}x{}, network expects {c}x{s}x{s}",
                            v.channels(),
                            v.height(),
                            v.width()
                        )));
                    }
                }
                let views = g.input(views_to_tensor(&[set])?);
                self.forward_with_views(&mut g, img, views)
            }
            (mode, _) => {
                return Err(Error::invalid(format!(
                    "shape input does not match network mode {mode}"
                )))
            }
        };
        let (logit_blocks, offset_blocks) = self.split_output(&mut g, out);
        let mut probabilities: [Vec<f64>; 3] = Default::default();
        let mut offsets: [Vec<f64>; 3] = Default::default();
        for a in 0..3 {
            let p = g.softmax(logit_blocks[a]);
            let o = g.tanh(offset_blocks[a]);
            probabilities[a] = g.value(p).data().to_vec();
            offsets[a] = g.value(o).data().to_vec();
        }
        Ok(PosePrediction { probabilities, offsets })
    }
}

/// Shape-side input to [`PoseNetwork::predict`].
pub enum ShapeInput<'a> {
    Points(&'a PointCloud),
    Views(&'a ViewSet),
}

/// Per-angle bin probabilities and tanh-squashed offsets, in (azimuth,
/// elevation, in-plane) order.
#[derive(Debug, Clone, Serialize)]
pub struct PosePrediction {
    pub probabilities: [Vec<f64>; 3],
    pub offsets: [Vec<f64>; 3],
}

impl PosePrediction {
    /// Argmax bin per angle (ties to the lowest index) combined with that
    /// bin's offset, decoded to Euler angles.
    pub fn decode(&self, binning: &AngleBinning) -> EulerPose {
        let mut labels = [0usize; 3];
        let mut offsets = [0f64; 3];
        for a in 0..3 {
            let probs = &self.probabilities[a];
            let mut best = 0;
            for (i, &p) in probs.iter().enumerate() {
                if p > probs[best] {
                    best = i;
                }
            }
            labels[a] = best;
            offsets[a] = self.offsets[a][best];
        }
        binning.decode(&BinnedPose { labels, offsets })
    }
}

/// Stacks images into a `[N, C, H, W]` tensor; all images must agree on
/// dimensions.
pub fn images_to_tensor(images: &[&Image]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("image batch is empty"))?;
    let (c, h, w) = (first.channels(), first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        if img.channels() != c || img.height() != h || img.width() != w {
            return Err(Error::invalid(format!(
                "image batch mixes {}x{}x{} with {c}x{h}x{w}",
                img.channels(),
                img.height(),
                img.width()
            )));
        }
        data.extend(img.data().iter().map(|&v| v as f64));
    }
    Ok(Tensor::from_vec(&[images.len(), c, h, w], data))
}

/// Stacks point clouds into a `[N, P, 3]` tensor; all clouds must have the
/// same point count.
pub fn points_to_tensor(clouds: &[&PointCloud]) -> Result<Tensor> {
    let first = clouds
        .first()
        .ok_or_else(|| Error::invalid("point-cloud batch is empty"))?;
    let p = first.len();
    if p == 0 {
        return Err(Error::invalid("point cloud is empty"));
    }
    let mut data = Vec::with_capacity(clouds.len() * p * 3);
    for cloud in clouds {
        if cloud.len() != p {
            return Err(Error::invalid(format!(
                "point-cloud batch mixes counts {} and {p}",
                cloud.len()
            )));
        }
        for point in cloud.points() {
            data.extend_from_slice(point);
        }
    }
    Ok(Tensor::from_vec(&[clouds.len(), p, 3], data))
}

/// Stacks view sets into a `[N·K, C, H, W]` tensor in canonical view order;
/// all sets must share the view count and image dimensions.
pub fn views_to_tensor(sets: &[&ViewSet]) -> Result<Tensor> {
    let first = sets
        .first()
        .ok_or_else(|| Error::invalid("view-set batch is empty"))?;
    let k = first.images.len();
    if k == 0 {
        return Err(Error::invalid("view set is empty"));
    }
    let mut refs: Vec<&Image> = Vec::with_capacity(sets.len() * k);
    for set in sets {
        if set.images.len() != k {
            return Err(Error::invalid(format!(
                "view-set batch mixes view counts {} and {k}",
                set.images.len()
            )));
        }
        refs.extend(set.images.iter());
    }
    images_to_tensor(&refs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{place_cameras, render_view_set, RenderOptions, DEFAULT_DISTANCE};
    use crate::shape::TriangleMesh;

    /// A config small enough to run forward passes in unit tests.
    fn tiny_config(mode: ShapeMode) -> PoseNetworkConfig {
        PoseNetworkConfig {
            shape_mode: mode,
            binning: AngleBinning::new(8, 4, 8).unwrap(),
            image_size: 16,
            image_channels: 3,
            conv_channels: vec![4, 8],
            point_widths: vec![8, 16],
            view_count: 2,
            head_hidden: vec![24, 16],
        }
    }

    fn test_image(size: usize, seed: u64) -> Image {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..3 * size * size).map(|_| rng.gen_range(0.0..1.0)).collect();
        Image::from_data(3, size, size, data).unwrap()
    }

    fn test_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let pts: Vec<[f64; 3]> = (0..n)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        PointCloud::new(pts).unwrap()
    }

    fn unit_cube() -> TriangleMesh {
        let m = TriangleMesh::new(
            vec![
                [-1.0, -1.0, -1.0],
                [1.0, -1.0, -1.0],
                [1.0, 1.0, -1.0],
                [-1.0, 1.0, -1.0],
                [-1.0, -1.0, 1.0],
                [1.0, -1.0, 1.0],
                [1.0, 1.0, 1.0],
                [-1.0, 1.0, 1.0],
            ],
            vec![
                [0, 2, 1],
                [0, 3, 2],
                [4, 5, 6],
                [4, 6, 7],
                [0, 1, 5],
                [0, 5, 4],
                [2, 3, 7],
                [2, 7, 6],
                [1, 2, 6],
                [1, 6, 5],
                [3, 0, 4],
                [3, 4, 7],
            ],
        )
        .unwrap();
        m.normalize().unwrap()
    }

    fn tiny_views(seed: u64) -> ViewSet {
        let mesh = unit_cube();
        // Two distinct elevations so the two views render differently.
        let cameras = place_cameras(1, &[0.0, 0.5], DEFAULT_DISTANCE).unwrap();
        let opts = RenderOptions {
            width: 16,
            height: 16,
            ..RenderOptions::default()
        };
        let _ = seed;
        render_view_set(&mesh, &cameras, &opts).unwrap()
    }

    #[test]
    fn default_multi_view_head_input_is_1664() {
        let cfg = PoseNetworkConfig {
            shape_mode: ShapeMode::MultiView,
            ..PoseNetworkConfig::default()
        };
        assert_eq!(cfg.head_input_dim(), 128 + 12 * 128);
        assert_eq!(cfg.head_output_dim(), 120);
        let net = PoseNetwork::build(cfg, 0).unwrap();
        let id = net.store.by_name("head.lin0.weight").unwrap();
        assert_eq!(net.store.get(id).value.shape(), &[1664, 800]);
        let out = net.store.by_name("head.out.weight").unwrap();
        assert_eq!(net.store.get(out).value.shape(), &[200, 120]);
    }

    #[test]
    fn default_point_cloud_dims() {
        let cfg = PoseNetworkConfig::default();
        assert_eq!(cfg.head_input_dim(), 128 + 256);
        let net = PoseNetwork::build(cfg, 0).unwrap();
        let id = net.store.by_name("points.lin2.weight").unwrap();
        assert_eq!(net.store.get(id).value.shape(), &[128, 256]);
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let a = PoseNetwork::build(tiny_config(ShapeMode::PointCloud), 9).unwrap();
        let b = PoseNetwork::build(tiny_config(ShapeMode::PointCloud), 9).unwrap();
        assert_eq!(a.store.len(), b.store.len());
        for ((_, pa), (_, pb)) in a.store.iter().zip(b.store.iter()) {
            assert_eq!(pa.name, pb.name);
            for (x, y) in pa.value.data().iter().zip(pb.value.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let c = PoseNetwork::build(tiny_config(ShapeMode::PointCloud), 10).unwrap();
        let wa = a.store.get(a.store.by_name("head.out.weight").unwrap());
        let wc = c.store.get(c.store.by_name("head.out.weight").unwrap());
        assert_ne!(wa.value.data(), wc.value.data());
    }

    #[test]
    fn predict_satisfies_output_contracts() {
        let net = PoseNetwork::build(tiny_config(ShapeMode::PointCloud), 3).unwrap();
        let image = test_image(16, 0);
        let cloud = test_cloud(40, 1);
        let pred = net.predict(&image, ShapeInput::Points(&cloud)).unwrap();
        let counts = net.config().binning.counts();
        for (a, &count) in counts.iter().enumerate() {
            assert_eq!(pred.probabilities[a].len(), count);
            assert_eq!(pred.offsets[a].len(), count);
            let sum: f64 = pred.probabilities[a].iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "probabilities sum to {sum}");
            assert!(pred.offsets[a].iter().all(|o| (-1.0..=1.0).contains(o)));
        }
    }

    #[test]
    fn point_cloud_mode_is_permutation_invariant() {
        let net = PoseNetwork::build(tiny_config(ShapeMode::PointCloud), 3).unwrap();
        let image = test_image(16, 0);
        let cloud = test_cloud(40, 1);
        let mut reversed: Vec<[f64; 3]> = cloud.points().to_vec();
        reversed.reverse();
        let permuted = PointCloud::new(reversed).unwrap();
        let a = net.predict(&image, ShapeInput::Points(&cloud)).unwrap();
        let b = net.predict(&image, ShapeInput::Points(&permuted)).unwrap();
        for axis in 0..3 {
            for (x, y) in a.probabilities[axis].iter().zip(&b.probabilities[axis]) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in a.offsets[axis].iter().zip(&b.offsets[axis]) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn multi_view_mode_depends_on_view_order() {
        let net = PoseNetwork::build(tiny_config(ShapeMode::MultiView), 3).unwrap();
        let image = test_image(16, 0);
        let views = tiny_views(0);
        let mut swapped = ViewSet {
            cameras: views.cameras.clone(),
            images: views.images.clone(),
        };
        swapped.images.reverse();
        swapped.cameras.reverse();
        let a = net.predict(&image, ShapeInput::Views(&views)).unwrap();
        let b = net.predict(&image, ShapeInput::Views(&swapped)).unwrap();
        let differs = a.probabilities[0]
            .iter()
            .zip(&b.probabilities[0])
            .any(|(x, y)| x != y);
        assert!(differs, "view order must matter in multi-view mode");
    }

    #[test]
    fn eval_predict_is_bit_deterministic() {
        let net = PoseNetwork::build(tiny_config(ShapeMode::PointCloud), 5).unwrap();
        let image = test_image(16, 2);
        let cloud = test_cloud(25, 3);
        let a = net.predict(&image, ShapeInput::Points(&cloud)).unwrap();
        let b = net.predict(&image, ShapeInput::Points(&cloud)).unwrap();
        for axis in 0..3 {
            for (x, y) in a.probabilities[axis].iter().zip(&b.probabilities[axis]) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn decode_prediction_matches_brute_force() {
        let binning = AngleBinning::new(8, 4, 8).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..50 {
            let counts = binning.counts();
            let mut probabilities: [Vec<f64>; 3] = Default::default();
            let mut offsets: [Vec<f64>; 3] = Default::default();
            for a in 0..3 {
                let raw: Vec<f64> = (0..counts[a]).map(|_| rng.gen_range(0.0..1.0)).collect();
                let total: f64 = raw.iter().sum();
                probabilities[a] = raw.iter().map(|v| v / total).collect();
                offsets[a] = (0..counts[a]).map(|_| rng.gen_range(-0.99..0.99)).collect();
            }
            let pred = PosePrediction {
                probabilities: probabilities.clone(),
                offsets: offsets.clone(),
            };
            let decoded = pred.decode(&binning);

            let mut labels = [0usize; 3];
            let mut offs = [0f64; 3];
            for a in 0..3 {
                let mut best = 0;
                for i in 0..counts[a] {
                    if probabilities[a][i] > probabilities[a][best] {
                        best = i;
                    }
                }
                labels[a] = best;
                offs[a] = offsets[a][best];
            }
            let expected = binning.decode(&BinnedPose { labels, offsets: offs });
            assert_eq!(decoded.azimuth().to_bits(), expected.azimuth().to_bits());
            assert_eq!(decoded.elevation().to_bits(), expected.elevation().to_bits());
            assert_eq!(decoded.inplane().to_bits(), expected.inplane().to_bits());
        }
    }

    #[test]
    fn decode_uniform_probabilities_picks_bin_zero() {
        let binning = AngleBinning::new(4, 4, 4).unwrap();
        let pred = PosePrediction {
            probabilities: [vec![0.25; 4], vec![0.25; 4], vec![0.25; 4]],
            offsets: [vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]],
        };
        let decoded = pred.decode(&binning);
        let expected = binning.decode(&BinnedPose {
            labels: [0, 0, 0],
            offsets: [0.0, 0.0, 0.0],
        });
        assert_eq!(decoded.azimuth(), expected.azimuth());
        assert_eq!(decoded.elevation(), expected.elevation());
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.pfsckpt");
        let net = PoseNetwork::build(tiny_config(ShapeMode::PointCloud), 7).unwrap();
        net.save(&path, serde_json::json!({"epoch": 3})).unwrap();

        let (loaded, meta) = PoseNetwork::from_checkpoint(&path).unwrap();
        assert_eq!(meta.get("epoch").and_then(|v| v.as_u64()), Some(3));
        assert_eq!(loaded.config(), net.config());

        let image = test_image(16, 4);
        let cloud = test_cloud(30, 5);
        let a = net.predict(&image, ShapeInput::Points(&cloud)).unwrap();
        let b = loaded.predict(&image, ShapeInput::Points(&cloud)).unwrap();
        for axis in 0..3 {
            for (x, y) in a.probabilities[axis].iter().zip(&b.probabilities[axis]) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn from_store_rejects_architecture_mismatch() {
        let net = PoseNetwork::build(tiny_config(ShapeMode::PointCloud), 7).unwrap();
        let mut other = tiny_config(ShapeMode::PointCloud);
        other.head_hidden = vec![24, 12];
        let err = PoseNetwork::from_store(other, net.store.clone()).unwrap_err();
        assert!(matches!(err, Error::Invalid(_)), "got {err:?}");

        let mut extra = net.store.clone();
        extra.add("rogue", Tensor::zeros(&[1]), false);
        let err = PoseNetwork::from_store(tiny_config(ShapeMode::PointCloud), extra).unwrap_err();
        assert!(matches!(err, Error::Invalid(_)), "got {err:?}");
    }

    #[test]
    fn predict_rejects_mode_and_size_mismatches() {
        let net = PoseNetwork::build(tiny_config(ShapeMode::PointCloud), 7).unwrap();
        let image = test_image(16, 0);
        let views = tiny_views(0);
        let err = net.predict(&image, ShapeInput::Views(&views)).unwrap_err();
        assert!(matches!(err, Error::Invalid(_)));

        let wrong_size = test_image(32, 0);
        let cloud = test_cloud(10, 0);
        let err = net
            .predict(&wrong_size, ShapeInput::Points(&cloud))
            .unwrap_err();
        assert!(matches!(err, Error::Invalid(_)));

        let mv = PoseNetwork::build(tiny_config(ShapeMode::MultiView), 7).unwrap();
        let mut too_few = tiny_views(0);
        too_few.images.pop();
        too_few.cameras.pop();
        let err = mv.predict(&image, ShapeInput::Views(&too_few)).unwrap_err();
        assert!(matches!(err, Error::Invalid(_)));
    }

    #[test]
    fn build_rejects_invalid_configs() {
        let mut cfg = tiny_config(ShapeMode::PointCloud);
        cfg.conv_channels.clear();
        assert!(PoseNetwork::build(cfg, 0).is_err());

        let mut cfg = tiny_config(ShapeMode::PointCloud);
        cfg.point_widths = vec![0];
        assert!(PoseNetwork::build(cfg, 0).is_err());

        let mut cfg = tiny_config(ShapeMode::MultiView);
        cfg.view_count = 0;
        assert!(PoseNetwork::build(cfg, 0).is_err());

        let mut cfg = tiny_config(ShapeMode::PointCloud);
        cfg.image_size = 4;
        assert!(PoseNetwork::build(cfg, 0).is_err());
    }

    #[test]
    fn config_serde_round_trip_and_unknown_key_rejection() {
        let cfg = PoseNetworkConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: PoseNetworkConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);

        let bad = r#"{"shape_mode": "point_cloud", "bogus_knob": 3}"#;
        assert!(serde_json::from_str::<PoseNetworkConfig>(bad).is_err());

        let partial = r#"{"shape_mode": "multi_view"}"#;
        let parsed: PoseNetworkConfig = serde_json::from_str(partial).unwrap();
        assert_eq!(parsed.shape_mode, ShapeMode::MultiView);
        assert_eq!(parsed.head_hidden, vec![800, 400, 200]);
    }
}
