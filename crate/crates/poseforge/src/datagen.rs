//! Procedural shape families, synthetic dataset generation, and the
//! training-time augmentation suite.
//!
//! Every random quantity is drawn from an explicit stream named by
//! `(seed, tag)` — see [`stream_rng`] — so generation is bit-reproducible and
//! insensitive to thread scheduling. A dataset on disk is laid out as
//!
//! ```text
//! root/
//!   manifest.json            dataset manifest (relative paths, degrees)
//!   meshes/{shape}.obj       normalized triangle meshes
//!   points/{shape}.pfspc     surface point clouds
//!   views/{shape}.json       canonical view-set manifests (+ views/{shape}/)
//!   images/{sample}.pfsimg   query images as raw float tensors
//!   images/{sample}.png      8-bit previews of the same images
//! ```
//!
//! Shape-azimuth randomization keys the whole augmentation design: the network
//! must not memorize the canonical orientation of a mesh, so each training
//! sample hands it a shape input rotated by `-alpha` about +Y together with a
//! label whose azimuth is shifted to `azi - alpha`. Under the renderer's
//! camera convention, rendering the rotated shape at the shifted label
//! reproduces the original query image exactly, which is what keeps the
//! (image, shape, pose) triple consistent.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::render::{
    place_cameras, render_view_with_mask, render_view_set, Camera, Image, RenderOptions,
    RenderedView, ViewSet, DEFAULT_DISTANCE, DEFAULT_FOV, NORMALIZED_TOL,
};
use crate::rot::{wrap_angle, EulerPose, RotationMatrix};
use crate::shape::{save_obj, load_obj, PointCloud, ShapeMeta, TriangleMesh};

/// Tolerance used when flagging rotational symmetry and chirality.
pub const SYMMETRY_TOL: f64 = 1e-6;

/// Lattice resolution (cells per side) of the value-noise background.
const NOISE_CELLS: usize = 6;

/// Deterministic random stream for a `(seed, tag)` pair.
///
/// Streams with different tags are independent, and a stream never depends on
/// how many other streams were opened, which is what makes dataset generation
/// and augmentation order-free and reproducible.
pub fn stream_rng(seed: u64, tag: &str) -> ChaCha12Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    ChaCha12Rng::from_seed(h.finalize().into())
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + rng.gen::<f64>() * (hi - lo)
}

// ---------------------------------------------------------------------------
// Procedural shape families
// ---------------------------------------------------------------------------

/// The built-in procedural mesh families.
///
/// Every family carries an off-center marker block (or an intrinsically
/// asymmetric layout) so that no nontrivial rotation about +Y maps the shape
/// onto itself: without that, the pose label would be ambiguous.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    /// A single box plus a marker cube on top: 12 + 12 = 24 triangles.
    Cuboid,
    /// Two boxes in an L layout plus a marker.
    LShape,
    /// A 12-sided prism (cylinder stand-in) plus a marker on its side.
    Cylinder,
    /// A slab carrying an off-center prism tower, a corner post and a marker.
    Composite,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 4] = [
        ShapeFamily::Cuboid,
        ShapeFamily::LShape,
        ShapeFamily::Cylinder,
        ShapeFamily::Composite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeFamily::Cuboid => "cuboid",
            ShapeFamily::LShape => "l_shape",
            ShapeFamily::Cylinder => "cylinder",
            ShapeFamily::Composite => "composite",
        }
    }
}

impl std::fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown shape family {s:?}; expected one of cuboid, l_shape, cylinder, composite"
                ))
            })
    }
}

struct MeshBuilder {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
}

impl MeshBuilder {
    fn new() -> MeshBuilder {
        MeshBuilder {
            vertices: Vec::new(),
            faces: Vec::new(),
        }
    }

    /// Axis-aligned box: 8 vertices, 12 triangles.
    fn add_box(&mut self, center: [f64; 3], half: [f64; 3]) {
        let base = self.vertices.len();
        let (cx, cy, cz) = (center[0], center[1], center[2]);
        let (hx, hy, hz) = (half[0], half[1], half[2]);
        self.vertices.extend([
            [cx - hx, cy - hy, cz - hz],
            [cx + hx, cy - hy, cz - hz],
            [cx + hx, cy + hy, cz - hz],
            [cx - hx, cy + hy, cz - hz],
            [cx - hx, cy - hy, cz + hz],
            [cx + hx, cy - hy, cz + hz],
            [cx + hx, cy + hy, cz + hz],
            [cx - hx, cy + hy, cz + hz],
        ]);
        const QUADS: [[usize; 4]; 6] = [
            [0, 1, 2, 3], // -z
            [5, 4, 7, 6], // +z
            [4, 0, 3, 7], // -x
            [1, 5, 6, 2], // +x
            [4, 5, 1, 0], // -y
            [3, 2, 6, 7], // +y
        ];
        for q in QUADS {
            self.faces.push([base + q[0], base + q[1], base + q[2]]);
            self.faces.push([base + q[0], base + q[2], base + q[3]]);
        }
    }

    /// Upright `sides`-gon prism with capped ends: 4 * `sides` triangles.
    fn add_prism(&mut self, center: [f64; 3], radius: f64, half_height: f64, sides: usize) {
        let base = self.vertices.len();
        let (cx, cy, cz) = (center[0], center[1], center[2]);
        for &dy in &[-half_height, half_height] {
            for k in 0..sides {
                let theta = k as f64 * std::f64::consts::TAU / sides as f64;
                self.vertices
                    .push([cx + radius * theta.cos(), cy + dy, cz + radius * theta.sin()]);
            }
        }
        let bottom_center = self.vertices.len();
        self.vertices.push([cx, cy - half_height, cz]);
        let top_center = self.vertices.len();
        self.vertices.push([cx, cy + half_height, cz]);
        for k in 0..sides {
            let k1 = (k + 1) % sides;
            let (b0, b1) = (base + k, base + k1);
            let (t0, t1) = (base + sides + k, base + sides + k1);
            self.faces.push([b0, b1, t0]);
            self.faces.push([t0, b1, t1]);
            self.faces.push([bottom_center, b1, b0]);
            self.faces.push([top_center, t0, t1]);
        }
    }

    fn build(self) -> Result<TriangleMesh> {
        TriangleMesh::new(self.vertices, self.faces)?.normalize()
    }
}

/// Builds one mesh of `family`, drawing its dimensions from `rng` in a fixed
/// order, then normalizing it.
fn family_mesh<R: Rng>(family: ShapeFamily, rng: &mut R) -> Result<TriangleMesh> {
    let mut b = MeshBuilder::new();
    match family {
        ShapeFamily::Cuboid => {
            let hx = uniform(rng, 0.55, 0.95);
            let hy = uniform(rng, 0.30, 0.55);
            let hz = uniform(rng, 0.20, 0.45);
            let m = uniform(rng, 0.07, 0.12);
            let mx = uniform(rng, 0.3, 0.6) * hx;
            let mz = -uniform(rng, 0.3, 0.6) * hz;
            b.add_box([0.0, 0.0, 0.0], [hx, hy, hz]);
            b.add_box([mx, hy + m, mz], [m, m, m]);
        }
        ShapeFamily::LShape => {
            let a = uniform(rng, 0.60, 0.90);
            let hy = uniform(rng, 0.16, 0.28);
            let hz = uniform(rng, 0.16, 0.28);
            let arm_w = uniform(rng, 0.16, 0.26);
            let arm_d = uniform(rng, 0.30, 0.50);
            let m = uniform(rng, 0.06, 0.10);
            b.add_box([0.0, 0.0, 0.0], [a, hy, hz]);
            b.add_box([a - arm_w, 0.0, hz + arm_d], [arm_w, hy, arm_d]);
            b.add_box([-a + 1.5 * m, hy + m, 0.0], [m, m, m]);
        }
        ShapeFamily::Cylinder => {
            let r = uniform(rng, 0.45, 0.65);
            let hh = uniform(rng, 0.50, 0.80);
            // Marker azimuth stays clear of the prism's own 30-degree
            // symmetry lattice and of the 45-degree mirror fixed point.
            let theta = uniform(rng, 0.30, 0.70);
            let y0 = uniform(rng, -0.3, 0.3) * hh;
            let m = uniform(rng, 0.07, 0.11);
            b.add_prism([0.0, 0.0, 0.0], r, hh, 12);
            let rm = r + 0.5 * m;
            b.add_box([rm * theta.cos(), y0, rm * theta.sin()], [m, 1.4 * m, m]);
        }
        ShapeFamily::Composite => {
            let sx = uniform(rng, 0.55, 0.80);
            let sy = uniform(rng, 0.10, 0.18);
            let sz = uniform(rng, 0.35, 0.55);
            let tr = uniform(rng, 0.18, 0.30);
            let th = uniform(rng, 0.30, 0.50);
            let tx = uniform(rng, 0.15, 0.40) * sx;
            let tz = -uniform(rng, 0.15, 0.45) * sz;
            let aw = uniform(rng, 0.10, 0.16);
            let ah = uniform(rng, 0.15, 0.30);
            let px = -uniform(rng, 0.50, 0.75) * sx;
            let pz = uniform(rng, 0.40, 0.66) * sz;
            let m = uniform(rng, 0.05, 0.09);
            b.add_box([0.0, 0.0, 0.0], [sx, sy, sz]);
            b.add_prism([tx, sy + th, tz], tr, th, 8);
            b.add_box([px, sy + ah, pz], [aw, ah, aw]);
            b.add_box([tx, sy + 2.0 * th + m, tz], [m, m, m]);
        }
    }
    let mesh = b.build()?;
    debug_assert!(
        breaks_azimuthal_symmetry(&mesh, SYMMETRY_TOL),
        "{family} mesh came out azimuthally symmetric"
    );
    Ok(mesh)
}

/// Generates `n` normalized meshes of one family.
///
/// Shape `i` draws its dimensions from the stream `(seed, "shape:family:i")`,
/// so the first `k` shapes of a set are identical no matter how large the set
/// is, and regeneration is exact.
pub fn make_procedural_shapes(n: usize, family: ShapeFamily, seed: u64) -> Result<Vec<TriangleMesh>> {
    if n == 0 {
        return Err(Error::invalid("shape generation needs n >= 1"));
    }
    (0..n)
        .map(|i| {
            let mut rng = stream_rng(seed, &format!("shape:{}:{i}", family.name()));
            family_mesh(family, &mut rng)
        })
        .collect()
}

/// A plain normalized box with no marker: mirror-symmetric and symmetric
/// under a 180-degree rotation about +Y. Used to test remaps that are exact
/// only on symmetric geometry.
pub fn symmetric_test_cuboid() -> TriangleMesh {
    let mut b = MeshBuilder::new();
    b.add_box([0.0, 0.0, 0.0], [0.8, 0.5, 0.3]);
    b.build().expect("fixed box builds")
}

/// True when every rotated copy `R_y(k deg) * V`, k = 1..359, fails to match
/// the vertex set `V` within `tol` — i.e. the mesh has no nontrivial
/// rotational symmetry about +Y and its azimuth label is unambiguous.
pub fn breaks_azimuthal_symmetry(mesh: &TriangleMesh, tol: f64) -> bool {
    let verts = mesh.vertices();
    !(1..360).any(|k| {
        let r = RotationMatrix::about_y((k as f64).to_radians());
        let rotated: Vec<[f64; 3]> = verts.iter().map(|&v| r.apply(v)).collect();
        sets_match(&rotated, verts, tol)
    })
}

/// True when the mesh differs from its mirror image: no rotation about +Y by
/// k degrees (k = 0..359) maps the x-mirrored vertex set onto the original
/// within `tol`. Checked on the yaw axis only, which is the axis canonical
/// orientations care about.
pub fn is_chiral(mesh: &TriangleMesh, tol: f64) -> bool {
    let verts = mesh.vertices();
    let mirrored: Vec<[f64; 3]> = verts.iter().map(|&v| [-v[0], v[1], v[2]]).collect();
    !(0..360).any(|k| {
        let r = RotationMatrix::about_y((k as f64).to_radians());
        let candidate: Vec<[f64; 3]> = mirrored.iter().map(|&v| r.apply(v)).collect();
        sets_match(&candidate, verts, tol)
    })
}

/// Symmetric nearest-neighbor match of two point sets within `tol`.
fn sets_match(a: &[[f64; 3]], b: &[[f64; 3]], tol: f64) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let has_neighbor = |p: [f64; 3], set: &[[f64; 3]]| {
        set.iter().any(|&q| {
            let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
            d2 <= tol * tol
        })
    };
    a.iter().all(|&p| has_neighbor(p, b)) && b.iter().all(|&q| has_neighbor(q, a))
}

/// A mesh with the identity and family metadata the dataset needs.
#[derive(Clone, Debug)]
pub struct NamedShape {
    pub id: String,
    pub family: ShapeFamily,
    pub mesh: TriangleMesh,
}

/// Builds shapes for each `(family, count)` request with ids
/// `{family}_{index:03}`. A family may appear at most once.
pub fn make_shape_set(counts: &[(ShapeFamily, usize)], seed: u64) -> Result<Vec<NamedShape>> {
    if counts.is_empty() || counts.iter().all(|&(_, n)| n == 0) {
        return Err(Error::invalid("shape set needs at least one shape"));
    }
    let mut seen = HashSet::new();
    let mut shapes = Vec::new();
    for &(family, count) in counts {
        if !seen.insert(family) {
            return Err(Error::invalid(format!(
                "family {family} listed twice in the shape set"
            )));
        }
        if count == 0 {
            continue;
        }
        for (i, mesh) in make_procedural_shapes(count, family, seed)?.into_iter().enumerate() {
            shapes.push(NamedShape {
                id: format!("{}_{i:03}", family.name()),
                family,
                mesh,
            });
        }
    }
    Ok(shapes)
}

// ---------------------------------------------------------------------------
// Pose distribution and backgrounds
// ---------------------------------------------------------------------------

/// Uniform per-angle pose distribution, in degrees. Each angle is drawn from
/// the half-open interval `[lo, hi)`; `lo == hi` pins the angle.
///
/// The default biases poses toward upright viewpoints: full azimuth coverage,
/// elevation in [0, 60] and in-plane in [-15, 15].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseDistribution {
    pub azi_deg: (f64, f64),
    pub ele_deg: (f64, f64),
    pub inp_deg: (f64, f64),
}

impl Default for PoseDistribution {
    fn default() -> Self {
        PoseDistribution {
            azi_deg: (-180.0, 180.0),
            ele_deg: (0.0, 60.0),
            inp_deg: (-15.0, 15.0),
        }
    }
}

impl PoseDistribution {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, (lo, hi): (f64, f64), min: f64, max: f64| {
            if !(lo.is_finite() && hi.is_finite() && min <= lo && lo <= hi && hi <= max) {
                return Err(Error::invalid(format!(
                    "{name} range [{lo}, {hi}] must satisfy {min} <= lo <= hi <= {max}"
                )));
            }
            Ok(())
        };
        check("azimuth", self.azi_deg, -180.0, 180.0)?;
        check("elevation", self.ele_deg, -90.0, 90.0)?;
        check("in-plane", self.inp_deg, -180.0, 180.0)
    }

    /// Draws one pose; the stream consumes exactly three values, in the order
    /// azimuth, elevation, in-plane.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<EulerPose> {
        self.validate()?;
        let azi = uniform(rng, self.azi_deg.0, self.azi_deg.1);
        let ele = uniform(rng, self.ele_deg.0, self.ele_deg.1);
        let inp = uniform(rng, self.inp_deg.0, self.inp_deg.1);
        EulerPose::from_degrees(azi, ele, inp)
    }
}

/// How query-image pixels not covered by the shape are filled.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackgroundMode {
    /// One fixed color behind every sample.
    Solid { color: [f32; 3] },
    /// Per-sample linear blend between two random colors along a random
    /// direction.
    Gradient,
    /// Per-sample value noise: a random 7x7 lattice per channel, interpolated
    /// with a smoothstep kernel.
    #[default]
    Noise,
}

enum Painter {
    Solid([f32; 3]),
    Gradient {
        c0: [f32; 3],
        c1: [f32; 3],
        cos: f64,
        sin: f64,
    },
    Noise {
        /// `(NOISE_CELLS+1)^2` values per channel, channel-major.
        lattice: Vec<f32>,
    },
}

impl Painter {
    /// Draws the per-sample parameters; the number of values consumed depends
    /// only on the mode, keeping per-sample streams aligned.
    fn draw<R: Rng>(mode: &BackgroundMode, rng: &mut R) -> Painter {
        match mode {
            BackgroundMode::Solid { color } => Painter::Solid(*color),
            BackgroundMode::Gradient => {
                let color = |rng: &mut R| {
                    [
                        rng.gen::<f64>() as f32,
                        rng.gen::<f64>() as f32,
                        rng.gen::<f64>() as f32,
                    ]
                };
                let c0 = color(rng);
                let c1 = color(rng);
                let phi = uniform(rng, 0.0, std::f64::consts::TAU);
                Painter::Gradient {
                    c0,
                    c1,
                    cos: phi.cos(),
                    sin: phi.sin(),
                }
            }
            BackgroundMode::Noise => {
                let side = NOISE_CELLS + 1;
                let lattice = (0..3 * side * side)
                    .map(|_| rng.gen::<f64>() as f32)
                    .collect();
                Painter::Noise { lattice }
            }
        }
    }

    /// Color at normalized image coordinates in (0, 1).
    fn at(&self, xn: f64, yn: f64) -> [f32; 3] {
        match self {
            Painter::Solid(c) => *c,
            Painter::Gradient { c0, c1, cos, sin } => {
                let t = (0.5 + (xn - 0.5) * cos + (yn - 0.5) * sin).clamp(0.0, 1.0) as f32;
                [
                    c0[0] + t * (c1[0] - c0[0]),
                    c0[1] + t * (c1[1] - c0[1]),
                    c0[2] + t * (c1[2] - c0[2]),
                ]
            }
            Painter::Noise { lattice } => {
                let side = NOISE_CELLS + 1;
                let mut out = [0f32; 3];
                let (ux, uy) = (xn * NOISE_CELLS as f64, yn * NOISE_CELLS as f64);
                let ix = (ux.floor() as usize).min(NOISE_CELLS - 1);
                let iy = (uy.floor() as usize).min(NOISE_CELLS - 1);
                let smooth = |t: f64| (t * t * (3.0 - 2.0 * t)) as f32;
                let (fx, fy) = (smooth(ux - ix as f64), smooth(uy - iy as f64));
                for (c, v) in out.iter_mut().enumerate() {
                    let at = |y: usize, x: usize| lattice[(c * side + y) * side + x];
                    let top = at(iy, ix) * (1.0 - fx) + at(iy, ix + 1) * fx;
                    let bot = at(iy + 1, ix) * (1.0 - fx) + at(iy + 1, ix + 1) * fx;
                    *v = top * (1.0 - fy) + bot * fy;
                }
                out
            }
        }
    }
}

/// Paints the RGB channels of every pixel the shape does not cover. Depth and
/// normal channels, when present, keep their own background encodings.
pub fn paint_background<R: Rng>(view: &mut RenderedView, mode: &BackgroundMode, rng: &mut R) {
    let painter = Painter::draw(mode, rng);
    let (h, w) = (view.image.height(), view.image.width());
    for y in 0..h {
        let yn = (y as f64 + 0.5) / h as f64;
        for x in 0..w {
            if view.mask[y * w + x] {
                continue;
            }
            let color = painter.at((x as f64 + 0.5) / w as f64, yn);
            for (c, &v) in color.iter().enumerate() {
                view.image.set(c, y, x, v.clamp(0.0, 1.0));
            }
        }
    }
}

/// Renders one query image of `mesh` at `pose` (the camera takes the pose's
/// azimuth/elevation, the rasterizer its in-plane angle) and fills uncovered
/// pixels from `background`. This is exactly the image-synthesis path of
/// [`generate_dataset`].
pub fn render_sample_image<R: Rng>(
    mesh: &TriangleMesh,
    pose: EulerPose,
    distance: f64,
    background: &BackgroundMode,
    opts: &RenderOptions,
    rng: &mut R,
) -> Result<Image> {
    let camera = Camera::new(pose.azimuth(), pose.elevation(), distance, DEFAULT_FOV)?;
    let mut view = render_view_with_mask(mesh, &camera, pose.inplane(), opts)?;
    paint_background(&mut view, background, rng);
    Ok(view.image)
}

// ---------------------------------------------------------------------------
// Splits and manifest
// ---------------------------------------------------------------------------

/// Dataset partition a sample belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!(
                "unknown split {other:?}; expected train, val or test"
            ))),
        }
    }
}

/// How samples are assigned to train/val/test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SplitMode {
    /// Independent per-sample draws with the given validation and test
    /// fractions; the remainder trains.
    Random {
        #[serde(default = "default_frac")]
        val_frac: f64,
        #[serde(default = "default_frac")]
        test_frac: f64,
    },
    /// Entire families are held out as the test split, so test shapes are
    /// never seen in training in any orientation. Validation, when requested,
    /// is carved per-sample from the remaining (training) families, so no
    /// shape ever straddles val and test.
    NovelShape {
        holdout: Vec<ShapeFamily>,
        #[serde(default)]
        val_frac: f64,
    },
}

fn default_frac() -> f64 {
    0.1
}

impl Default for SplitMode {
    fn default() -> Self {
        SplitMode::Random {
            val_frac: 0.1,
            test_frac: 0.1,
        }
    }
}

impl SplitMode {
    pub fn validate(&self) -> Result<()> {
        let frac_ok = |v: f64| (0.0..=1.0).contains(&v);
        match self {
            SplitMode::Random { val_frac, test_frac } => {
                if !(frac_ok(*val_frac) && frac_ok(*test_frac) && val_frac + test_frac <= 1.0) {
                    return Err(Error::invalid(format!(
                        "split fractions val={val_frac}, test={test_frac} must be in [0,1] and sum to at most 1"
                    )));
                }
            }
            SplitMode::NovelShape { val_frac, .. } => {
                if !frac_ok(*val_frac) {
                    return Err(Error::invalid(format!(
                        "validation fraction {val_frac} must be in [0,1]"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Split for one sample. Uses the independent stream
    /// `(seed, "split:sample_id")`, so changing the split mode never perturbs
    /// pose or background draws.
    fn assign(&self, family: ShapeFamily, sample_id: &str, seed: u64) -> Split {
        let coin = || stream_rng(seed, &format!("split:{sample_id}")).gen::<f64>();
        match self {
            SplitMode::Random { val_frac, test_frac } => {
                let u = coin();
                if u < *test_frac {
                    Split::Test
                } else if u < test_frac + val_frac {
                    Split::Val
                } else {
                    Split::Train
                }
            }
            SplitMode::NovelShape { holdout, val_frac } => {
                if holdout.contains(&family) {
                    Split::Test
                } else if coin() < *val_frac {
                    Split::Val
                } else {
                    Split::Train
                }
            }
        }
    }
}

/// Per-shape manifest record: metadata plus relative asset paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeEntry {
    pub meta: ShapeMeta,
    pub mesh: String,
    pub points: String,
    pub views: String,
}

/// Per-sample manifest record; angles in degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub id: String,
    pub image: String,
    pub shape_id: String,
    pub azi_deg: f64,
    pub ele_deg: f64,
    pub inp_deg: f64,
    pub split: Split,
}

impl SampleEntry {
    pub fn pose(&self) -> Result<EulerPose> {
        EulerPose::from_degrees(self.azi_deg, self.ele_deg, self.inp_deg)
    }
}

/// Index of a generated dataset: the seed and config hash that produced it,
/// its shapes and its samples. Paths are relative to the dataset root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub config_sha256: String,
    pub shapes: Vec<ShapeEntry>,
    pub samples: Vec<SampleEntry>,
}

impl DatasetManifest {
    /// Writes the manifest atomically (temp file + rename), so readers never
    /// observe a half-written index.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::format(path, e.to_string()))?;
        json.push('\n');
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<DatasetManifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// An in-memory training/evaluation sample.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub shape_id: String,
    pub pose: EulerPose,
    pub split: Split,
}

/// A dataset root directory together with its loaded manifest.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn manifest_path(root: &Path) -> PathBuf {
        root.join("manifest.json")
    }

    /// Opens `root/manifest.json` and verifies its internal consistency:
    /// unique ids, resolvable shape references, and the existence of every
    /// referenced file.
    pub fn open(root: &Path) -> Result<Dataset> {
        let manifest = DatasetManifest::load(&Self::manifest_path(root))?;
        let mut shape_ids = HashSet::new();
        for shape in &manifest.shapes {
            if !shape_ids.insert(shape.meta.id.as_str()) {
                return Err(Error::invalid(format!(
                    "duplicate shape id {:?} in manifest",
                    shape.meta.id
                )));
            }
            for rel in [&shape.mesh, &shape.points, &shape.views] {
                let path = root.join(rel);
                if !path.is_file() {
                    return Err(Error::invalid(format!(
                        "manifest references missing file {}",
                        path.display()
                    )));
                }
            }
        }
        let mut sample_ids = HashSet::new();
        for sample in &manifest.samples {
            if !sample_ids.insert(sample.id.as_str()) {
                return Err(Error::invalid(format!(
                    "duplicate sample id {:?} in manifest",
                    sample.id
                )));
            }
            if !shape_ids.contains(sample.shape_id.as_str()) {
                return Err(Error::invalid(format!(
                    "sample {} references unknown shape {:?}",
                    sample.id, sample.shape_id
                )));
            }
            let path = root.join(&sample.image);
            if !path.is_file() {
                return Err(Error::invalid(format!(
                    "manifest references missing file {}",
                    path.display()
                )));
            }
            sample.pose()?;
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            manifest,
        })
    }

    /// Rejects the dataset when it was generated under a different resolved
    /// configuration than the one now in effect.
    pub fn check_config(&self, expected_sha256: &str) -> Result<()> {
        if self.manifest.config_sha256 != expected_sha256 {
            return Err(Error::invalid(format!(
                "stale dataset: generated with config {} but the current config is {}; regenerate it",
                self.manifest.config_sha256, expected_sha256
            )));
        }
        Ok(())
    }

    pub fn shape(&self, id: &str) -> Result<&ShapeEntry> {
        self.manifest
            .shapes
            .iter()
            .find(|s| s.meta.id == id)
            .ok_or_else(|| Error::invalid(format!("shape {id:?} not in manifest")))
    }

    pub fn samples_in(&self, split: Split) -> Vec<&SampleEntry> {
        self.manifest
            .samples
            .iter()
            .filter(|s| s.split == split)
            .collect()
    }

    pub fn load_sample(&self, entry: &SampleEntry) -> Result<Sample> {
        Ok(Sample {
            id: entry.id.clone(),
            image: Image::load_tensor(&self.root.join(&entry.image))?,
            shape_id: entry.shape_id.clone(),
            pose: entry.pose()?,
            split: entry.split,
        })
    }

    pub fn load_mesh(&self, entry: &ShapeEntry) -> Result<TriangleMesh> {
        load_obj(&self.root.join(&entry.mesh))
    }

    pub fn load_points(&self, entry: &ShapeEntry) -> Result<PointCloud> {
        PointCloud::load(&self.root.join(&entry.points))
    }

    pub fn load_views(&self, entry: &ShapeEntry) -> Result<ViewSet> {
        ViewSet::load(&self.root.join(&entry.views))
    }
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

/// Everything `generate_dataset` needs besides the shapes themselves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatagenConfig {
    /// Query views rendered per shape.
    pub views_per_shape: usize,
    /// Surface points sampled per shape for the point-cloud input and the
    /// distance metrics.
    pub points_per_cloud: usize,
    /// Query image side length (square).
    pub image_size: usize,
    /// Canonical shape-view side length (square).
    pub view_size: usize,
    /// Azimuth steps of the canonical view layout.
    pub n_azi: usize,
    /// Elevation rings of the canonical view layout, degrees in [0, 90].
    pub elevations_deg: Vec<f64>,
    /// Camera distance for both query and canonical views.
    pub distance: f64,
    pub pose: PoseDistribution,
    pub background: BackgroundMode,
    pub split: SplitMode,
    pub seed: u64,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        DatagenConfig {
            views_per_shape: 20,
            points_per_cloud: 2500,
            image_size: 64,
            view_size: 64,
            n_azi: 6,
            elevations_deg: vec![0.0, 30.0],
            distance: DEFAULT_DISTANCE,
            pose: PoseDistribution::default(),
            background: BackgroundMode::default(),
            split: SplitMode::default(),
            seed: 0,
        }
    }
}

impl DatagenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.views_per_shape == 0 {
            return Err(Error::invalid("views_per_shape must be at least 1"));
        }
        if self.points_per_cloud == 0 {
            return Err(Error::invalid("points_per_cloud must be at least 1"));
        }
        if self.n_azi == 0 || self.elevations_deg.is_empty() {
            return Err(Error::invalid(
                "the canonical view layout needs n_azi >= 1 and at least one elevation",
            ));
        }
        for &e in &self.elevations_deg {
            if !(0.0..=90.0).contains(&e) {
                return Err(Error::invalid(format!(
                    "canonical view elevation {e} deg outside [0, 90]"
                )));
            }
        }
        if self.distance <= 1.0 {
            return Err(Error::invalid(format!(
                "camera distance {} must exceed 1",
                self.distance
            )));
        }
        self.pose.validate()?;
        self.split.validate()
    }
}

/// Renders and writes a full dataset under `root`, returning the opened
/// result.
///
/// Per shape: the normalized mesh (OBJ), a surface point cloud, and the
/// canonical view set. Per sample: a pose drawn from the configured
/// distribution, a query image rendered with that pose's in-plane rotation and
/// composited over the configured background, stored as both a raw tensor and
/// a PNG preview. Shapes render in parallel; every random draw comes from a
/// stream named by the seed and the shape/sample id, so the output is
/// byte-identical across runs and thread counts. The manifest is written
/// last, atomically.
pub fn generate_dataset(
    root: &Path,
    shapes: &[NamedShape],
    cfg: &DatagenConfig,
    config_sha256: &str,
) -> Result<Dataset> {
    cfg.validate()?;
    if shapes.is_empty() {
        return Err(Error::invalid("dataset generation needs at least one shape"));
    }
    let mut ids = HashSet::new();
    for shape in shapes {
        if !ids.insert(shape.id.as_str()) {
            return Err(Error::invalid(format!("duplicate shape id {:?}", shape.id)));
        }
        let norm = shape.mesh.max_vertex_norm();
        if norm > 1.0 + NORMALIZED_TOL {
            return Err(Error::invalid(format!(
                "shape {:?} is not normalized (max vertex norm {norm:.6})",
                shape.id
            )));
        }
    }
    for sub in ["meshes", "points", "views", "images"] {
        let dir = root.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let elevations: Vec<f64> = cfg.elevations_deg.iter().map(|e| e.to_radians()).collect();
    let cameras = place_cameras(cfg.n_azi, &elevations, cfg.distance)?;
    let view_opts = RenderOptions {
        width: cfg.view_size,
        height: cfg.view_size,
        ..RenderOptions::default()
    };
    let image_opts = RenderOptions {
        width: cfg.image_size,
        height: cfg.image_size,
        ..RenderOptions::default()
    };

    let per_shape: Vec<(ShapeEntry, Vec<SampleEntry>)> = shapes
        .par_iter()
        .map(|shape| -> Result<(ShapeEntry, Vec<SampleEntry>)> {
            let id = &shape.id;
            let mesh_rel = format!("meshes/{id}.obj");
            let points_rel = format!("points/{id}.pfspc");
            let views_rel = format!("views/{id}.json");
            save_obj(&shape.mesh, &root.join(&mesh_rel))?;
            let points_seed = stream_rng(cfg.seed, &format!("points:{id}")).gen::<u64>();
            let cloud = shape.mesh.sample_surface(cfg.points_per_cloud, points_seed)?;
            cloud.save(&root.join(&points_rel))?;
            let views = render_view_set(&shape.mesh, &cameras, &view_opts)?;
            views.save(&root.join(&views_rel), config_sha256)?;
            let entry = ShapeEntry {
                meta: ShapeMeta {
                    id: id.clone(),
                    family: shape.family.name().to_string(),
                    diameter: cloud.diameter(),
                    symmetric: !breaks_azimuthal_symmetry(&shape.mesh, SYMMETRY_TOL),
                    chiral: is_chiral(&shape.mesh, SYMMETRY_TOL),
                },
                mesh: mesh_rel,
                points: points_rel,
                views: views_rel,
            };
            let mut samples = Vec::with_capacity(cfg.views_per_shape);
            for v in 0..cfg.views_per_shape {
                let sample_id = format!("{id}_v{v:02}");
                // One stream per sample: three pose draws, then the
                // background parameters.
                let mut rng = stream_rng(cfg.seed, &format!("sample:{sample_id}"));
                let pose = cfg.pose.sample(&mut rng)?;
                let image = render_sample_image(
                    &shape.mesh,
                    pose,
                    cfg.distance,
                    &cfg.background,
                    &image_opts,
                    &mut rng,
                )?;
                let image_rel = format!("images/{sample_id}.pfsimg");
                image.save_tensor(&root.join(&image_rel))?;
                image.save_png(&root.join(format!("images/{sample_id}.png")))?;
                let (azi_deg, ele_deg, inp_deg) = pose.to_degrees();
                samples.push(SampleEntry {
                    id: sample_id.clone(),
                    image: image_rel,
                    shape_id: id.clone(),
                    azi_deg,
                    ele_deg,
                    inp_deg,
                    split: cfg.split.assign(shape.family, &sample_id, cfg.seed),
                });
            }
            Ok((entry, samples))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut manifest = DatasetManifest {
        seed: cfg.seed,
        config_sha256: config_sha256.to_string(),
        shapes: Vec::with_capacity(per_shape.len()),
        samples: Vec::new(),
    };
    for (entry, samples) in per_shape {
        manifest.shapes.push(entry);
        manifest.samples.extend(samples);
    }
    manifest.save(&Dataset::manifest_path(root))?;
    Ok(Dataset {
        root: root.to_path_buf(),
        manifest,
    })
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

/// Probabilities and ranges of the training-time augmentations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    /// Probability of mirroring the image left-right (label follows).
    pub flip_prob: f64,
    /// Probability of re-cropping with jittered corners and resizing back.
    pub crop_prob: f64,
    /// Maximum inward corner perturbation as a fraction of width/height.
    pub crop_max_frac: f64,
    /// Probability of per-channel gain and brightness jitter.
    pub color_prob: f64,
    pub gain_range: (f64, f64),
    pub brightness_range: (f64, f64),
    /// Half-range of the always-on shape-azimuth randomization, degrees.
    pub azimuth_max_deg: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            flip_prob: 0.5,
            crop_prob: 0.5,
            crop_max_frac: 0.10,
            color_prob: 0.5,
            gain_range: (0.8, 1.2),
            brightness_range: (-0.1, 0.1),
            azimuth_max_deg: 45.0,
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<()> {
        let prob_ok = |v: f64| (0.0..=1.0).contains(&v);
        if !(prob_ok(self.flip_prob) && prob_ok(self.crop_prob) && prob_ok(self.color_prob)) {
            return Err(Error::invalid("augmentation probabilities must be in [0, 1]"));
        }
        if !(0.0..=0.49).contains(&self.crop_max_frac) {
            return Err(Error::invalid(format!(
                "crop_max_frac {} outside [0, 0.49]",
                self.crop_max_frac
            )));
        }
        if !(self.gain_range.0 <= self.gain_range.1 && self.gain_range.0 >= 0.0) {
            return Err(Error::invalid("gain_range must be ordered and nonnegative"));
        }
        if self.brightness_range.0 > self.brightness_range.1 {
            return Err(Error::invalid("brightness_range must be ordered"));
        }
        if !(0.0..=180.0).contains(&self.azimuth_max_deg) {
            return Err(Error::invalid(format!(
                "azimuth_max_deg {} outside [0, 180]",
                self.azimuth_max_deg
            )));
        }
        Ok(())
    }
}

/// One concrete augmentation draw.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    /// Inward crop fractions `[left, top, right, bottom]`.
    pub crop: Option<[f64; 4]>,
    /// Per-channel gains and a shared brightness offset.
    pub color: Option<([f32; 3], f32)>,
    /// Shape-azimuth randomization angle (radians): the label azimuth shifts
    /// by `-alpha` and the shape input rotates by `-alpha` about +Y.
    pub alpha: f64,
}

impl AugmentParams {
    /// Parameters that leave the sample untouched.
    pub fn identity() -> AugmentParams {
        AugmentParams {
            flip: false,
            crop: None,
            color: None,
            alpha: 0.0,
        }
    }
}

/// Draws augmentation parameters from `rng` in a fixed order: flip coin, crop
/// coin (plus four fractions when it fires), color coin (plus three gains and
/// one offset when it fires), then the azimuth angle, which always fires.
pub fn draw_augment_params<R: Rng>(policy: &AugmentPolicy, rng: &mut R) -> AugmentParams {
    let flip = rng.gen::<f64>() < policy.flip_prob;
    let crop = (rng.gen::<f64>() < policy.crop_prob).then(|| {
        [
            uniform(rng, 0.0, policy.crop_max_frac),
            uniform(rng, 0.0, policy.crop_max_frac),
            uniform(rng, 0.0, policy.crop_max_frac),
            uniform(rng, 0.0, policy.crop_max_frac),
        ]
    });
    let color = (rng.gen::<f64>() < policy.color_prob).then(|| {
        let gains = [
            uniform(rng, policy.gain_range.0, policy.gain_range.1) as f32,
            uniform(rng, policy.gain_range.0, policy.gain_range.1) as f32,
            uniform(rng, policy.gain_range.0, policy.gain_range.1) as f32,
        ];
        let offset = uniform(rng, policy.brightness_range.0, policy.brightness_range.1) as f32;
        (gains, offset)
    });
    let max = policy.azimuth_max_deg.to_radians();
    let alpha = uniform(rng, -max, max);
    AugmentParams {
        flip,
        crop,
        color,
        alpha,
    }
}

/// Mirrors the image left-right: `out(c, y, x) = in(c, y, w-1-x)`. A pure
/// index permutation, hence an exact involution. Optional normal channels are
/// mirrored as raw values without re-encoding their x component.
pub fn flip_horizontal(img: &Image) -> Image {
    let (ch, h, w) = (img.channels(), img.height(), img.width());
    let mut out = img.clone();
    for c in 0..ch {
        for y in 0..h {
            for x in 0..w {
                out.set(c, y, x, img.get(c, y, w - 1 - x));
            }
        }
    }
    out
}

/// Crops to the rectangle given by inward corner fractions
/// `[left, top, right, bottom]` of width/height, then resizes back to the
/// original size with edge-clamped bilinear sampling. All channels are
/// resampled.
pub fn crop_resize(img: &Image, inset: [f64; 4]) -> Result<Image> {
    for v in inset {
        if !(0.0..=0.49).contains(&v) {
            return Err(Error::invalid(format!(
                "crop inset {v} outside [0, 0.49]"
            )));
        }
    }
    let (ch, h, w) = (img.channels(), img.height(), img.width());
    let (wf, hf) = (w as f64, h as f64);
    let x0 = inset[0] * wf;
    let x1 = (1.0 - inset[2]) * wf;
    let y0 = inset[1] * hf;
    let y1 = (1.0 - inset[3]) * hf;
    let mut data = Vec::with_capacity(ch * h * w);
    for c in 0..ch {
        for y in 0..h {
            let sy = y0 + (y as f64 + 0.5) / hf * (y1 - y0) - 0.5;
            for x in 0..w {
                let sx = x0 + (x as f64 + 0.5) / wf * (x1 - x0) - 0.5;
                data.push(bilinear(img, c, sx, sy));
            }
        }
    }
    Image::from_data(ch, h, w, data)
}

fn bilinear(img: &Image, c: usize, sx: f64, sy: f64) -> f32 {
    let (h, w) = (img.height(), img.width());
    let sx = sx.clamp(0.0, (w - 1) as f64);
    let sy = sy.clamp(0.0, (h - 1) as f64);
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = (sx - x0 as f64) as f32;
    let fy = (sy - y0 as f64) as f32;
    let top = img.get(c, y0, x0) * (1.0 - fx) + img.get(c, y0, x1) * fx;
    let bot = img.get(c, y1, x0) * (1.0 - fx) + img.get(c, y1, x1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Applies per-channel gains and a shared brightness offset to the first
/// three channels, clamping to [0, 1]. Extra channels pass through.
pub fn color_adjust(img: &Image, gains: [f32; 3], offset: f32) -> Image {
    let (h, w) = (img.height(), img.width());
    let mut out = img.clone();
    for (c, &gain) in gains.iter().enumerate().take(img.channels()) {
        for y in 0..h {
            for x in 0..w {
                out.set(c, y, x, (img.get(c, y, x) * gain + offset).clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// An augmented training triple.
#[derive(Clone, Debug)]
pub struct AugmentedSample {
    pub image: Image,
    /// The shape input after azimuth randomization.
    pub shape: TriangleMesh,
    /// Rotation applied to the shape input about +Y (always `-alpha`); apply
    /// the same angle to a stored point cloud to keep it in sync with `shape`.
    pub shape_rotation: f64,
    /// The remapped label.
    pub pose: EulerPose,
}

/// Deterministic core of [`augment`]: applies one concrete parameter draw.
///
/// Image operations run in the order flip, crop, color. The label first picks
/// up the flip remap `(azi, ele, inp) -> (-azi, ele, -inp)`, then the
/// azimuth randomization shifts it by `-alpha` while the shape input rotates
/// by `-alpha` about +Y, preserving the render consistency of the triple.
pub fn apply_augment(
    sample: &Sample,
    shape: &TriangleMesh,
    params: &AugmentParams,
) -> Result<AugmentedSample> {
    let mut image = sample.image.clone();
    if params.flip {
        image = flip_horizontal(&image);
    }
    if let Some(inset) = params.crop {
        image = crop_resize(&image, inset)?;
    }
    if let Some((gains, offset)) = params.color {
        image = color_adjust(&image, gains, offset);
    }
    let mut pose = sample.pose;
    if params.flip {
        pose = pose.mirrored_lr();
    }
    pose = pose.shift_azimuth(params.alpha);
    let shape_rotation = wrap_angle(-params.alpha);
    Ok(AugmentedSample {
        image,
        shape: shape.rotate_about_up(shape_rotation),
        shape_rotation,
        pose,
    })
}

/// Draws augmentation parameters from `rng` under `policy` and applies them:
/// optional horizontal flip, crop jitter and color jitter, plus the always-on
/// shape-azimuth randomization.
pub fn augment<R: Rng>(
    sample: &Sample,
    shape: &TriangleMesh,
    policy: &AugmentPolicy,
    rng: &mut R,
) -> Result<AugmentedSample> {
    policy.validate()?;
    apply_augment(sample, shape, &draw_augment_params(policy, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::render_view;
    use crate::rot::AngleBinning;
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::PI;

    fn tiny_cfg() -> DatagenConfig {
        DatagenConfig {
            views_per_shape: 3,
            points_per_cloud: 60,
            image_size: 16,
            view_size: 16,
            n_azi: 2,
            elevations_deg: vec![0.0, 30.0],
            seed: 11,
            ..DatagenConfig::default()
        }
    }

    fn opts64() -> RenderOptions {
        RenderOptions::default()
    }

    #[test]
    fn cuboid_is_base_box_plus_marker() {
        let mesh = &make_procedural_shapes(1, ShapeFamily::Cuboid, 7).unwrap()[0];
        assert_eq!(mesh.faces().len(), 24);
        assert_eq!(mesh.vertices().len(), 16);
    }

    #[test]
    fn every_family_is_normalized_and_azimuthally_asymmetric() {
        for family in ShapeFamily::ALL {
            for (i, mesh) in make_procedural_shapes(2, family, 3)
                .unwrap()
                .iter()
                .enumerate()
            {
                assert!(
                    mesh.max_vertex_norm() <= 1.0 + 1e-6,
                    "{family} #{i} not normalized"
                );
                assert!(
                    breaks_azimuthal_symmetry(mesh, SYMMETRY_TOL),
                    "{family} #{i} has a nontrivial yaw symmetry"
                );
            }
        }
    }

    #[test]
    fn same_seed_reproduces_meshes_and_prefixes_agree() {
        let a = make_procedural_shapes(3, ShapeFamily::LShape, 11).unwrap();
        let b = make_procedural_shapes(3, ShapeFamily::LShape, 11).unwrap();
        let prefix = make_procedural_shapes(2, ShapeFamily::LShape, 11).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.vertices(), y.vertices());
            assert_eq!(x.faces(), y.faces());
        }
        for (x, y) in prefix.iter().zip(&a) {
            assert_eq!(x.vertices(), y.vertices());
        }
        let other = make_procedural_shapes(3, ShapeFamily::LShape, 12).unwrap();
        assert_ne!(a[0].vertices(), other[0].vertices());
    }

    #[test]
    fn symmetry_checker_sees_plain_solids_as_symmetric() {
        let plain = symmetric_test_cuboid();
        assert!(
            !breaks_azimuthal_symmetry(&plain, SYMMETRY_TOL),
            "a plain box has a 180-degree yaw symmetry"
        );
        assert!(!is_chiral(&plain, SYMMETRY_TOL));

        let mut b = MeshBuilder::new();
        b.add_prism([0.0, 0.0, 0.0], 0.6, 0.5, 12);
        let prism = b.build().unwrap();
        assert!(
            !breaks_azimuthal_symmetry(&prism, SYMMETRY_TOL),
            "a 12-gon prism has 30-degree yaw symmetry"
        );

        let marked = &make_procedural_shapes(1, ShapeFamily::Cuboid, 5).unwrap()[0];
        assert!(is_chiral(marked, SYMMETRY_TOL), "marker placement is chiral");
    }

    #[test]
    fn shape_generation_rejects_zero_count() {
        assert!(make_procedural_shapes(0, ShapeFamily::Cuboid, 1).is_err());
        assert!(make_shape_set(&[], 1).is_err());
        assert!(make_shape_set(&[(ShapeFamily::Cuboid, 0)], 1).is_err());
        assert!(make_shape_set(
            &[(ShapeFamily::Cuboid, 1), (ShapeFamily::Cuboid, 1)],
            1
        )
        .is_err());
    }

    #[test]
    fn stream_rng_is_deterministic_and_tag_separated() {
        let mut a = stream_rng(5, "sample:x");
        let mut b = stream_rng(5, "sample:x");
        assert_eq!(a.gen::<u64>(), b.gen::<u64>());
        let mut c = stream_rng(5, "sample:y");
        let mut d = stream_rng(6, "sample:x");
        let reference = stream_rng(5, "sample:x").gen::<u64>();
        assert_ne!(reference, c.gen::<u64>());
        assert_ne!(reference, d.gen::<u64>());
    }

    #[test]
    fn pose_distribution_respects_ranges() {
        let dist = PoseDistribution::default();
        let mut rng = stream_rng(1, "poses");
        for _ in 0..500 {
            let pose = dist.sample(&mut rng).unwrap();
            assert!((-PI..PI).contains(&pose.azimuth()));
            assert!((0.0..60f64.to_radians()).contains(&pose.elevation()));
            assert!(pose.inplane().abs() <= 15f64.to_radians() + 1e-12);
        }
        let pinned = PoseDistribution {
            azi_deg: (30.0, 30.0),
            ele_deg: (10.0, 10.0),
            inp_deg: (0.0, 0.0),
        };
        let pose = pinned.sample(&mut rng).unwrap();
        assert!((pose.azimuth() - 30f64.to_radians()).abs() < 1e-12);
        let bad = PoseDistribution {
            ele_deg: (-100.0, 0.0),
            ..PoseDistribution::default()
        };
        assert!(bad.validate().is_err());
    }

    fn empty_view(size: usize) -> RenderedView {
        let mesh = TriangleMesh::new(Vec::new(), Vec::new()).unwrap();
        let opts = RenderOptions {
            width: size,
            height: size,
            ..RenderOptions::default()
        };
        render_view_with_mask(&mesh, &Camera::at_angles(0.0, 0.0).unwrap(), 0.0, &opts).unwrap()
    }

    #[test]
    fn solid_black_background_on_empty_mesh_gives_black_image() {
        let mesh = TriangleMesh::new(Vec::new(), Vec::new()).unwrap();
        let mut rng = stream_rng(3, "bg");
        let image = render_sample_image(
            &mesh,
            EulerPose::from_degrees(20.0, 10.0, 5.0).unwrap(),
            DEFAULT_DISTANCE,
            &BackgroundMode::Solid {
                color: [0.0, 0.0, 0.0],
            },
            &opts64(),
            &mut rng,
        )
        .unwrap();
        assert!(image.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_and_noise_backgrounds_vary_and_stay_in_range() {
        for mode in [BackgroundMode::Gradient, BackgroundMode::Noise] {
            let mut view = empty_view(32);
            let mut rng = stream_rng(9, "bg");
            paint_background(&mut view, &mode, &mut rng);
            let data = view.image.data();
            assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
            let first = data[0];
            assert!(
                data.iter().any(|&v| (v - first).abs() > 1e-3),
                "{mode:?} background came out constant"
            );
            // Same stream, same background.
            let mut again = empty_view(32);
            let mut rng = stream_rng(9, "bg");
            paint_background(&mut again, &mode, &mut rng);
            assert_eq!(view.image, again.image);
        }
    }

    #[test]
    fn generated_dataset_has_consistent_manifest_and_assets() {
        let dir = tempfile::tempdir().unwrap();
        let shapes =
            make_shape_set(&[(ShapeFamily::Cuboid, 1), (ShapeFamily::LShape, 1)], 5).unwrap();
        let cfg = tiny_cfg();
        let ds = generate_dataset(dir.path(), &shapes, &cfg, "cfghash").unwrap();
        assert_eq!(ds.manifest.shapes.len(), 2);
        assert_eq!(ds.manifest.samples.len(), 6);
        assert_eq!(ds.manifest.seed, 11);

        let reopened = Dataset::open(dir.path()).unwrap();
        assert_eq!(reopened.manifest, ds.manifest);
        reopened.check_config("cfghash").unwrap();
        assert!(reopened.check_config("other").is_err());

        for shape in &ds.manifest.shapes {
            assert!(shape.meta.diameter > 0.0);
            assert!(!shape.meta.symmetric, "marked shapes are asymmetric");
            let views = ds.load_views(shape).unwrap();
            assert_eq!(views.images.len(), 4);
            let cloud = ds.load_points(shape).unwrap();
            assert_eq!(cloud.len(), 60);
            let mesh = ds.load_mesh(shape).unwrap();
            assert!(mesh.max_vertex_norm() <= 1.0 + 1e-6);
        }
        for entry in &ds.manifest.samples {
            let sample = ds.load_sample(entry).unwrap();
            assert_eq!(sample.image.width(), 16);
            assert!((0.0..=60.0).contains(&entry.ele_deg));
            assert!(entry.inp_deg.abs() <= 15.0);
        }
    }

    fn tree_files(root: &Path) -> Vec<(String, Vec<u8>)> {
        fn walk(dir: &Path, root: &Path, out: &mut Vec<(String, Vec<u8>)>) {
            let mut entries: Vec<_> = fs::read_dir(dir)
                .unwrap()
                .map(|e| e.unwrap().path())
                .collect();
            entries.sort();
            for path in entries {
                if path.is_dir() {
                    walk(&path, root, out);
                } else {
                    let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                    out.push((rel, fs::read(&path).unwrap()));
                }
            }
        }
        let mut out = Vec::new();
        walk(root, root, &mut out);
        out
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let shapes = make_shape_set(&[(ShapeFamily::Composite, 1)], 2).unwrap();
        let cfg = tiny_cfg();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        generate_dataset(dir_a.path(), &shapes, &cfg, "h").unwrap();
        generate_dataset(dir_b.path(), &shapes, &cfg, "h").unwrap();
        let a = tree_files(dir_a.path());
        let b = tree_files(dir_b.path());
        let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
        let names_b: Vec<&str> = b.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, names_b);
        for ((name, bytes_a), (_, bytes_b)) in a.iter().zip(&b) {
            assert!(bytes_a == bytes_b, "file {name} differs between runs");
        }
    }

    #[test]
    fn dataset_open_rejects_missing_assets_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let shapes = make_shape_set(&[(ShapeFamily::Cuboid, 1)], 5).unwrap();
        let ds = generate_dataset(dir.path(), &shapes, &tiny_cfg(), "h").unwrap();
        fs::remove_file(dir.path().join(&ds.manifest.samples[0].image)).unwrap();
        assert!(Dataset::open(dir.path()).is_err());

        let json = r#"{"seed": 1, "config_sha256": "x", "shapes": [], "samples": [], "extra": 1}"#;
        assert!(serde_json::from_str::<DatasetManifest>(json).is_err());
    }

    #[test]
    fn novel_shape_split_holds_out_whole_families() {
        let dir = tempfile::tempdir().unwrap();
        let shapes =
            make_shape_set(&[(ShapeFamily::Cuboid, 2), (ShapeFamily::LShape, 1)], 5).unwrap();
        let cfg = DatagenConfig {
            split: SplitMode::NovelShape {
                holdout: vec![ShapeFamily::LShape],
                val_frac: 0.5,
            },
            ..tiny_cfg()
        };
        let ds = generate_dataset(dir.path(), &shapes, &cfg, "h").unwrap();
        for sample in &ds.manifest.samples {
            if sample.shape_id.starts_with("l_shape") {
                assert_eq!(sample.split, Split::Test);
            } else {
                assert_ne!(sample.split, Split::Test);
            }
        }
        // No shape contributes to both val and test.
        for shape in &ds.manifest.shapes {
            let splits: HashSet<Split> = ds
                .manifest
                .samples
                .iter()
                .filter(|s| s.shape_id == shape.meta.id)
                .map(|s| s.split)
                .collect();
            assert!(!(splits.contains(&Split::Val) && splits.contains(&Split::Test)));
        }
    }

    #[test]
    fn random_split_partition_is_deterministic() {
        let mode = SplitMode::Random {
            val_frac: 0.25,
            test_frac: 0.25,
        };
        let a: Vec<Split> = (0..40)
            .map(|i| mode.assign(ShapeFamily::Cuboid, &format!("s{i}"), 7))
            .collect();
        let b: Vec<Split> = (0..40)
            .map(|i| mode.assign(ShapeFamily::Cuboid, &format!("s{i}"), 7))
            .collect();
        assert_eq!(a, b);
        for split in [Split::Train, Split::Val, Split::Test] {
            assert!(a.contains(&split), "{split} never drawn over 40 samples");
        }
    }

    #[test]
    fn label_remap_matches_render_equivariance() {
        let shape = &make_procedural_shapes(1, ShapeFamily::Cuboid, 2).unwrap()[0];
        let opts = opts64();
        let cases = [
            (30f64, 45f64, 0f64),
            (100.0, -30.0, 25.0),
            (-140.0, 12.5, -60.0),
        ];
        for (azi_deg, alpha_deg, beta_deg) in cases {
            let (alpha, beta) = (alpha_deg.to_radians(), beta_deg.to_radians());
            let azi = azi_deg.to_radians();
            let ele = 15f64.to_radians();
            let inp = 5f64.to_radians();
            let rotated = shape.rotate_about_up(-alpha);
            let cam_a = Camera::at_angles(azi - alpha + beta, ele).unwrap();
            let cam_b = Camera::at_angles(azi + beta, ele).unwrap();
            let img_a = render_view(&rotated, &cam_a, inp, &opts).unwrap();
            let img_b = render_view(shape, &cam_b, inp, &opts).unwrap();
            assert!(
                img_a.mean_abs_diff(&img_b) < 1e-3,
                "remap mismatch at azi={azi_deg}, alpha={alpha_deg}, beta={beta_deg}"
            );
        }
    }

    fn rendered_sample(shape: &TriangleMesh, pose: EulerPose) -> Sample {
        let camera = Camera::at_angles(pose.azimuth(), pose.elevation()).unwrap();
        let image = render_view(shape, &camera, pose.inplane(), &opts64()).unwrap();
        Sample {
            id: "t_v00".into(),
            image,
            shape_id: "t".into(),
            pose,
            split: Split::Train,
        }
    }

    #[test]
    fn azimuth_randomization_keeps_the_triple_consistent() {
        let shape = &make_procedural_shapes(1, ShapeFamily::Composite, 4).unwrap()[0];
        let pose = EulerPose::from_degrees(30.0, 20.0, -8.0).unwrap();
        let sample = rendered_sample(shape, pose);
        let alpha = 45f64.to_radians();
        let params = AugmentParams {
            alpha,
            ..AugmentParams::identity()
        };
        let aug = apply_augment(&sample, shape, &params).unwrap();
        assert!((aug.pose.azimuth() - (-15f64).to_radians()).abs() < 1e-12);
        assert!((aug.shape_rotation + alpha).abs() < 1e-12);
        // Rendering the rotated shape at the remapped pose reproduces the
        // original query image.
        let rerendered = rendered_sample(&aug.shape, aug.pose);
        assert!(rerendered.image.mean_abs_diff(&aug.image) < 1e-3);
    }

    #[test]
    fn identity_params_change_nothing() {
        let shape = symmetric_test_cuboid();
        let pose = EulerPose::from_degrees(40.0, 25.0, 10.0).unwrap();
        let sample = rendered_sample(&shape, pose);
        let aug = apply_augment(&sample, &shape, &AugmentParams::identity()).unwrap();
        assert_eq!(aug.image, sample.image);
        assert_eq!(aug.pose, sample.pose);
        assert_eq!(aug.shape.vertices(), shape.vertices());
    }

    #[test]
    fn flip_twice_restores_image_and_pose() {
        let shape = symmetric_test_cuboid();
        let pose = EulerPose::from_degrees(40.0, 25.0, 10.0).unwrap();
        let sample = rendered_sample(&shape, pose);
        let params = AugmentParams {
            flip: true,
            ..AugmentParams::identity()
        };
        let once = apply_augment(&sample, &shape, &params).unwrap();
        assert_ne!(once.image, sample.image);
        let twice_sample = Sample {
            image: once.image.clone(),
            pose: once.pose,
            ..sample.clone()
        };
        let twice = apply_augment(&twice_sample, &shape, &params).unwrap();
        assert_eq!(twice.image, sample.image);
        assert!((twice.pose.azimuth() - pose.azimuth()).abs() < 1e-12);
        assert!((twice.pose.inplane() - pose.inplane()).abs() < 1e-12);
    }

    #[test]
    fn flip_remap_matches_mirrored_render_on_symmetric_shape() {
        let shape = symmetric_test_cuboid();
        for (azi, ele, inp) in [(40.0, 20.0, 10.0), (-75.0, 35.0, -12.0)] {
            let pose = EulerPose::from_degrees(azi, ele, inp).unwrap();
            let sample = rendered_sample(&shape, pose);
            let mirrored_image = flip_horizontal(&sample.image);
            let at_mirrored_pose = rendered_sample(&shape, pose.mirrored_lr());
            assert!(
                mirrored_image.mean_abs_diff(&at_mirrored_pose.image) < 1e-3,
                "flip remap mismatch at ({azi}, {ele}, {inp})"
            );
        }
    }

    #[test]
    fn crop_of_constant_image_is_constant() {
        let img = Image::filled(3, 16, 16, &[0.37, 0.37, 0.37]).unwrap();
        for inset in [[0.0; 4], [0.1, 0.02, 0.05, 0.08], [0.49; 4]] {
            let out = crop_resize(&img, inset).unwrap();
            assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-6));
        }
        assert!(crop_resize(&img, [0.5, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn color_adjust_clamps_and_skips_extra_channels() {
        let mut img = Image::filled(4, 8, 8, &[0.9, 0.05, 0.5, 0.7]).unwrap();
        img.set(0, 0, 0, 1.0);
        let out = color_adjust(&img, [1.2, 1.0, 1.0], -0.1);
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(out.get(0, 0, 0), 1.0); // 1.0 * 1.2 - 0.1 = 1.1 -> clamp
        assert_eq!(out.get(3, 2, 2), 0.7); // fourth channel untouched
        assert!((out.get(1, 1, 1) - 0.0).abs() < 1e-6); // 0.05 - 0.1 clamps at 0
    }

    #[test]
    fn augmentation_is_deterministic_per_stream() {
        let shape = &make_procedural_shapes(1, ShapeFamily::Cylinder, 6).unwrap()[0];
        let pose = EulerPose::from_degrees(70.0, 30.0, 4.0).unwrap();
        let sample = rendered_sample(shape, pose);
        let policy = AugmentPolicy::default();
        let params_a = draw_augment_params(&policy, &mut stream_rng(8, "augment:t:0"));
        let params_b = draw_augment_params(&policy, &mut stream_rng(8, "augment:t:0"));
        assert_eq!(params_a, params_b);
        let a = augment(&sample, shape, &policy, &mut stream_rng(8, "augment:t:0")).unwrap();
        let b = augment(&sample, shape, &policy, &mut stream_rng(8, "augment:t:0")).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.pose, b.pose);
        assert!(a.pose.azimuth().abs() <= PI);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn augmented_poses_still_encode_and_round_trip(
            azi in -180f64..180.0,
            ele in 0f64..60.0,
            inp in -15f64..15.0,
            alpha_deg in -45f64..45.0,
            flip: bool,
        ) {
            let binning = AngleBinning::new(24, 12, 24).unwrap();
            let mut pose = EulerPose::from_degrees(azi, ele, inp).unwrap();
            if flip {
                pose = pose.mirrored_lr();
            }
            pose = pose.shift_azimuth(alpha_deg.to_radians());
            let binned = binning.encode(&pose);
            for (i, &label) in binned.labels.iter().enumerate() {
                prop_assert!(label < binning.counts()[i]);
            }
            for &offset in &binned.offsets {
                prop_assert!((-1.0..=1.0).contains(&offset));
            }
            let decoded = binning.decode(&binned);
            prop_assert!(wrap_angle(decoded.azimuth() - pose.azimuth()).abs() < 1e-9);
            prop_assert!((decoded.elevation() - pose.elevation()).abs() < 1e-9);
            prop_assert!(wrap_angle(decoded.inplane() - pose.inplane()).abs() < 1e-9);
        }
    }
}
