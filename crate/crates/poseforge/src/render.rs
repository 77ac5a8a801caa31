//! Software rasterizer producing the query images and canonical view sets.
//!
//! The camera orbits the origin: it sits at `distance` along its optical axis,
//! always looking at the origin, with the viewpoint given by the same
//! (azimuth, elevation, in-plane) angles that label a pose. A world point `p`
//! maps to camera space as `R * p + (0, 0, -distance)` with
//! `R = euler_to_matrix(azimuth, elevation, inplane)`, then through a
//! perspective projection with square pixels. Rendering a mesh rotated by
//! `alpha` about +Y from azimuth `a` therefore equals rendering the original
//! mesh from azimuth `a - alpha`.
//!
//! Shading is flat: one Lambertian intensity per face from a headlight along
//! the camera axis, double-sided, plus a small ambient floor. Rasterization uses
//! pixel-center edge tests and a z-buffer keyed on 1/depth; ties keep the
//! earlier face in mesh order, so output is a pure function of the inputs.
//!
//! Images hold planar f32 channels in [0, 1]: RGB, then optionally depth
//! (camera-ray depth over `distance + 2`, background 1) and the camera-space
//! normal remapped to [0, 1]. They serialize to PNG for inspection and to the
//! raw `PFSIMG` tensor format (8-byte magic `PFSIMG\0\x01`, u32 channels,
//! height, width, then little-endian f32 planes) for training.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rot::{wrap_angle, EulerPose};
use crate::shape::TriangleMesh;

/// Magic header of the raw image tensor format.
pub const IMAGE_MAGIC: [u8; 8] = *b"PFSIMG\0\x01";

/// Default camera distance from the origin.
pub const DEFAULT_DISTANCE: f64 = 2.5;

/// Default vertical field of view: 50 degrees.
pub const DEFAULT_FOV: f64 = 50.0 * std::f64::consts::PI / 180.0;

/// Meshes are rejected when their maximum vertex norm exceeds 1 by more than
/// this.
pub const NORMALIZED_TOL: f64 = 1e-6;

/// Smallest accepted image side length.
pub const MIN_DIM: usize = 8;

/// Planar multi-channel raster, values in [0, 1], at least 8x8.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    /// Allocates an image filled with `fill` per channel.
    pub fn filled(channels: usize, height: usize, width: usize, fill: &[f32]) -> Result<Image> {
        if channels == 0 || fill.len() != channels {
            return Err(Error::invalid(format!(
                "fill has {} values for {channels} channels",
                fill.len()
            )));
        }
        if height < MIN_DIM || width < MIN_DIM {
            return Err(Error::invalid(format!(
                "image {width}x{height} is smaller than {MIN_DIM}x{MIN_DIM}"
            )));
        }
        let mut data = Vec::with_capacity(channels * height * width);
        for &value in fill {
            data.extend(std::iter::repeat_n(value, height * width));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    /// Wraps existing planar data; `data.len()` must equal
    /// `channels * height * width` and every value must be finite.
    pub fn from_data(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Image> {
        if height < MIN_DIM || width < MIN_DIM || channels == 0 {
            return Err(Error::invalid(format!(
                "bad image dims {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::invalid(format!(
                "data has {} values, dims need {}",
                data.len(),
                channels * height * width
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("image data contains non-finite values"));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Mean absolute per-value difference; panics on mismatched dims.
    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        assert_eq!(
            (self.channels, self.height, self.width),
            (other.channels, other.height, other.width),
            "image dims differ"
        );
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        sum / self.data.len() as f64
    }

    /// Writes the first three channels (or a replicated single channel) as an
    /// 8-bit PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let to_u8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let mut buf = image::RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let px = if self.channels >= 3 {
                    [
                        to_u8(self.get(0, y, x)),
                        to_u8(self.get(1, y, x)),
                        to_u8(self.get(2, y, x)),
                    ]
                } else {
                    let g = to_u8(self.get(0, y, x));
                    [g, g, g]
                };
                buf.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::format(path, format!("png encode failed: {e}")))
    }

    /// Loads an 8-bit PNG as a 3-channel image with values in [0, 1].
    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path)
            .map_err(|e| Error::format(path, format!("png decode failed: {e}")))?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        if w < MIN_DIM || h < MIN_DIM {
            return Err(Error::format(path, format!("image {w}x{h} is too small")));
        }
        let mut data = vec![0f32; 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                let px = img.get_pixel(x as u32, y as u32);
                for c in 0..3 {
                    data[(c * h + y) * w + x] = px[c] as f32 / 255.0;
                }
            }
        }
        Image::from_data(3, h, w, data)
    }

    /// Writes the raw `PFSIMG` tensor form.
    pub fn save_tensor(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(&IMAGE_MAGIC).map_err(io)?;
        w.write_u32::<LittleEndian>(self.channels as u32).map_err(io)?;
        w.write_u32::<LittleEndian>(self.height as u32).map_err(io)?;
        w.write_u32::<LittleEndian>(self.width as u32).map_err(io)?;
        for &v in &self.data {
            w.write_f32::<LittleEndian>(v).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Reads a `PFSIMG` tensor, rejecting bad magic, bad dims, truncation and
    /// trailing bytes.
    pub fn load_tensor(path: &Path) -> Result<Image> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = bytes.as_slice();
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::format(path, "file shorter than the 8-byte magic"))?;
        if magic != IMAGE_MAGIC {
            return Err(Error::format(path, "bad magic, not a PFSIMG tensor"));
        }
        let mut dim = || {
            r.read_u32::<LittleEndian>()
                .map_err(|_| Error::format(path, "missing dimension header"))
        };
        let (c, h, w) = (dim()? as usize, dim()? as usize, dim()? as usize);
        let expected = c * h * w * 4;
        if r.len() != expected {
            return Err(Error::format(
                path,
                format!("payload is {} bytes, dims need {expected}", r.len()),
            ));
        }
        let mut data = vec![0f32; c * h * w];
        for v in &mut data {
            *v = r
                .read_f32::<LittleEndian>()
                .map_err(|_| Error::format(path, "truncated tensor data"))?;
            if !v.is_finite() {
                return Err(Error::format(path, "tensor contains non-finite values"));
            }
        }
        Image::from_data(c, h, w, data).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Orbit camera: always aimed at the origin from the given viewpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
    pub fov_y: f64,
}

impl Camera {
    /// Validates the viewpoint: elevation in [-pi/2, pi/2], distance > 1 (the
    /// camera must stay outside the normalized shape), fov in (0, pi).
    pub fn new(azimuth: f64, elevation: f64, distance: f64, fov_y: f64) -> Result<Camera> {
        if ![azimuth, elevation, distance, fov_y]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::invalid("camera parameters must be finite"));
        }
        use std::f64::consts::{FRAC_PI_2, PI};
        if !(-FRAC_PI_2..=FRAC_PI_2).contains(&elevation) {
            return Err(Error::invalid(format!(
                "camera elevation {elevation} rad outside [-pi/2, pi/2]"
            )));
        }
        if distance <= 1.0 {
            return Err(Error::invalid(format!(
                "camera distance {distance} must exceed 1 (normalized shapes reach norm 1)"
            )));
        }
        if !(fov_y > 0.0 && fov_y < PI) {
            return Err(Error::invalid(format!(
                "field of view {fov_y} rad outside (0, pi)"
            )));
        }
        Ok(Camera {
            azimuth: wrap_angle(azimuth),
            elevation,
            distance,
            fov_y,
        })
    }

    /// Camera at the default distance and field of view.
    pub fn at_angles(azimuth: f64, elevation: f64) -> Result<Camera> {
        Camera::new(azimuth, elevation, DEFAULT_DISTANCE, DEFAULT_FOV)
    }
}

/// Raster settings shared by all cameras of a render batch.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOptions {
    pub width: usize,
    pub height: usize,
    /// Solid background color behind the shape.
    pub background: [f32; 3],
    /// Flat object color before shading.
    pub albedo: [f32; 3],
    /// Ambient floor added under the headlight term.
    pub ambient: f32,
    /// Append a depth channel (ray depth over `distance + 2`, background 1).
    pub include_depth: bool,
    /// Append camera-space normals remapped to [0, 1] (background 0.5).
    pub include_normals: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            width: 64,
            height: 64,
            background: [0.0, 0.0, 0.0],
            albedo: [0.85, 0.85, 0.85],
            ambient: 0.15,
            include_depth: false,
            include_normals: false,
        }
    }
}

impl RenderOptions {
    fn validate(&self) -> Result<()> {
        if self.width != self.height {
            return Err(Error::invalid(format!(
                "render target must be square, got {}x{}",
                self.width, self.height
            )));
        }
        if self.width < MIN_DIM {
            return Err(Error::invalid(format!(
                "render target {}x{} is smaller than {MIN_DIM}x{MIN_DIM}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// Total channel count of rendered images.
    pub fn channel_count(&self) -> usize {
        3 + usize::from(self.include_depth) + 3 * usize::from(self.include_normals)
    }
}

/// A rendered view plus its coverage mask (true where the shape is visible).
#[derive(Clone, Debug)]
pub struct RenderedView {
    pub image: Image,
    pub mask: Vec<bool>,
}

/// Canonical multi-view rendering of one shape: images in camera order.
#[derive(Clone, Debug)]
pub struct ViewSet {
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
}

/// Cameras on azimuth rings: elevation-major, azimuth-minor, azimuths
/// ascending from 0 in steps of `2*pi / n_azi`, default field of view.
pub fn place_cameras(n_azi: usize, elevations: &[f64], distance: f64) -> Result<Vec<Camera>> {
    if n_azi == 0 {
        return Err(Error::invalid("need at least one azimuth step"));
    }
    if elevations.is_empty() {
        return Err(Error::invalid("need at least one elevation ring"));
    }
    for &ele in elevations {
        if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&ele) {
            return Err(Error::invalid(format!(
                "view-set elevation {ele} rad outside [0, pi/2]"
            )));
        }
    }
    let mut cams = Vec::with_capacity(n_azi * elevations.len());
    for &ele in elevations {
        for k in 0..n_azi {
            let azi = k as f64 * std::f64::consts::TAU / n_azi as f64;
            cams.push(Camera::new(azi, ele, distance, DEFAULT_FOV)?);
        }
    }
    Ok(cams)
}

/// Renders one view over the solid background color.
///
/// The mesh must be normalized (maximum vertex norm at most `1 + 1e-6`); an
/// empty mesh yields a pure background image.
pub fn render_view(
    mesh: &TriangleMesh,
    camera: &Camera,
    inplane: f64,
    opts: &RenderOptions,
) -> Result<Image> {
    Ok(render_view_with_mask(mesh, camera, inplane, opts)?.image)
}

/// Like [`render_view`], also returning the per-pixel coverage mask used for
/// background compositing.
pub fn render_view_with_mask(
    mesh: &TriangleMesh,
    camera: &Camera,
    inplane: f64,
    opts: &RenderOptions,
) -> Result<RenderedView> {
    opts.validate()?;
    let norm = mesh.max_vertex_norm();
    if norm > 1.0 + NORMALIZED_TOL {
        return Err(Error::invalid(format!(
            "mesh is not normalized: max vertex norm {norm:.6} exceeds 1"
        )));
    }
    let pose = EulerPose::new(camera.azimuth, camera.elevation, inplane)?;
    let rot = pose.to_matrix();
    let (w, h) = (opts.width, opts.height);
    let npix = w * h;
    let far = camera.distance + 2.0;
    let focal = 1.0 / (camera.fov_y / 2.0).tan();

    let mut color = vec![opts.background; npix];
    let mut normal = vec![[0.5f32; 3]; npix];
    let mut invz = vec![0f64; npix];
    let mut mask = vec![false; npix];

    for fi in 0..mesh.faces().len() {
        let corners = mesh.face_vertices(fi);
        let cam: Vec<[f64; 3]> = corners
            .iter()
            .map(|&p| {
                let q = rot.apply(p);
                [q[0], q[1], q[2] - camera.distance]
            })
            .collect();
        if cam.iter().any(|p| -p[2] < 1e-6) {
            continue;
        }

        // Flat shading: per-face normal, headlight along the camera axis.
        // The constant light direction (0, 0, 1) keeps the shade a function
        // of the face plane alone, so congruent geometry (rotated or
        // mirrored) shades identically regardless of how its quads are
        // triangulated.
        let e1 = sub3(cam[1], cam[0]);
        let e2 = sub3(cam[2], cam[0]);
        let n = cross3(e1, e2);
        let n_len = norm3(n);
        if n_len < 1e-18 {
            continue;
        }
        let mut n_hat = [n[0] / n_len, n[1] / n_len, n[2] / n_len];
        let mut lambert = n_hat[2];
        if lambert < 0.0 {
            // Double-sided: orient the normal toward the camera.
            n_hat = [-n_hat[0], -n_hat[1], -n_hat[2]];
            lambert = -lambert;
        }
        let intensity = opts.ambient + (1.0 - opts.ambient) * lambert as f32;
        let shade = [
            opts.albedo[0] * intensity,
            opts.albedo[1] * intensity,
            opts.albedo[2] * intensity,
        ];
        let n_enc = [
            (n_hat[0] as f32 + 1.0) / 2.0,
            (n_hat[1] as f32 + 1.0) / 2.0,
            (n_hat[2] as f32 + 1.0) / 2.0,
        ];

        // Screen coordinates with pixel centers at (x + 0.5, y + 0.5).
        let mut sx = [0f64; 3];
        let mut sy = [0f64; 3];
        let mut sw = [0f64; 3];
        for k in 0..3 {
            let depth = -cam[k][2];
            sx[k] = (focal * cam[k][0] / depth * 0.5 + 0.5) * w as f64;
            sy[k] = (0.5 - focal * cam[k][1] / depth * 0.5) * h as f64;
            sw[k] = 1.0 / depth;
        }
        let area2 = (sx[1] - sx[0]) * (sy[2] - sy[0]) - (sy[1] - sy[0]) * (sx[2] - sx[0]);
        if area2.abs() < 1e-12 {
            continue;
        }
        let inv_area = 1.0 / area2;

        let x_lo = sx.iter().cloned().fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let x_hi = (sx.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil() as usize).min(w);
        let y_lo = sy.iter().cloned().fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let y_hi = (sy.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil() as usize).min(h);

        for py in y_lo..y_hi {
            let cy = py as f64 + 0.5;
            for px in x_lo..x_hi {
                let cx = px as f64 + 0.5;
                let l0 = ((sx[2] - sx[1]) * (cy - sy[1]) - (sy[2] - sy[1]) * (cx - sx[1])) * inv_area;
                let l1 = ((sx[0] - sx[2]) * (cy - sy[2]) - (sy[0] - sy[2]) * (cx - sx[2])) * inv_area;
                let l2 = ((sx[1] - sx[0]) * (cy - sy[0]) - (sy[1] - sy[0]) * (cx - sx[0])) * inv_area;
                if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                    continue;
                }
                let wz = l0 * sw[0] + l1 * sw[1] + l2 * sw[2];
                let idx = py * w + px;
                if wz > invz[idx] {
                    invz[idx] = wz;
                    color[idx] = shade;
                    normal[idx] = n_enc;
                    mask[idx] = true;
                }
            }
        }
    }

    let channels = opts.channel_count();
    let mut data = Vec::with_capacity(channels * npix);
    for c in 0..3 {
        data.extend(color.iter().map(|px| px[c].clamp(0.0, 1.0)));
    }
    if opts.include_depth {
        data.extend(mask.iter().zip(&invz).map(|(&m, &wz)| {
            if m {
                ((1.0 / wz) / far).clamp(0.0, 1.0) as f32
            } else {
                1.0
            }
        }));
    }
    if opts.include_normals {
        for c in 0..3 {
            data.extend(normal.iter().map(|n| n[c].clamp(0.0, 1.0)));
        }
    }
    let image = Image::from_data(channels, h, w, data)?;
    Ok(RenderedView { image, mask })
}

/// Renders the mesh from every camera with in-plane angle 0. Views render in
/// parallel but land in camera order.
pub fn render_view_set(
    mesh: &TriangleMesh,
    cameras: &[Camera],
    opts: &RenderOptions,
) -> Result<ViewSet> {
    if cameras.is_empty() {
        return Err(Error::invalid("view set needs at least one camera"));
    }
    let images = cameras
        .par_iter()
        .map(|cam| render_view(mesh, cam, 0.0, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(ViewSet {
        cameras: cameras.to_vec(),
        images,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewSetManifest {
    config_sha256: String,
    cameras: Vec<CameraRecord>,
    images: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRecord {
    azi_deg: f64,
    ele_deg: f64,
    distance: f64,
    fov_deg: f64,
}

impl ViewSet {
    /// Writes a JSON manifest at `path` plus one `PFSIMG` tensor per view in
    /// a sibling directory named after the manifest stem.
    pub fn save(&self, path: &Path, config_sha256: &str) -> Result<()> {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::format(path, "manifest path has no stem"))?
            .to_string();
        let parent = path.parent().unwrap_or_else(|| Path::new("."));
        let img_dir = parent.join(&stem);
        fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
        let mut images = Vec::with_capacity(self.images.len());
        for (k, img) in self.images.iter().enumerate() {
            let rel = format!("{stem}/view_{k:02}.pfsimg");
            img.save_tensor(&parent.join(&rel))?;
            images.push(rel);
        }
        let manifest = ViewSetManifest {
            config_sha256: config_sha256.to_string(),
            cameras: self
                .cameras
                .iter()
                .map(|c| CameraRecord {
                    azi_deg: c.azimuth.to_degrees(),
                    ele_deg: c.elevation.to_degrees(),
                    distance: c.distance,
                    fov_deg: c.fov_y.to_degrees(),
                })
                .collect(),
            images,
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::format(path, e.to_string()))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// Loads a view-set manifest and its image tensors.
    pub fn load(path: &Path) -> Result<ViewSet> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: ViewSetManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if manifest.cameras.len() != manifest.images.len() {
            return Err(Error::format(
                path,
                format!(
                    "{} cameras but {} images",
                    manifest.cameras.len(),
                    manifest.images.len()
                ),
            ));
        }
        let parent = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        let cameras = manifest
            .cameras
            .iter()
            .map(|c| {
                Camera::new(
                    c.azi_deg.to_radians(),
                    c.ele_deg.to_radians(),
                    c.distance,
                    c.fov_deg.to_radians(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let images = manifest
            .images
            .iter()
            .map(|rel| Image::load_tensor(&resolve_rel(&parent, rel)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ViewSet { cameras, images })
    }
}

fn resolve_rel(parent: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        parent.join(p)
    }
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}
