//! Triangle meshes, point clouds, OBJ parsing and surface sampling.
//!
//! Meshes are plain indexed triangle soups; no watertightness or manifold
//! structure is assumed anywhere. The canonical object frame keeps +Y up, and
//! shapes fed to the renderer or encoders are normalized: vertex centroid at
//! the origin, maximum vertex norm 1.
//!
//! Point clouds round-trip through the `PFSPC` binary format: an 8-byte magic
//! `PFSPC\0\0\x01`, a little-endian u64 point count, then xyz triples as
//! little-endian f32.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rot::RotationMatrix;

/// Magic header of the binary point-cloud format.
pub const POINT_CLOUD_MAGIC: [u8; 8] = *b"PFSPC\0\0\x01";

/// Indexed triangle mesh. May be empty; faces always reference valid
/// vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    /// Builds a mesh, checking index bounds and coordinate finiteness.
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self> {
        for (i, v) in vertices.iter().enumerate() {
            if !v.iter().all(|c| c.is_finite()) {
                return Err(Error::invalid(format!(
                    "vertex {i} has non-finite coordinates"
                )));
            }
        }
        for (i, f) in faces.iter().enumerate() {
            for &idx in f {
                if idx >= vertices.len() {
                    return Err(Error::invalid(format!(
                        "face {i} references vertex {idx} but only {} exist",
                        vertices.len()
                    )));
                }
            }
        }
        Ok(TriangleMesh { vertices, faces })
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// Corner positions of face `i`.
    pub fn face_vertices(&self, i: usize) -> [[f64; 3]; 3] {
        let f = self.faces[i];
        [
            self.vertices[f[0]],
            self.vertices[f[1]],
            self.vertices[f[2]],
        ]
    }

    /// Largest vertex distance from the origin (0 for an empty mesh).
    pub fn max_vertex_norm(&self) -> f64 {
        self.vertices
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
            .fold(0.0, f64::max)
    }

    /// Translates the vertex centroid to the origin and scales so the maximum
    /// vertex norm is exactly 1.
    ///
    /// Fails on an empty or degenerate (single-point) mesh. Applying it twice
    /// changes vertices by less than 1e-12.
    pub fn normalize(&self) -> Result<TriangleMesh> {
        if self.vertices.is_empty() {
            return Err(Error::invalid("cannot normalize a mesh with no vertices"));
        }
        let n = self.vertices.len() as f64;
        let mut c = [0.0; 3];
        for v in &self.vertices {
            for k in 0..3 {
                c[k] += v[k] / n;
            }
        }
        let mut scale: f64 = 0.0;
        for v in &self.vertices {
            let d = ((v[0] - c[0]).powi(2) + (v[1] - c[1]).powi(2) + (v[2] - c[2]).powi(2)).sqrt();
            scale = scale.max(d);
        }
        if scale < 1e-12 {
            return Err(Error::invalid(
                "cannot normalize: all vertices coincide within 1e-12",
            ));
        }
        let vertices = self
            .vertices
            .iter()
            .map(|v| {
                [
                    (v[0] - c[0]) / scale,
                    (v[1] - c[1]) / scale,
                    (v[2] - c[2]) / scale,
                ]
            })
            .collect();
        Ok(TriangleMesh {
            vertices,
            faces: self.faces.clone(),
        })
    }

    /// Rotates every vertex by `alpha` radians right-handed about world +Y.
    pub fn rotate_about_up(&self, alpha: f64) -> TriangleMesh {
        let r = RotationMatrix::about_y(alpha);
        TriangleMesh {
            vertices: self.vertices.iter().map(|&v| r.apply(v)).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Maximum pairwise vertex distance (brute-force scan); 0 when fewer than
    /// two vertices exist.
    pub fn diameter(&self) -> f64 {
        diameter_of(&self.vertices)
    }

    /// Draws `n` points uniformly over the surface area, deterministically
    /// from `seed`.
    ///
    /// Zero-area faces are never selected. Fails when `n` is 0 or no face has
    /// positive area.
    pub fn sample_surface(&self, n: usize, seed: u64) -> Result<PointCloud> {
        if n == 0 {
            return Err(Error::invalid("surface sampling needs at least one point"));
        }
        let mut cumulative = Vec::with_capacity(self.faces.len());
        let mut total = 0.0;
        for i in 0..self.faces.len() {
            let [a, b, c] = self.face_vertices(i);
            total += triangle_area(a, b, c);
            cumulative.push(total);
        }
        if total <= 0.0 {
            return Err(Error::invalid(
                "surface sampling needs at least one positive-area face",
            ));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            let r = rng.gen_range(0.0..total);
            let idx = cumulative.partition_point(|&c| c <= r);
            let idx = idx.min(self.faces.len() - 1);
            let [a, b, c] = self.face_vertices(idx);
            let su = rng.gen_range(0.0..1.0f64).sqrt();
            let v = rng.gen_range(0.0..1.0f64);
            let (wa, wb, wc) = (1.0 - su, su * (1.0 - v), su * v);
            points.push([
                wa * a[0] + wb * b[0] + wc * c[0],
                wa * a[1] + wb * b[1] + wc * c[1],
                wa * a[2] + wb * b[2] + wc * c[2],
            ]);
        }
        Ok(PointCloud { points })
    }
}

/// Area of the triangle (a, b, c).
pub fn triangle_area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let n = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
}

/// Maximum pairwise distance over a point set (0 for fewer than two points).
pub fn diameter_of(points: &[[f64; 3]]) -> f64 {
    let mut best: f64 = 0.0;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let (p, q) = (points[i], points[j]);
            let d2 =
                (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
            best = best.max(d2);
        }
    }
    best.sqrt()
}

/// Unordered set of 3D points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::invalid(format!(
                    "point {i} has non-finite coordinates"
                )));
            }
        }
        Ok(PointCloud { points })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Rotates every point by `alpha` radians right-handed about world +Y.
    pub fn rotate_about_up(&self, alpha: f64) -> PointCloud {
        let r = RotationMatrix::about_y(alpha);
        PointCloud {
            points: self.points.iter().map(|&p| r.apply(p)).collect(),
        }
    }

    /// Maximum pairwise distance (brute-force scan).
    pub fn diameter(&self) -> f64 {
        diameter_of(&self.points)
    }

    /// Writes the cloud in `PFSPC` binary form (coordinates stored as f32).
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(&POINT_CLOUD_MAGIC).map_err(io)?;
        w.write_u64::<LittleEndian>(self.points.len() as u64)
            .map_err(io)?;
        for p in &self.points {
            for &c in p {
                w.write_f32::<LittleEndian>(c as f32).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    /// Reads a `PFSPC` file, rejecting bad magic, truncation, trailing bytes
    /// and non-finite coordinates.
    pub fn load(path: &Path) -> Result<PointCloud> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = bytes.as_slice();
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::format(path, "file shorter than the 8-byte magic"))?;
        if magic != POINT_CLOUD_MAGIC {
            return Err(Error::format(path, "bad magic, not a PFSPC point cloud"));
        }
        let count = r
            .read_u64::<LittleEndian>()
            .map_err(|_| Error::format(path, "missing point count"))? as usize;
        let expected = count * 12;
        if r.len() != expected {
            return Err(Error::format(
                path,
                format!(
                    "payload is {} bytes but {count} points need {expected}",
                    r.len()
                ),
            ));
        }
        let mut points = Vec::with_capacity(count);
        for i in 0..count {
            let mut p = [0.0f64; 3];
            for c in &mut p {
                let v = r
                    .read_f32::<LittleEndian>()
                    .map_err(|_| Error::format(path, "truncated point data"))?;
                if !v.is_finite() {
                    return Err(Error::format(path, format!("point {i} is non-finite")));
                }
                *c = v as f64;
            }
            points.push(p);
        }
        Ok(PointCloud { points })
    }
}

/// Descriptive record for a generated or imported shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeMeta {
    pub id: String,
    pub family: String,
    /// Maximum pairwise vertex distance of the normalized mesh.
    pub diameter: f64,
    /// Whether the shape has a rotational symmetry about +Y, which makes
    /// the symmetric variant of the ADD metric the right choice.
    pub symmetric: bool,
    /// Whether the shape differs from its mirror image, in which case
    /// horizontal flips change identity, not just pose.
    pub chiral: bool,
}

/// Parses a Wavefront OBJ file: `v` and `f` records, fan triangulation for
/// polygons, 1-based and negative (relative) indices, `v/vt/vn` slashes.
/// Everything else (`vn`, `vt`, `usemtl`, groups, comments) is skipped.
pub fn load_obj(path: &Path) -> Result<TriangleMesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, path)
}

fn parse_obj(text: &str, path: &Path) -> Result<TriangleMesh> {
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line = line_no + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut tokens = tokens_with_columns(content);
        let Some((_, keyword)) = tokens.next() else {
            continue;
        };
        match keyword {
            "v" => {
                let mut coords = [0.0f64; 3];
                for c in &mut coords {
                    let (col, tok) = tokens.next().ok_or_else(|| Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        col: raw.len() + 1,
                        msg: "vertex needs three coordinates".into(),
                    })?;
                    *c = tok.parse::<f64>().map_err(|_| Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        col,
                        msg: format!("bad coordinate '{tok}'"),
                    })?;
                    if !c.is_finite() {
                        return Err(Error::Parse {
                            path: path.to_path_buf(),
                            line,
                            col,
                            msg: format!("non-finite coordinate '{tok}'"),
                        });
                    }
                }
                vertices.push(coords);
            }
            "f" => {
                let mut idxs: Vec<usize> = Vec::new();
                for (col, tok) in tokens {
                    let first = tok.split('/').next().unwrap_or("");
                    let raw_idx: i64 = first.parse().map_err(|_| Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        col,
                        msg: format!("bad face index '{tok}'"),
                    })?;
                    let resolved = if raw_idx > 0 {
                        (raw_idx - 1) as usize
                    } else if raw_idx < 0 {
                        let back = (-raw_idx) as usize;
                        if back > vertices.len() {
                            return Err(Error::Parse {
                                path: path.to_path_buf(),
                                line,
                                col,
                                msg: format!(
                                    "relative index {raw_idx} reaches before the first vertex"
                                ),
                            });
                        }
                        vertices.len() - back
                    } else {
                        return Err(Error::Parse {
                            path: path.to_path_buf(),
                            line,
                            col,
                            msg: "face index 0 is not valid in OBJ".into(),
                        });
                    };
                    if resolved >= vertices.len() {
                        return Err(Error::Parse {
                            path: path.to_path_buf(),
                            line,
                            col,
                            msg: format!(
                                "face index {raw_idx} out of bounds ({} vertices so far)",
                                vertices.len()
                            ),
                        });
                    }
                    idxs.push(resolved);
                }
                if idxs.len() < 3 {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        col: 1,
                        msg: format!("face has {} vertices, need at least 3", idxs.len()),
                    });
                }
                for i in 1..idxs.len() - 1 {
                    faces.push([idxs[0], idxs[i], idxs[i + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces)
}

/// Iterator over (1-based column, token) pairs of whitespace-separated
/// tokens.
fn tokens_with_columns(line: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut rest = line;
    let mut offset = 0usize;
    std::iter::from_fn(move || {
        let trimmed = rest.trim_start();
        let skipped = rest.len() - trimmed.len();
        offset += skipped;
        if trimmed.is_empty() {
            return None;
        }
        let end = trimmed
            .find(char::is_whitespace)
            .unwrap_or(trimmed.len());
        let tok = &trimmed[..end];
        let col = offset + 1;
        rest = &trimmed[end..];
        offset += end;
        Some((col, tok))
    })
}

/// Writes a mesh as OBJ (`v` and `f` records only). Coordinates use Rust's
/// shortest round-trip float formatting, so reloading reproduces the mesh
/// bit-exactly.
pub fn save_obj(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    for v in mesh.vertices() {
        writeln!(w, "v {} {} {}", v[0], v[1], v[2]).map_err(io)?;
    }
    for f in mesh.faces() {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::path::PathBuf;

    fn parse(text: &str) -> Result<TriangleMesh> {
        parse_obj(text, &PathBuf::from("test.obj"))
    }

    const CUBE_OBJ: &str = "\
v -1 -1 -1\nv 1 -1 -1\nv 1 1 -1\nv -1 1 -1\n\
v -1 -1 1\nv 1 -1 1\nv 1 1 1\nv -1 1 1\n\
f 1 2 3 4\nf 5 8 7 6\nf 1 5 6 2\nf 2 6 7 3\nf 3 7 8 4\nf 5 1 4 8\n";

    #[test]
    fn cube_obj_fan_triangulates() {
        let mesh = parse(CUBE_OBJ).unwrap();
        assert_eq!(mesh.vertices().len(), 8);
        assert_eq!(mesh.faces().len(), 12);
    }

    #[test]
    fn obj_accepts_slashes_and_negative_indices() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3/1/1 -2/2/2 -1/3/3\n";
        let mesh = parse(text).unwrap();
        assert_eq!(mesh.faces(), &[[0, 1, 2]]);

        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1//2 2//3 3//1\n";
        assert_eq!(parse(text).unwrap().faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn obj_rejects_bad_input() {
        let oob = parse("v 0 0 0\nv 1 0 0\nf 1 2 3\n");
        assert!(matches!(oob, Err(Error::Parse { line: 3, .. })));

        let short = parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2\n");
        assert!(short.is_err());

        let bad_num = parse("v 0 zero 0\n");
        assert!(matches!(bad_num, Err(Error::Parse { line: 1, col: 5, .. })));

        let zero_idx = parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n");
        assert!(zero_idx.is_err());

        let nan = parse("v 0 NaN 0\n");
        assert!(nan.is_err());
    }

    #[test]
    fn obj_ignores_other_keywords_and_comments() {
        let text = "# comment\nmtllib foo.mtl\no thing\nvn 0 0 1\nvt 0 0\n\
                    v 0 0 0\nv 1 0 0\nv 0 1 0\ns off\nf 1 2 3 # trailing\n";
        let mesh = parse(text).unwrap();
        assert_eq!(mesh.vertices().len(), 3);
        assert_eq!(mesh.faces().len(), 1);
    }

    #[test]
    fn obj_save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mesh.obj");
        let mesh = parse(CUBE_OBJ).unwrap().normalize().unwrap();
        save_obj(&mesh, &path).unwrap();
        let back = load_obj(&path).unwrap();
        assert_eq!(mesh, back);
    }

    #[test]
    fn normalize_centers_and_scales() {
        let text = "v 0 0 0\nv 2 0 0\nv 2 2 0\nv 0 2 0\nf 1 2 3\nf 1 3 4\n";
        let mesh = parse(text).unwrap().normalize().unwrap();
        let mut centroid = [0.0; 3];
        for v in mesh.vertices() {
            for k in 0..3 {
                centroid[k] += v[k] / mesh.vertices().len() as f64;
            }
        }
        assert!(centroid.iter().all(|c| c.abs() < 1e-12));
        assert!((mesh.max_vertex_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_is_idempotent() {
        let mesh = parse(CUBE_OBJ).unwrap();
        let scaled = TriangleMesh::new(
            mesh.vertices()
                .iter()
                .map(|v| [v[0] * 3.0 + 5.0, v[1] * 3.0 - 2.0, v[2] * 3.0 + 0.5])
                .collect(),
            mesh.faces().to_vec(),
        )
        .unwrap();
        let once = scaled.normalize().unwrap();
        let twice = once.normalize().unwrap();
        for (a, b) in once.vertices().iter().zip(twice.vertices()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalize_rejects_degenerate() {
        let mesh = TriangleMesh::new(vec![[1.0, 2.0, 3.0]; 4], vec![]).unwrap();
        assert!(mesh.normalize().is_err());
        assert!(TriangleMesh::new(vec![], vec![]).unwrap().normalize().is_err());
    }

    #[test]
    fn cube_diameter_is_space_diagonal() {
        let mesh = parse(CUBE_OBJ).unwrap();
        assert!((mesh.diameter() - 2.0 * 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn diameter_is_rigid_invariant() {
        let mesh = parse(CUBE_OBJ).unwrap();
        let d = mesh.diameter();
        let moved = TriangleMesh::new(
            mesh.rotate_about_up(0.83)
                .vertices()
                .iter()
                .map(|v| [v[0] + 10.0, v[1] - 3.0, v[2] + 0.25])
                .collect(),
            mesh.faces().to_vec(),
        )
        .unwrap();
        assert!((moved.diameter() - d).abs() < 1e-9);
    }

    #[test]
    fn rotation_preserves_pairwise_distances() {
        let mesh = parse(CUBE_OBJ).unwrap();
        let rotated = mesh.rotate_about_up(1.234);
        for i in 0..mesh.vertices().len() {
            for j in 0..mesh.vertices().len() {
                let d = |vs: &[[f64; 3]]| {
                    ((vs[i][0] - vs[j][0]).powi(2)
                        + (vs[i][1] - vs[j][1]).powi(2)
                        + (vs[i][2] - vs[j][2]).powi(2))
                    .sqrt()
                };
                assert!((d(mesh.vertices()) - d(rotated.vertices())).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_on_surface() {
        let mesh = parse(CUBE_OBJ).unwrap().normalize().unwrap();
        let a = mesh.sample_surface(500, 7).unwrap();
        let b = mesh.sample_surface(500, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, mesh.sample_surface(500, 8).unwrap());

        // Every sample must lie on some face plane, inside the triangle.
        for p in a.points() {
            let mut on_surface = false;
            'faces: for i in 0..mesh.faces().len() {
                let [va, vb, vc] = mesh.face_vertices(i);
                let full = triangle_area(va, vb, vc);
                if full <= 0.0 {
                    continue;
                }
                let parts = triangle_area(*p, vb, vc)
                    + triangle_area(va, *p, vc)
                    + triangle_area(va, vb, *p);
                if (parts - full).abs() < 1e-9 {
                    on_surface = true;
                    break 'faces;
                }
            }
            assert!(on_surface, "sample {p:?} is not on the mesh surface");
        }
    }

    #[test]
    fn sampling_rejects_degenerate_input() {
        let mesh = TriangleMesh::new(vec![[0.0; 3], [0.0; 3], [0.0; 3]], vec![[0, 1, 2]]).unwrap();
        assert!(mesh.sample_surface(10, 0).is_err());
        let ok = parse(CUBE_OBJ).unwrap();
        assert!(ok.sample_surface(0, 0).is_err());
    }

    #[test]
    fn sampling_skips_zero_area_faces() {
        // One real face plus one degenerate; all samples must land on the
        // real one.
        let mesh = TriangleMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [2.0, 2.0, 2.0]],
            vec![[0, 1, 2], [3, 3, 3]],
        )
        .unwrap();
        let cloud = mesh.sample_surface(200, 3).unwrap();
        for p in cloud.points() {
            assert!(p[2].abs() < 1e-12, "sample {p:?} left the z=0 face");
        }
    }

    #[test]
    fn point_cloud_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.pfspc");
        let cloud = PointCloud::new(vec![[0.25, -1.5, 3.0], [0.0, 0.125, -0.75]]).unwrap();
        cloud.save(&path).unwrap();
        let back = PointCloud::load(&path).unwrap();
        // All coordinates here are exactly representable in f32.
        assert_eq!(cloud, back);

        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], &POINT_CLOUD_MAGIC);
        assert_eq!(bytes.len(), 8 + 8 + 2 * 12);
    }

    #[test]
    fn point_cloud_load_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.pfspc");
        let cloud = PointCloud::new(vec![[1.0, 2.0, 3.0]]).unwrap();
        cloud.save(&path).unwrap();

        let good = std::fs::read(&path).unwrap();
        std::fs::write(&path, &good[..good.len() - 4]).unwrap();
        assert!(PointCloud::load(&path).is_err());

        let mut extra = good.clone();
        extra.push(0);
        std::fs::write(&path, &extra).unwrap();
        assert!(PointCloud::load(&path).is_err());

        let mut bad_magic = good;
        bad_magic[0] = b'X';
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(PointCloud::load(&path).is_err());
    }

    proptest! {
        #[test]
        fn prop_normalized_mesh_max_norm_is_one(
            scale in 0.1..50.0f64,
            dx in -20.0..20.0f64,
            dy in -20.0..20.0f64,
        ) {
            let base = parse(CUBE_OBJ).unwrap();
            let mesh = TriangleMesh::new(
                base.vertices()
                    .iter()
                    .map(|v| [v[0] * scale + dx, v[1] * scale + dy, v[2] * scale])
                    .collect(),
                base.faces().to_vec(),
            )
            .unwrap()
            .normalize()
            .unwrap();
            prop_assert!((mesh.max_vertex_norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn prop_rotation_preserves_diameter(alpha in -10.0..10.0f64) {
            let mesh = parse(CUBE_OBJ).unwrap();
            let d = mesh.rotate_about_up(alpha).diameter();
            prop_assert!((d - mesh.diameter()).abs() < 1e-9);
        }
    }
}
