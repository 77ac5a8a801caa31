//! Renders a turntable of views around a procedurally built shape with the
//! software rasterizer and writes the PNGs plus a views.json manifest to
//! `target/example_out/render_turntable/`.
//!
//! ```text
//! cargo run --example render_turntable
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use poseforge::datagen::{make_shape_set, ShapeFamily};
use poseforge::render::{place_cameras, render_view_set, RenderOptions};

fn out_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../target/example_out")
        .join(name);
    fs::create_dir_all(&dir).expect("create output dir");
    dir
}

fn main() -> poseforge::Result<()> {
    let out = out_dir("render_turntable");

    // A composite shape (two blocks joined at an angle) shows off shading.
    let shapes = make_shape_set(&[(ShapeFamily::Composite, 1)], 11)?;
    let mesh = &shapes[0].mesh;
    println!("shape {:?}: {} vertices, {} faces, diameter {:.3}",
        shapes[0].id, mesh.vertices().len(), mesh.faces().len(), mesh.diameter());

    // 8 azimuth stops at two elevations = 16 cameras on a sphere of radius 2.5.
    let cameras = place_cameras(8, &[0f64.to_radians(), 30f64.to_radians()], 2.5)?;
    let opts = RenderOptions {
        width: 96,
        height: 96,
        ..RenderOptions::default()
    };
    let set = render_view_set(mesh, &cameras, &opts)?;
    set.save(&out.join("views.json"), "example")?;

    for (i, image) in set.images.iter().enumerate() {
        image.save_png(&out.join(format!("view_{i:02}.png")))?;
    }
    println!("wrote {} views ({}x{}) to {}", set.images.len(), opts.width, opts.height,
        out.display());

    // A depth + normal render of the first camera, stored as a raw tensor.
    let rich = RenderOptions {
        include_depth: true,
        include_normals: true,
        ..opts
    };
    let extra = render_view_set(mesh, &cameras[..1], &rich)?;
    let channels = extra.images[0].channels();
    extra.images[0].save_tensor(&out.join("view_00_depth_normals.pfsimg"))?;
    println!("first view with depth and normals has {channels} channels");
    Ok(())
}
