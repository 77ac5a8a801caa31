//! Demonstrates the point-distance pose metrics: ADD (mean distance between
//! correspondingly transformed model points) and ADD-S (closest-point
//! variant for symmetric objects), plus the threshold/median summaries.
//!
//! ```text
//! cargo run --example distance_metrics
//! ```

use poseforge::datagen::{make_shape_set, ShapeFamily};
use poseforge::metrics::{accuracy_below, add, add_s, median, PosePair};
use poseforge::rot::{EulerPose, RotationMatrix};

fn main() -> poseforge::Result<()> {
    let shapes = make_shape_set(&[(ShapeFamily::Cylinder, 1)], 4)?;
    let mesh = &shapes[0].mesh;
    let cloud = mesh.sample_surface(1500, 0)?;
    let diameter = cloud.diameter();
    println!("cylinder cloud: {} points, diameter {:.3}", cloud.len(), diameter);

    // A pose 12 degrees off in azimuth with a small translation slip.
    let truth = EulerPose::from_degrees(40.0, 25.0, 0.0)?.to_matrix();
    let pred = EulerPose::from_degrees(52.0, 25.0, 0.0)?.to_matrix();
    let pair = PosePair {
        predicted: (pred, Some([0.02, 0.0, 0.0])),
        truth: (truth, Some([0.0, 0.0, 0.0])),
    };
    let add_v = add(&pair, &cloud)?;
    let add_s_v = add_s(&pair, &cloud)?;
    println!("\n12 deg azimuth miss:");
    println!("  rotation error {:.2} deg", pair.rotation_error().to_degrees());
    println!("  ADD   {:.4}  ({:.3} of diameter)", add_v, add_v / diameter);
    println!("  ADD-S {:.4}  ({:.3} of diameter)", add_s_v, add_s_v / diameter);
    println!("  ADD-S never exceeds ADD: {}", add_s_v <= add_v);

    // A cylinder is rotationally symmetric about its axis, so a pure spin
    // about that axis is a large rotation error but a tiny ADD-S.
    let spun = truth.compose(&RotationMatrix::about_y(1.0));
    let sym_pair = PosePair {
        predicted: (spun, Some([0.0, 0.0, 0.0])),
        truth: (truth, Some([0.0, 0.0, 0.0])),
    };
    println!("\npure spin about the symmetry axis (57.3 deg):");
    println!("  rotation error {:.2} deg", sym_pair.rotation_error().to_degrees());
    println!("  ADD   {:.4}", add(&sym_pair, &cloud)?);
    println!("  ADD-S {:.4}  (symmetry-aware: far smaller)", add_s(&sym_pair, &cloud)?);

    // Summary statistics over a batch of rotation errors.
    let errors = [4.0, 11.0, 24.0, 29.9, 30.0, 55.0, 90.0, 151.0];
    println!("\nerrors (deg): {errors:?}");
    println!("  accuracy below 30 deg: {:.3} (strict)", accuracy_below(&errors, 30.0)?);
    println!("  median error: {:.2} deg", median(&errors)?);
    Ok(())
}
