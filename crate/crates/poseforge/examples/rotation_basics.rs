//! Tour of the rotation toolkit: Euler viewpoints, rotation matrices,
//! geodesic distance, and the bin + offset encoding the network predicts.
//!
//! ```text
//! cargo run --example rotation_basics
//! ```

use poseforge::rot::{geodesic_distance, AngleBinning, EulerPose};

fn main() -> poseforge::Result<()> {
    // A viewpoint is (azimuth, elevation, in-plane) in degrees-friendly form.
    let pose = EulerPose::from_degrees(35.0, 20.0, -8.0)?;
    let r = pose.to_matrix();
    println!("pose: azi {:7.2}  ele {:6.2}  inp {:6.2}  (degrees)",
        pose.azimuth().to_degrees(),
        pose.elevation().to_degrees(),
        pose.inplane().to_degrees());
    println!("rotation matrix rows:");
    for row in r.array() {
        println!("  [{:9.6} {:9.6} {:9.6}]", row[0], row[1], row[2]);
    }

    // Geodesic distance is the angle of the relative rotation. A 10 degree
    // in-plane twist is exactly 10 degrees away.
    let twisted = EulerPose::from_degrees(35.0, 20.0, 2.0)?;
    let err = geodesic_distance(&r, &twisted.to_matrix());
    println!("\ngeodesic to a 10 deg in-plane twist: {:.4} deg", err.to_degrees());

    // Azimuth wraps: -180 and 180 are the same viewpoint.
    let a = EulerPose::from_degrees(-180.0, 0.0, 0.0)?;
    let b = EulerPose::from_degrees(180.0, 0.0, 0.0)?;
    println!("wraparound check (-180 vs 180 azi): {:.2e} deg",
        geodesic_distance(&a.to_matrix(), &b.to_matrix()).to_degrees());

    // Training targets: each angle becomes a bin label plus an offset in
    // [-1, 1] locating the angle inside that bin. Encode/decode is exact.
    let binning = AngleBinning::default();
    let target = binning.encode(&pose);
    println!("\nbin counts (azi/ele/inp): {:?}", binning.counts());
    println!("labels:  {:?}", target.labels);
    println!("offsets: [{:+.4}, {:+.4}, {:+.4}]  (position within the bin)",
        target.offsets[0], target.offsets[1], target.offsets[2]);
    let back = binning.decode(&target);
    println!("decode round-trip error: {:.2e} deg",
        geodesic_distance(&r, &back.to_matrix()).to_degrees());

    // Shifting the azimuth of the pose matches physically rotating the
    // object the other way about the vertical axis.
    let shifted = pose.shift_azimuth(25f64.to_radians());
    println!("\nazimuth shifted by 25 deg: azi {:.2} deg (was {:.2})",
        shifted.azimuth().to_degrees(), pose.azimuth().to_degrees());
    Ok(())
}
