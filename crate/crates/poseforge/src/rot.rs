//! Rotation algebra: Euler poses, rotation matrices, geodesic distance and
//! angle binning.
//!
//! A pose is the triple (azimuth, elevation, in-plane) in radians. Azimuth and
//! in-plane live on the half-open interval [-pi, pi); elevation on the closed
//! interval [-pi/2, pi/2]. The corresponding world-to-camera rotation is
//!
//! ```text
//! R = R_z(inp) * R_x(-ele) * R_y(-azi)
//! ```
//!
//! with the world +Y axis up: azimuth turns the camera around the up axis,
//! elevation tilts it off the horizontal plane, and the in-plane angle rolls
//! the image about the optical axis. A camera at distance rho looking at the
//! origin maps a world point `p` to `R * p + (0, 0, -rho)`, with the camera
//! looking down its -Z axis.
//!
//! [`AngleBinning`] quantizes each angle into `L` equal bins with a continuous
//! offset in [-1, 1] relative to the bin center, the encoding predicted by the
//! pose network head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Matrices closer than this to elevation +-pi/2 take the gimbal-lock branch
/// of [`RotationMatrix::to_euler`].
pub const GIMBAL_EPS: f64 = 1e-9;

/// Largest orthonormality violation [`RotationMatrix::from_array`] accepts.
pub const ORTHONORMALITY_TOL: f64 = 1e-6;

/// The three pose angles, in the order used for head output blocks and
/// binning tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Angle {
    Azimuth,
    Elevation,
    Inplane,
}

impl Angle {
    pub const ALL: [Angle; 3] = [Angle::Azimuth, Angle::Elevation, Angle::Inplane];

    /// Position of this angle in pose triples and head output blocks.
    pub fn index(self) -> usize {
        match self {
            Angle::Azimuth => 0,
            Angle::Elevation => 1,
            Angle::Inplane => 2,
        }
    }
}

/// Wraps an angle to the half-open interval [-pi, pi).
///
/// `wrap_angle(PI)` returns exactly `-PI`; values already inside the interval
/// pass through unchanged.
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    theta - TAU * ((theta + PI) / TAU).floor()
}

/// Viewpoint as (azimuth, elevation, in-plane) angles in radians.
///
/// Azimuth and in-plane are wrapped to [-pi, pi) on construction; elevation
/// must lie in [-pi/2, pi/2] and is never wrapped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerPose {
    azi: f64,
    ele: f64,
    inp: f64,
}

impl EulerPose {
    /// Builds a pose from radians, wrapping azimuth and in-plane.
    ///
    /// Fails if any angle is non-finite or elevation falls outside
    /// [-pi/2, pi/2].
    pub fn new(azi: f64, ele: f64, inp: f64) -> Result<Self> {
        if !(azi.is_finite() && ele.is_finite() && inp.is_finite()) {
            return Err(Error::invalid(format!(
                "pose angles must be finite, got ({azi}, {ele}, {inp})"
            )));
        }
        if !(-std::f64::consts::FRAC_PI_2..=std::f64::consts::FRAC_PI_2).contains(&ele) {
            return Err(Error::invalid(format!(
                "elevation {ele} rad outside [-pi/2, pi/2]"
            )));
        }
        Ok(EulerPose {
            azi: wrap_angle(azi),
            ele,
            inp: wrap_angle(inp),
        })
    }

    /// Builds a pose from degrees; conversion is an exact multiply by pi/180.
    pub fn from_degrees(azi: f64, ele: f64, inp: f64) -> Result<Self> {
        EulerPose::new(azi.to_radians(), ele.to_radians(), inp.to_radians())
    }

    pub fn azimuth(self) -> f64 {
        self.azi
    }

    pub fn elevation(self) -> f64 {
        self.ele
    }

    pub fn inplane(self) -> f64 {
        self.inp
    }

    /// Angles as (azimuth, elevation, in-plane) in degrees.
    pub fn to_degrees(self) -> (f64, f64, f64) {
        (
            self.azi.to_degrees(),
            self.ele.to_degrees(),
            self.inp.to_degrees(),
        )
    }

    /// Angle selected by `angle`, in radians.
    pub fn angle(self, angle: Angle) -> f64 {
        match angle {
            Angle::Azimuth => self.azi,
            Angle::Elevation => self.ele,
            Angle::Inplane => self.inp,
        }
    }

    /// World-to-camera rotation `R_z(inp) * R_x(-ele) * R_y(-azi)`.
    pub fn to_matrix(self) -> RotationMatrix {
        let (sa, ca) = self.azi.sin_cos();
        let (se, ce) = self.ele.sin_cos();
        let (si, ci) = self.inp.sin_cos();
        RotationMatrix([
            [ci * ca - si * se * sa, -si * ce, -ci * sa - si * se * ca],
            [si * ca + ci * se * sa, ci * ce, -si * sa + ci * se * ca],
            [ce * sa, -se, ce * ca],
        ])
    }

    /// Same viewpoint after rotating the object by `alpha` about world +Y:
    /// azimuth decreases by `alpha` (wrapped), the other angles are unchanged.
    pub fn shift_azimuth(self, alpha: f64) -> Self {
        EulerPose {
            azi: wrap_angle(self.azi - alpha),
            ele: self.ele,
            inp: self.inp,
        }
    }

    /// Pose seen in a left-right mirrored image: (-azimuth, elevation,
    /// -in-plane), wrapped.
    pub fn mirrored_lr(self) -> Self {
        EulerPose {
            azi: wrap_angle(-self.azi),
            ele: self.ele,
            inp: wrap_angle(-self.inp),
        }
    }
}

/// Proper rotation matrix (row-major), orthonormal with determinant +1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationMatrix([[f64; 3]; 3]);

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    /// Validates a raw row-major matrix.
    ///
    /// Rejects matrices whose orthonormality defect (elementwise
    /// `|m^T m - I|`) or determinant error exceeds [`ORTHONORMALITY_TOL`].
    pub fn from_array(m: [[f64; 3]; 3]) -> Result<Self> {
        let mut defect: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                defect = defect.max((dot - target).abs());
            }
        }
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        defect = defect.max((det - 1.0).abs());
        if !defect.is_finite() || defect > ORTHONORMALITY_TOL {
            return Err(Error::invalid(format!(
                "matrix is not a rotation: orthonormality defect {defect:.3e} exceeds {ORTHONORMALITY_TOL:.0e}"
            )));
        }
        Ok(RotationMatrix(m))
    }

    /// Rodrigues rotation by `angle` radians about `axis` (normalized here).
    ///
    /// Fails on a zero or non-finite axis.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Result<Self> {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::invalid(format!(
                "axis ({}, {}, {}) has near-zero norm",
                axis[0], axis[1], axis[2]
            )));
        }
        let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        Ok(RotationMatrix([
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ]))
    }

    /// Right-handed rotation about world +Y.
    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        RotationMatrix([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    }

    pub fn array(&self) -> &[[f64; 3]; 3] {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        RotationMatrix([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    /// Matrix product `self * rhs`.
    pub fn compose(&self, rhs: &RotationMatrix) -> Self {
        let (a, b) = (&self.0, &rhs.0);
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        RotationMatrix(out)
    }

    /// Applies the rotation to a vector.
    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    /// Recovers (azimuth, elevation, in-plane) from the matrix.
    ///
    /// Within [`GIMBAL_EPS`] of elevation +-pi/2 the azimuth/in-plane split is
    /// ambiguous; the convention here folds everything into azimuth and sets
    /// in-plane to zero.
    pub fn to_euler(&self) -> EulerPose {
        let m = &self.0;
        let ce = (m[2][0] * m[2][0] + m[2][2] * m[2][2]).sqrt();
        let ele = (-m[2][1]).atan2(ce);
        if ce < GIMBAL_EPS {
            EulerPose {
                azi: wrap_angle((-m[0][2]).atan2(m[0][0])),
                ele,
                inp: 0.0,
            }
        } else {
            EulerPose {
                azi: wrap_angle(m[2][0].atan2(m[2][2])),
                ele,
                inp: wrap_angle((-m[0][1]).atan2(m[1][1])),
            }
        }
    }
}

/// Geodesic distance on SO(3) in radians:
/// `arccos(clamp((trace(a^T b) - 1) / 2, -1, 1))`, always in [0, pi].
pub fn geodesic_distance(a: &RotationMatrix, b: &RotationMatrix) -> f64 {
    let rel = a.transpose().compose(b);
    let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos()
}

/// Number of bins per angle for the classification-plus-offset encoding.
///
/// Bin ranges are fixed: azimuth and in-plane cover [-pi, pi) half-open,
/// elevation covers [-pi/2, pi/2] with the top edge folded into the last bin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngleBinning {
    pub azi_bins: usize,
    pub ele_bins: usize,
    pub inp_bins: usize,
}

impl Default for AngleBinning {
    fn default() -> Self {
        AngleBinning {
            azi_bins: 24,
            ele_bins: 12,
            inp_bins: 24,
        }
    }
}

/// Quantized pose: per-angle bin labels plus offsets in [-1, 1] relative to
/// the bin center, in [`Angle::ALL`] order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinnedPose {
    pub labels: [usize; 3],
    pub offsets: [f64; 3],
}

impl AngleBinning {
    pub fn new(azi_bins: usize, ele_bins: usize, inp_bins: usize) -> Result<Self> {
        if azi_bins == 0 || ele_bins == 0 || inp_bins == 0 {
            return Err(Error::invalid(format!(
                "bin counts must be at least 1, got ({azi_bins}, {ele_bins}, {inp_bins})"
            )));
        }
        Ok(AngleBinning {
            azi_bins,
            ele_bins,
            inp_bins,
        })
    }

    /// Bin count for one angle.
    pub fn count(&self, angle: Angle) -> usize {
        match angle {
            Angle::Azimuth => self.azi_bins,
            Angle::Elevation => self.ele_bins,
            Angle::Inplane => self.inp_bins,
        }
    }

    pub fn counts(&self) -> [usize; 3] {
        [self.azi_bins, self.ele_bins, self.inp_bins]
    }

    /// Sum of bin counts over the three angles.
    pub fn total(&self) -> usize {
        self.azi_bins + self.ele_bins + self.inp_bins
    }

    /// (lower edge, full span) of the binned interval for one angle.
    pub fn range(&self, angle: Angle) -> (f64, f64) {
        use std::f64::consts::{FRAC_PI_2, PI, TAU};
        match angle {
            Angle::Azimuth | Angle::Inplane => (-PI, TAU),
            Angle::Elevation => (-FRAC_PI_2, PI),
        }
    }

    /// Width of one bin for the given angle.
    pub fn bin_width(&self, angle: Angle) -> f64 {
        let (_, span) = self.range(angle);
        span / self.count(angle) as f64
    }

    /// Quantizes a pose into labels and offsets.
    ///
    /// An angle exactly on a bin edge belongs to the upper bin with offset -1;
    /// the closed top edge of the elevation range folds into the last bin with
    /// offset +1.
    pub fn encode(&self, pose: &EulerPose) -> BinnedPose {
        let mut labels = [0usize; 3];
        let mut offsets = [0f64; 3];
        for angle in Angle::ALL {
            let count = self.count(angle);
            let (min, span) = self.range(angle);
            let t = (pose.angle(angle) - min) / span * count as f64;
            let k = (t.floor() as usize).min(count - 1);
            labels[angle.index()] = k;
            offsets[angle.index()] = 2.0 * (t - k as f64) - 1.0;
        }
        BinnedPose { labels, offsets }
    }

    /// Reconstructs angles from labels and offsets.
    ///
    /// Azimuth and in-plane wrap back to [-pi, pi); elevation clamps to
    /// [-pi/2, pi/2]. Panics when a label is out of range or an offset leaves
    /// [-1, 1].
    pub fn decode(&self, binned: &BinnedPose) -> EulerPose {
        let mut angles = [0f64; 3];
        for angle in Angle::ALL {
            let count = self.count(angle);
            let k = binned.labels[angle.index()];
            let o = binned.offsets[angle.index()];
            assert!(
                k < count,
                "label {k} out of range for {count} {angle:?} bins"
            );
            assert!(
                (-1.0..=1.0).contains(&o),
                "offset {o} outside [-1, 1] for {angle:?}"
            );
            let (min, span) = self.range(angle);
            let w = span / count as f64;
            angles[angle.index()] = min + (k as f64 + (o + 1.0) / 2.0) * w;
        }
        use std::f64::consts::FRAC_PI_2;
        EulerPose {
            azi: wrap_angle(angles[0]),
            ele: angles[1].clamp(-FRAC_PI_2, FRAC_PI_2),
            inp: wrap_angle(angles[2]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use std::f64::consts::{FRAC_PI_2, PI, TAU};

    // Independent elementary rotations and products, kept separate from the
    // library implementation on purpose.
    fn ry(t: f64) -> [[f64; 3]; 3] {
        [
            [t.cos(), 0.0, t.sin()],
            [0.0, 1.0, 0.0],
            [-t.sin(), 0.0, t.cos()],
        ]
    }

    fn rx(t: f64) -> [[f64; 3]; 3] {
        [
            [1.0, 0.0, 0.0],
            [0.0, t.cos(), -t.sin()],
            [0.0, t.sin(), t.cos()],
        ]
    }

    fn rz(t: f64) -> [[f64; 3]; 3] {
        [
            [t.cos(), -t.sin(), 0.0],
            [t.sin(), t.cos(), 0.0],
            [0.0, 0.0, 1.0],
        ]
    }

    fn matmul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    out[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        out
    }

    fn rodrigues(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
        let n = (axis[0].powi(2) + axis[1].powi(2) + axis[2].powi(2)).sqrt();
        let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        [
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ]
    }

    fn max_abs_diff(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                m = m.max((a[i][j] - b[i][j]).abs());
            }
        }
        m
    }

    #[test]
    fn matrix_matches_elementary_product() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..500 {
            let azi = rng.gen_range(-PI..PI);
            let ele = rng.gen_range(-FRAC_PI_2..=FRAC_PI_2);
            let inp = rng.gen_range(-PI..PI);
            let expected = matmul(rz(inp), matmul(rx(-ele), ry(-azi)));
            let got = EulerPose::new(azi, ele, inp).unwrap().to_matrix();
            assert!(
                max_abs_diff(got.array(), &expected) < 1e-14,
                "expansion disagrees with elementary product at ({azi}, {ele}, {inp})"
            );
        }
    }

    #[test]
    fn identity_pose_gives_identity_matrix() {
        let m = EulerPose::new(0.0, 0.0, 0.0).unwrap().to_matrix();
        assert_eq!(m.array(), RotationMatrix::identity().array());
    }

    #[test]
    fn quarter_turn_azimuth_third_row() {
        let m = EulerPose::new(FRAC_PI_2, 0.0, 0.0).unwrap().to_matrix();
        let row = m.array()[2];
        assert!((row[0] - 1.0).abs() < 1e-15);
        assert!(row[1].abs() < 1e-15);
        assert!(row[2].abs() < 1e-15);
    }

    #[test]
    fn euler_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        for _ in 0..10_000 {
            let pose = EulerPose::new(
                rng.gen_range(-PI..PI),
                rng.gen_range(-FRAC_PI_2 + 1e-6..FRAC_PI_2 - 1e-6),
                rng.gen_range(-PI..PI),
            )
            .unwrap();
            let back = pose.to_matrix().to_euler();
            assert!((back.azimuth() - pose.azimuth()).abs() < 1e-9);
            assert!((back.elevation() - pose.elevation()).abs() < 1e-9);
            assert!((back.inplane() - pose.inplane()).abs() < 1e-9);
        }
    }

    #[test]
    fn gimbal_lock_folds_into_azimuth() {
        for sign in [1.0, -1.0] {
            let pose = EulerPose::new(0.7, sign * FRAC_PI_2, 0.4).unwrap();
            let back = pose.to_matrix().to_euler();
            assert_eq!(back.inplane(), 0.0);
            assert!((back.elevation() - sign * FRAC_PI_2).abs() < 1e-12);
            // The recovered pose must still describe the same rotation.
            let d = geodesic_distance(&pose.to_matrix(), &back.to_matrix());
            assert!(d < 1e-7, "gimbal reconstruction off by {d} rad");
        }
    }

    #[test]
    fn from_array_rejects_non_orthonormal() {
        let mut m = *RotationMatrix::identity().array();
        m[0][0] += 2e-6;
        assert!(RotationMatrix::from_array(m).is_err());
        m[0][0] = 1.0 + 1e-8;
        assert!(RotationMatrix::from_array(m).is_ok());
    }

    #[test]
    fn elevation_out_of_range_rejected() {
        assert!(EulerPose::new(0.0, FRAC_PI_2 + 1e-6, 0.0).is_err());
        assert!(EulerPose::new(0.0, f64::NAN, 0.0).is_err());
        assert!(EulerPose::new(0.0, FRAC_PI_2, 0.0).is_ok());
    }

    #[test]
    fn geodesic_matches_axis_angle_magnitude() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let eye = RotationMatrix::identity();
        for _ in 0..1000 {
            let axis = [
                rng.gen_range(-1.0..1.0f64),
                rng.gen_range(-1.0..1.0f64),
                rng.gen_range(-1.0..1.0f64),
            ];
            if (axis[0].powi(2) + axis[1].powi(2) + axis[2].powi(2)).sqrt() < 1e-3 {
                continue;
            }
            let phi = rng.gen_range(0.0..PI);
            let r = RotationMatrix::from_array(rodrigues(axis, phi)).unwrap();
            assert!(
                (geodesic_distance(&eye, &r) - phi).abs() < 1e-9,
                "geodesic to axis-angle rotation should equal its magnitude"
            );
        }
    }

    #[test]
    fn geodesic_about_y_equals_angle() {
        for k in 0..=16 {
            let theta = k as f64 * PI / 16.0;
            let d = geodesic_distance(&RotationMatrix::identity(), &RotationMatrix::about_y(theta));
            assert!((d - theta).abs() < 1e-9);
        }
    }

    #[test]
    fn geodesic_symmetry_and_left_invariance() {
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        for _ in 0..200 {
            let mut pose = || {
                EulerPose::new(
                    rng.gen_range(-PI..PI),
                    rng.gen_range(-FRAC_PI_2..FRAC_PI_2),
                    rng.gen_range(-PI..PI),
                )
                .unwrap()
                .to_matrix()
            };
            let (a, b, g) = (pose(), pose(), pose());
            let d = geodesic_distance(&a, &b);
            assert!((0.0..=PI).contains(&d));
            assert!((d - geodesic_distance(&b, &a)).abs() < 1e-12);
            let dl = geodesic_distance(&g.compose(&a), &g.compose(&b));
            assert!((d - dl).abs() < 1e-9, "not left-invariant: {d} vs {dl}");
        }
    }

    #[test]
    fn wrap_angle_edges() {
        assert_eq!(wrap_angle(PI), -PI);
        assert_eq!(wrap_angle(-PI), -PI);
        assert_eq!(wrap_angle(0.0), 0.0);
        assert!((wrap_angle(200f64.to_radians()) - (-160f64).to_radians()).abs() < 1e-12);
        assert!((wrap_angle(3.0 * PI) - (-PI)).abs() < 1e-12);
    }

    #[test]
    fn encode_edge_cases() {
        let b = AngleBinning::default();
        let zero = EulerPose::new(0.0, 0.0, 0.0).unwrap();
        let enc = b.encode(&zero);
        assert_eq!(enc.labels[0], 12);
        assert_eq!(enc.offsets[0], -1.0);

        let top = EulerPose::new(0.0, FRAC_PI_2, 0.0).unwrap();
        let enc = b.encode(&top);
        assert_eq!(enc.labels[1], 11);
        assert_eq!(enc.offsets[1], 1.0);
    }

    #[test]
    fn encode_decode_round_trip() {
        let b = AngleBinning::default();
        let mut rng = ChaCha12Rng::seed_from_u64(15);
        for _ in 0..10_000 {
            let pose = EulerPose::new(
                rng.gen_range(-PI..PI),
                rng.gen_range(-FRAC_PI_2..=FRAC_PI_2),
                rng.gen_range(-PI..PI),
            )
            .unwrap();
            let back = b.decode(&b.encode(&pose));
            assert!((back.azimuth() - pose.azimuth()).abs() < 1e-12);
            assert!((back.elevation() - pose.elevation()).abs() < 1e-12);
            assert!((back.inplane() - pose.inplane()).abs() < 1e-12);
        }
    }

    #[test]
    fn shift_azimuth_examples() {
        let p = EulerPose::from_degrees(30.0, 20.0, 5.0).unwrap();
        let s = p.shift_azimuth(45f64.to_radians());
        assert!((s.azimuth().to_degrees() + 15.0).abs() < 1e-12);
        assert_eq!(s.elevation(), p.elevation());
        assert_eq!(s.inplane(), p.inplane());

        let p = EulerPose::from_degrees(170.0, 0.0, 0.0).unwrap();
        let s = p.shift_azimuth((-30f64).to_radians());
        assert!((s.azimuth().to_degrees() + 160.0).abs() < 1e-12);
    }

    #[test]
    fn shift_azimuth_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(16);
        for _ in 0..1000 {
            let pose = EulerPose::new(rng.gen_range(-PI..PI), 0.3, -0.2).unwrap();
            let alpha = rng.gen_range(-TAU..TAU);
            let back = pose.shift_azimuth(alpha).shift_azimuth(-alpha);
            assert!((back.azimuth() - pose.azimuth()).abs() < 1e-12);
        }
    }

    #[test]
    fn mirrored_lr_is_an_involution() {
        let pose = EulerPose::from_degrees(40.0, 25.0, -10.0).unwrap();
        let m = pose.mirrored_lr();
        assert!((m.azimuth().to_degrees() + 40.0).abs() < 1e-12);
        assert!((m.inplane().to_degrees() - 10.0).abs() < 1e-12);
        assert_eq!(m.mirrored_lr(), pose);
    }

    #[test]
    fn mirror_matrix_identity() {
        // Mirroring the image across its vertical axis corresponds to
        // M R(a,e,i) = R(-a,e,-i) M with M = diag(-1,1,1).
        let mirror = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for _ in 0..200 {
            let pose = EulerPose::new(
                rng.gen_range(-PI..PI),
                rng.gen_range(-FRAC_PI_2..FRAC_PI_2),
                rng.gen_range(-PI..PI),
            )
            .unwrap();
            let lhs = matmul(mirror, *pose.to_matrix().array());
            let rhs = matmul(*pose.mirrored_lr().to_matrix().array(), mirror);
            assert!(max_abs_diff(&lhs, &rhs) < 1e-12);
        }
    }

    #[test]
    fn binning_rejects_zero_counts() {
        assert!(AngleBinning::new(0, 12, 24).is_err());
        assert!(AngleBinning::new(24, 12, 24).is_ok());
    }

    #[test]
    fn single_bin_layout_is_valid() {
        let b = AngleBinning::new(24, 1, 24).unwrap();
        let pose = EulerPose::from_degrees(10.0, 30.0, 0.0).unwrap();
        let enc = b.encode(&pose);
        assert_eq!(enc.labels[1], 0);
        let back = b.decode(&enc);
        assert!((back.elevation() - pose.elevation()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn prop_euler_round_trip(
            azi in -PI..PI,
            ele in (-FRAC_PI_2 + 1e-5)..(FRAC_PI_2 - 1e-5),
            inp in -PI..PI,
        ) {
            let pose = EulerPose::new(azi, ele, inp).unwrap();
            let back = pose.to_matrix().to_euler();
            prop_assert!((back.azimuth() - pose.azimuth()).abs() < 1e-9);
            prop_assert!((back.elevation() - pose.elevation()).abs() < 1e-9);
            prop_assert!((back.inplane() - pose.inplane()).abs() < 1e-9);
        }

        #[test]
        fn prop_encode_offsets_in_range(
            azi in -PI..PI,
            ele in -FRAC_PI_2..=FRAC_PI_2,
            inp in -PI..PI,
        ) {
            let b = AngleBinning::default();
            let enc = b.encode(&EulerPose::new(azi, ele, inp).unwrap());
            for angle in Angle::ALL {
                prop_assert!(enc.labels[angle.index()] < b.count(angle));
                prop_assert!((-1.0..=1.0).contains(&enc.offsets[angle.index()]));
            }
        }

        #[test]
        fn prop_wrap_angle_in_range(theta in -100.0..100.0f64) {
            let w = wrap_angle(theta);
            prop_assert!((-PI..PI).contains(&w));
            // Wrapped and original angle must differ by a multiple of 2*pi.
            let k = (theta - w) / TAU;
            prop_assert!((k - k.round()).abs() < 1e-9);
        }
    }
}
