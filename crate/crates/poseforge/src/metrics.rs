//! Pose-error metrics: rotation accuracy and median error, average
//! point-distance metrics (plain and symmetric-aware), and accuracy at 10% of
//! the model diameter, plus the JSON pose-file interface they consume.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rot::{geodesic_distance, EulerPose, RotationMatrix};
use crate::shape::PointCloud;

/// Point count above which the O(m²) closest-point metric parallelizes.
const ADD_S_PAR_THRESHOLD: usize = 256;

/// A predicted pose next to its ground truth. Translations (model units) are
/// optional, but must be present in both poses or absent in both.
#[derive(Clone, Debug)]
pub struct PosePair {
    pub predicted: (RotationMatrix, Option<[f64; 3]>),
    pub truth: (RotationMatrix, Option<[f64; 3]>),
}

impl PosePair {
    /// A rotation-only pair.
    pub fn rotations(predicted: RotationMatrix, truth: RotationMatrix) -> PosePair {
        PosePair {
            predicted: (predicted, None),
            truth: (truth, None),
        }
    }

    /// A full rigid pair.
    pub fn with_translations(
        predicted: (RotationMatrix, [f64; 3]),
        truth: (RotationMatrix, [f64; 3]),
    ) -> PosePair {
        PosePair {
            predicted: (predicted.0, Some(predicted.1)),
            truth: (truth.0, Some(truth.1)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.predicted.1, self.truth.1) {
            (Some(_), Some(_)) | (None, None) => Ok(()),
            _ => Err(Error::invalid(
                "pose pair mixes a translated pose with a rotation-only pose",
            )),
        }
    }

    /// Geodesic rotation error, radians.
    pub fn rotation_error(&self) -> f64 {
        geodesic_distance(&self.predicted.0, &self.truth.0)
    }
}

/// Fraction of `values` strictly below `threshold` (same units on both).
pub fn accuracy_below(values: &[f64], threshold: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("accuracy over an empty error list"));
    }
    let hits = values.iter().filter(|&&v| v < threshold).count();
    Ok(hits as f64 / values.len() as f64)
}

/// Median of `values`; an even count averages the two central values.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("median of an empty error list"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len();
    Ok(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

/// Fraction of pairs whose rotation error is strictly below π/6 (30 degrees).
pub fn acc_pi_6(pairs: &[PosePair]) -> Result<f64> {
    let errors = rotation_errors_deg(pairs)?;
    accuracy_below(&errors, 30.0)
}

/// Median rotation error in degrees.
pub fn med_err(pairs: &[PosePair]) -> Result<f64> {
    median(&rotation_errors_deg(pairs)?)
}

/// Geodesic rotation errors in degrees, in input order.
pub fn rotation_errors_deg(pairs: &[PosePair]) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::invalid("metric over an empty pose-pair list"));
    }
    pairs
        .iter()
        .map(|p| {
            p.validate()?;
            Ok(p.rotation_error().to_degrees())
        })
        .collect()
}

fn transformed(points: &PointCloud, rot: &RotationMatrix, t: [f64; 3]) -> Vec<[f64; 3]> {
    points
        .points()
        .iter()
        .map(|&x| {
            let r = rot.apply(x);
            [r[0] + t[0], r[1] + t[1], r[2] + t[2]]
        })
        .collect()
}

fn require_translations(pair: &PosePair) -> Result<([f64; 3], [f64; 3])> {
    pair.validate()?;
    match (pair.predicted.1, pair.truth.1) {
        (Some(tp), Some(tt)) => Ok((tp, tt)),
        _ => Err(Error::invalid(
            "point-distance metrics need translations in both poses",
        )),
    }
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Average distance between corresponding transformed model points:
/// `(1/m) Σ_x ‖(Rx + t) − (R̂x + t̂)‖` with `(R, t)` the truth and
/// `(R̂, t̂)` the prediction.
pub fn add(pair: &PosePair, points: &PointCloud) -> Result<f64> {
    let (tp, tt) = require_translations(pair)?;
    if points.is_empty() {
        return Err(Error::invalid("point-distance metric over an empty cloud"));
    }
    let pred = transformed(points, &pair.predicted.0, tp);
    let truth = transformed(points, &pair.truth.0, tt);
    let sum: f64 = truth
        .iter()
        .zip(&pred)
        .map(|(&a, &b)| dist3(a, b))
        .sum();
    Ok(sum / points.len() as f64)
}

/// Closest-point variant of [`add`] for shapes with indistinguishable
/// orientations: `(1/m) Σ_{x1} min_{x2} ‖(R x1 + t) − (R̂ x2 + t̂)‖`,
/// computed exactly in O(m²). Parallelizes over the outer points with a
/// deterministic, order-preserving reduction.
pub fn add_s(pair: &PosePair, points: &PointCloud) -> Result<f64> {
    let (tp, tt) = require_translations(pair)?;
    if points.is_empty() {
        return Err(Error::invalid("point-distance metric over an empty cloud"));
    }
    let pred = transformed(points, &pair.predicted.0, tp);
    let truth = transformed(points, &pair.truth.0, tt);
    let closest = |a: &[f64; 3]| {
        pred.iter()
            .map(|&b| dist3(*a, b))
            .fold(f64::INFINITY, f64::min)
    };
    let mins: Vec<f64> = if truth.len() >= ADD_S_PAR_THRESHOLD {
        truth.par_iter().map(closest).collect()
    } else {
        truth.iter().map(closest).collect()
    };
    Ok(mins.iter().sum::<f64>() / points.len() as f64)
}

/// One shape-aware sample for [`add_accuracy`].
pub struct AddSample<'a> {
    pub pair: PosePair,
    pub points: &'a PointCloud,
    pub diameter: f64,
    /// Symmetric shapes score with the closest-point metric.
    pub symmetric: bool,
}

/// Fraction of samples whose average point distance is strictly below 10% of
/// the shape diameter; symmetric shapes use the closest-point metric.
pub fn add_accuracy(samples: &[AddSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("accuracy over an empty sample list"));
    }
    let mut hits = 0usize;
    for s in samples {
        if s.diameter.is_nan() || s.diameter <= 0.0 {
            return Err(Error::invalid(format!(
                "shape diameter must be positive, got {}",
                s.diameter
            )));
        }
        let d = if s.symmetric {
            add_s(&s.pair, s.points)?
        } else {
            add(&s.pair, s.points)?
        };
        if d < 0.1 * s.diameter {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// One pose in a pose file; angles in degrees, translation optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub sample_id: String,
    pub azi_deg: f64,
    pub ele_deg: f64,
    pub inp_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<[f64; 3]>,
}

impl PoseRecord {
    pub fn pose(&self) -> Result<EulerPose> {
        EulerPose::from_degrees(self.azi_deg, self.ele_deg, self.inp_deg)
    }

    pub fn rotation(&self) -> Result<RotationMatrix> {
        Ok(self.pose()?.to_matrix())
    }
}

/// Reads a JSON array of pose records.
pub fn load_pose_file(path: &Path) -> Result<Vec<PoseRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes a JSON array of pose records.
pub fn save_pose_file(path: &Path, records: &[PoseRecord]) -> Result<()> {
    let mut json =
        serde_json::to_string_pretty(records).map_err(|e| Error::format(path, e.to_string()))?;
    json.push('\n');
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Joins predicted records to truth records by sample id, returning pairs in
/// truth order. Every truth id must be predicted exactly once; ids are unique
/// within each file.
pub fn pair_pose_files(
    truth: &[PoseRecord],
    predicted: &[PoseRecord],
) -> Result<Vec<(String, PosePair)>> {
    let mut by_id = std::collections::HashMap::new();
    for rec in predicted {
        if by_id.insert(rec.sample_id.as_str(), rec).is_some() {
            return Err(Error::invalid(format!(
                "duplicate predicted pose for sample {:?}",
                rec.sample_id
            )));
        }
    }
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(truth.len());
    for rec in truth {
        if !seen.insert(rec.sample_id.as_str()) {
            return Err(Error::invalid(format!(
                "duplicate ground-truth pose for sample {:?}",
                rec.sample_id
            )));
        }
        let pred = by_id.remove(rec.sample_id.as_str()).ok_or_else(|| {
            Error::invalid(format!("no predicted pose for sample {:?}", rec.sample_id))
        })?;
        let pair = PosePair {
            predicted: (pred.rotation()?, pred.t),
            truth: (rec.rotation()?, rec.t),
        };
        pair.validate()?;
        out.push((rec.sample_id.clone(), pair));
    }
    if let Some(extra) = by_id.keys().next() {
        return Err(Error::invalid(format!(
            "predicted pose for unknown sample {extra:?}"
        )));
    }
    Ok(out)
}
