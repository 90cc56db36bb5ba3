//! Pose data model: pose vectors, datasets, motion sequences and deltas.

mod csv;
pub mod rotation;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::wrap_angle;

pub use self::csv::{
    format_pose_csv, format_sequence_csv, load_pose_csv, load_sequence_csv, parse_pose_csv, parse_sequence_csv,
    save_pose_csv, save_sequence_csv,
};
pub use self::rotation::{axis_angle_to_matrices, matrices_to_axis_angle, Mat3, RotationMatrixSet};
pub use self::synth::{synth_generate, synth_sequence, DimGenerator, SequenceSpec, SynthSpec};

/// Number of body joints in the default skeleton.
pub const DEFAULT_JOINTS: usize = 22;
/// Default pose dimension (22 joints x 3 axis-angle components).
pub const DEFAULT_DIM: usize = DEFAULT_JOINTS * 3;

/// SMPL body joints, excluding the two hand joints.
pub const BODY_JOINT_NAMES: [&str; DEFAULT_JOINTS] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
];

/// A pose as concatenated per-joint axis-angle vectors, in radians.
/// Joint `j` owns components `3j..3j+3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PoseVector(Vec<f64>);

impl PoseVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || !values.len().is_multiple_of(3) {
            return Err(Error::invalid(format!(
                "pose length {} is not a positive multiple of 3",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("pose has non-finite values"));
        }
        Ok(PoseVector(values))
    }

    pub fn zeros(joints: usize) -> Self {
        PoseVector(vec![0.0; joints * 3])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn joints(&self) -> usize {
        self.0.len() / 3
    }

    pub fn joint(&self, j: usize) -> [f64; 3] {
        [self.0[3 * j], self.0[3 * j + 1], self.0[3 * j + 2]]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for PoseVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        PoseVector::new(v)
    }
}

impl From<PoseVector> for Vec<f64> {
    fn from(p: PoseVector) -> Self {
        p.0
    }
}

impl AsRef<[f64]> for PoseVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Default column names for a `dim`-wide table: `<joint>_x/_y/_z` when the
/// width is a multiple of 3, otherwise `d0, d1, ...`.
pub fn default_columns(dim: usize) -> Vec<String> {
    if !dim.is_multiple_of(3) {
        return (0..dim).map(|i| format!("d{i}")).collect();
    }
    let joints = dim / 3;
    (0..joints)
        .flat_map(|j| {
            let name = if joints == DEFAULT_JOINTS {
                BODY_JOINT_NAMES[j].to_string()
            } else {
                format!("joint{j}")
            };
            ["x", "y", "z"].map(|ax| format!("{name}_{ax}"))
        })
        .collect()
}

/// A set of equal-length real-valued samples. Pose datasets have a width
/// that is a multiple of 3, but the fitting code accepts any width.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseDataset {
    pub dim: usize,
    pub columns: Vec<String>,
    pub samples: Vec<Vec<f64>>,
    pub source: String,
}

impl PoseDataset {
    pub fn new(samples: Vec<Vec<f64>>, source: impl Into<String>) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyBody)?;
        let dim = first.len();
        if dim == 0 {
            return Err(Error::invalid("samples must have at least one value"));
        }
        for s in &samples {
            crate::error::check_dim(dim, s.len())?;
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("dataset contains non-finite values"));
            }
        }
        Ok(PoseDataset { dim, columns: default_columns(dim), samples, source: source.into() })
    }

    pub fn with_columns(mut self, columns: Vec<String>) -> Result<Self> {
        crate::error::check_dim(self.dim, columns.len())?;
        self.columns = columns;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Joint labels (column names with the axis suffix removed).
    pub fn joint_names(&self) -> Vec<String> {
        self.columns
            .chunks(3)
            .map(|c| c[0].strip_suffix("_x").unwrap_or(&c[0]).to_string())
            .collect()
    }

    pub fn rows(&self) -> Vec<&[f64]> {
        self.samples.iter().map(|s| s.as_slice()).collect()
    }

    /// Values of a single column.
    pub fn column(&self, d: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[d]).collect()
    }
}

/// Timestamped poses.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    timestamps: Vec<f64>,
    poses: Vec<Vec<f64>>,
    pub columns: Vec<String>,
}

impl MotionSequence {
    pub fn new(timestamps: Vec<f64>, poses: Vec<Vec<f64>>) -> Result<Self> {
        if timestamps.len() != poses.len() {
            return Err(Error::invalid("timestamps and poses differ in length"));
        }
        if timestamps.len() < 2 {
            return Err(Error::invalid("a motion sequence needs at least 2 frames"));
        }
        if timestamps.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("non-finite timestamp"));
        }
        if timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("timestamps must be strictly increasing"));
        }
        let dim = poses[0].len();
        for p in &poses {
            crate::error::check_dim(dim, p.len())?;
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("sequence contains non-finite values"));
            }
        }
        Ok(MotionSequence { timestamps, poses, columns: default_columns(dim) })
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn poses(&self) -> &[Vec<f64>] {
        &self.poses
    }

    pub fn dim(&self) -> usize {
        self.poses[0].len()
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// Frame-to-frame change: elapsed time and wrapped angle differences.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalDelta {
    pub dt: f64,
    pub dtheta: Vec<f64>,
}

impl TemporalDelta {
    /// `(dt, dtheta...)` as one vector, the layout the temporal prior uses.
    pub fn stacked(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dtheta.len() + 1);
        v.push(self.dt);
        v.extend_from_slice(&self.dtheta);
        v
    }
}

/// Consecutive deltas of a sequence; the output has one fewer entry.
pub fn compute_deltas(seq: &MotionSequence) -> Vec<TemporalDelta> {
    seq.timestamps
        .windows(2)
        .zip(seq.poses.windows(2))
        .map(|(t, p)| TemporalDelta {
            dt: t[1] - t[0],
            dtheta: p[1].iter().zip(&p[0]).map(|(b, a)| wrap_angle(b - a)).collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn pose_vector_validation() {
        assert!(PoseVector::new(vec![0.0; 66]).is_ok());
        assert!(PoseVector::new(vec![0.0; 5]).is_err());
        assert!(PoseVector::new(vec![]).is_err());
        assert!(PoseVector::new(vec![f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn default_column_names() {
        let c = default_columns(66);
        assert_eq!(c.len(), 66);
        assert_eq!(c[0], "pelvis_x");
        assert_eq!(c[14], "left_knee_z");
        assert_eq!(default_columns(2), vec!["d0", "d1"]);
        assert_eq!(default_columns(6)[3], "joint1_x");
    }

    #[test]
    fn joint_names_strip_suffix() {
        let ds = PoseDataset::new(vec![vec![0.0; 66]], "t").unwrap();
        let names = ds.joint_names();
        assert_eq!(names.len(), 22);
        assert_eq!(names[4], "left_knee");
    }

    #[test]
    fn sequence_invariants() {
        assert!(MotionSequence::new(vec![0.0], vec![vec![0.0]]).is_err());
        assert!(MotionSequence::new(vec![0.0, 0.0], vec![vec![0.0], vec![0.0]]).is_err());
        assert!(MotionSequence::new(vec![1.0, 0.0], vec![vec![0.0], vec![0.0]]).is_err());
        assert!(MotionSequence::new(vec![0.0, 1.0], vec![vec![0.0], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn deltas_of_constant_sequence_are_zero() {
        let seq = MotionSequence::new(vec![0.0, 0.1, 0.2], vec![vec![0.3, -0.2, 1.0]; 3]).unwrap();
        let d = compute_deltas(&seq);
        assert_eq!(d.len(), 2);
        assert!(d.iter().all(|x| x.dtheta.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn single_step_delta() {
        let seq = MotionSequence::new(
            vec![0.0, 1.0 / 30.0],
            vec![vec![0.0, 0.5, 0.0], vec![0.0, 0.6, 0.0]],
        )
        .unwrap();
        let d = compute_deltas(&seq);
        assert_eq!(d.len(), 1);
        assert!((d[0].dt - 1.0 / 30.0).abs() < 1e-15);
        assert_eq!(d[0].dtheta[0], 0.0);
        assert!((d[0].dtheta[1] - 0.1).abs() < 1e-12);
        assert_eq!(d[0].stacked().len(), 4);
    }

    #[test]
    fn full_turn_delta_wraps_to_zero() {
        let seq = MotionSequence::new(vec![0.0, 1.0], vec![vec![0.2], vec![0.2 + 2.0 * PI]]).unwrap();
        let d = compute_deltas(&seq);
        assert!(d[0].dtheta[0].abs() < 1e-12);
    }
}
