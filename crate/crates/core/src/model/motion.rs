use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SabrError};
use crate::geometry::{orthonormalize, BoundingBox, PoseParams, ShapeParams};
use crate::tensor::Tensor;

/// Floor applied to per-dimension standard deviations.
pub const STD_FLOOR: f64 = 1e-6;

/// Per-frame target `Θ_t = [θ_t, β_t, π_t, b_t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionFrame {
    pub pose: PoseParams,
    pub shape: ShapeParams,
    pub cam: Vector3<f64>,
    pub bbox: BoundingBox,
}

impl MotionFrame {
    /// Flat vector: row-major rotation blocks, shape, camera, box.
    pub fn encode(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(9 * self.pose.rotations.len() + self.shape.0.len() + 7);
        for r in &self.pose.rotations {
            for i in 0..3 {
                for j in 0..3 {
                    v.push(r[(i, j)]);
                }
            }
        }
        v.extend(&self.shape.0);
        v.extend([self.cam.x, self.cam.y, self.cam.z]);
        v.extend([self.bbox.x, self.bbox.y, self.bbox.w, self.bbox.h]);
        v
    }

    /// Inverse of [`MotionFrame::encode`] without any repair.
    pub fn from_raw(v: &[f64], n_joints: usize, shape_dim: usize) -> Result<Self> {
        let dim = 9 * n_joints + shape_dim + 7;
        if v.len() != dim {
            return Err(SabrError::Dimension(format!(
                "frame vector of {} values, expected {dim}",
                v.len()
            )));
        }
        let rotations = (0..n_joints)
            .map(|j| Matrix3::from_row_slice(&v[9 * j..9 * j + 9]))
            .collect();
        let s = 9 * n_joints;
        let c = s + shape_dim;
        Ok(MotionFrame {
            pose: PoseParams { rotations },
            shape: ShapeParams(v[s..c].to_vec()),
            cam: Vector3::new(v[c], v[c + 1], v[c + 2]),
            bbox: BoundingBox {
                x: v[c + 3],
                y: v[c + 4],
                w: v[c + 5],
                h: v[c + 6],
            },
        })
    }
}

/// Per-dimension z-score statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Statistics over all rows of the given [F×D] sequences. Dimensions
    /// whose spread falls under [`STD_FLOOR`] get the floor as their std.
    pub fn fit<'a>(seqs: impl IntoIterator<Item = &'a Tensor<f64>>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for s in seqs {
            let d = s.shape()[1];
            if sum.is_empty() {
                sum = vec![0.0; d];
                sq = vec![0.0; d];
            } else if sum.len() != d {
                return Err(SabrError::Dimension("sequences differ in width".into()));
            }
            for row in s.data().chunks(d) {
                for (i, v) in row.iter().enumerate() {
                    sum[i] += v;
                    sq[i] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(SabrError::Contract(
                "cannot fit statistics on no frames".into(),
            ));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n as f64 - m * m).max(0.0).sqrt().max(STD_FLOOR))
            .collect();
        Ok(NormStats { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Dimensions held at the std floor (constant in the data).
    pub fn flagged(&self) -> Vec<usize> {
        self.std
            .iter()
            .enumerate()
            .filter(|(_, s)| **s <= STD_FLOOR)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn normalize(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.apply(x, |v, m, s| (v - m) / s)
    }

    pub fn denormalize(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.apply(x, |v, m, s| v * s + m)
    }

    fn apply(&self, x: &Tensor<f64>, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor<f64>> {
        let d = self.dim();
        if x.shape().len() != 2 || x.shape()[1] != d {
            return Err(SabrError::Dimension(format!(
                "sequence {:?} against {d} statistics",
                x.shape()
            )));
        }
        let data = x
            .data()
            .chunks(d)
            .flat_map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(i, v)| f(*v, self.mean[i], self.std[i]))
                    .collect::<Vec<_>>()
            })
            .collect();
        Tensor::new(x.shape(), data)
    }
}

/// Decoded motion with the frames whose rotations could not be repaired.
#[derive(Clone, Debug)]
pub struct DecodedMotion {
    pub frames: Vec<MotionFrame>,
    pub flagged: Vec<usize>,
}

/// Stacks encoded frames into [F×D].
pub fn encode_motion(frames: &[MotionFrame]) -> Result<Tensor<f64>> {
    if frames.is_empty() {
        return Err(SabrError::Contract("empty motion".into()));
    }
    let rows: Vec<Vec<f64>> = frames.iter().map(|f| f.encode()).collect();
    let d = rows[0].len();
    Tensor::new(&[rows.len(), d], rows.concat())
}

/// Splits raw (unnormalized) motion [F×D] into frames without any repair.
pub fn motion_frames(
    raw: &Tensor<f64>,
    n_joints: usize,
    shape_dim: usize,
) -> Result<Vec<MotionFrame>> {
    if raw.shape().len() != 2 || raw.shape()[0] == 0 {
        return Err(SabrError::Dimension(format!(
            "motion of shape {:?}",
            raw.shape()
        )));
    }
    raw.data()
        .chunks(raw.shape()[1])
        .map(|row| MotionFrame::from_raw(row, n_joints, shape_dim))
        .collect()
}

/// De-normalizes `x` [F×D], repairs every rotation block, clamps shape
/// coefficients and boxes. Frames with a rotation that cannot be repaired
/// get identity rotations there and are listed in `flagged`.
pub fn decode_motion(
    x: &Tensor<f64>,
    stats: &NormStats,
    n_joints: usize,
    shape_dim: usize,
) -> Result<DecodedMotion> {
    let raw = stats.denormalize(x)?;
    let d = stats.dim();
    let mut frames = Vec::with_capacity(x.shape()[0]);
    let mut flagged = Vec::new();
    for (fi, row) in raw.data().chunks(d).enumerate() {
        let mut f = MotionFrame::from_raw(row, n_joints, shape_dim)?;
        let mut bad = false;
        for r in &mut f.pose.rotations {
            match orthonormalize(r) {
                Ok(fixed) => *r = fixed,
                Err(SabrError::DegenerateRotation(_)) | Err(SabrError::NumericInput(_)) => {
                    *r = Matrix3::identity();
                    bad = true;
                }
                Err(e) => return Err(e),
            }
        }
        if bad {
            flagged.push(fi);
        }
        f.shape = f.shape.clamped();
        f.bbox = f.bbox.clamped();
        f.cam.z = f.cam.z.max(1e-3);
        frames.push(f);
    }
    Ok(DecodedMotion { frames, flagged })
}
