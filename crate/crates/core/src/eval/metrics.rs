use nalgebra::Matrix3xX;
use serde::{Deserialize, Serialize};

use super::EvalConfig;
use crate::diffusion::{ddpm_sample, RespacedSchedule};
use crate::error::{Result, SabrError};
use crate::geometry::{body_keypoints, cam_from_box, project, BodySpec, CameraIntrinsics};
use crate::model::{decode_motion, encode_motion, MotionFrame, NormStats, SabrDit};
use crate::tensor::{RngStream, Tensor};
use crate::world::{Route, Wall};

/// Touched route holds out of the route length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adherence {
    pub ratio: f64,
    pub touched: usize,
    pub total: usize,
    pub touched_holds: Vec<usize>,
}

/// Metrics of one generated sequence against its record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordMetrics {
    pub index: usize,
    pub movement_mse: f64,
    pub trajectory: Adherence,
    /// Frames with a rotation that could not be repaired.
    pub repaired_frames: Vec<usize>,
    /// Frames whose box had to be clamped into the image.
    pub clamped_frames: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub movement_mse: f64,
    pub trajectory_adherence: f64,
    pub touched: usize,
    pub total: usize,
    pub diversity_score: Option<f64>,
    pub sample_steps: usize,
    pub records: Vec<RecordMetrics>,
}

impl MetricsReport {
    pub fn aggregate(
        records: Vec<RecordMetrics>,
        diversity_score: Option<f64>,
        sample_steps: usize,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(SabrError::Contract("no records to report".into()));
        }
        let touched = records.iter().map(|r| r.trajectory.touched).sum();
        let total: usize = records.iter().map(|r| r.trajectory.total).sum();
        Ok(MetricsReport {
            movement_mse: records.iter().map(|r| r.movement_mse).sum::<f64>()
                / records.len() as f64,
            trajectory_adherence: touched as f64 / total as f64,
            touched,
            total,
            diversity_score,
            sample_steps,
            records,
        })
    }
}

/// MSE between normalized [F×D] encodings.
pub fn movement_adherence_encoded(
    pred: &Tensor<f64>,
    truth: &Tensor<f64>,
    stats: &NormStats,
) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(SabrError::Contract(format!(
            "prediction {:?} and ground truth {:?} differ in length",
            pred.shape(),
            truth.shape()
        )));
    }
    let (a, b) = (stats.normalize(pred)?, stats.normalize(truth)?);
    Ok(mse(&a, &b))
}

/// Movement adherence of two decoded motions.
pub fn movement_adherence(
    pred: &[MotionFrame],
    truth: &[MotionFrame],
    stats: &NormStats,
) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(SabrError::Contract(format!(
            "{} predicted frames against {} ground-truth frames",
            pred.len(),
            truth.len()
        )));
    }
    movement_adherence_encoded(&encode_motion(pred)?, &encode_motion(truth)?, stats)
}

pub(crate) fn mse(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64
}

/// Pixel positions of the hand and foot tips per frame; a tip that cannot be
/// projected is `None`.
pub fn effector_pixels(
    frames: &[MotionFrame],
    spec: &BodySpec,
    k: &CameraIntrinsics,
) -> Vec<Vec<Option<(f64, f64)>>> {
    frames
        .iter()
        .map(|f| {
            let placed = body_keypoints(spec, &f.pose, &f.shape)
                .and_then(|kp| Ok((kp, cam_from_box(&f.cam, &f.bbox, k)?)));
            spec.limbs
                .iter()
                .map(|l| {
                    let (kp, cam) = placed.as_ref().ok()?;
                    let px = project(
                        &Matrix3xX::from_columns(&[kp.column(l.tip).into_owned()]),
                        k,
                        cam,
                    )
                    .ok()?;
                    Some((px[(0, 0)], px[(1, 0)]))
                })
                .collect()
        })
        .collect()
}

/// A route hold is touched when some hand or foot stays within
/// `touch_radius`·cell of its center for `touch_frames` consecutive frames.
pub fn trajectory_adherence(
    pred: &[MotionFrame],
    route: &Route,
    wall: &Wall,
    spec: &BodySpec,
    k: &CameraIntrinsics,
    cfg: &EvalConfig,
) -> Result<Adherence> {
    if route.holds.is_empty() {
        return Err(SabrError::Contract("empty route".into()));
    }
    let px = effector_pixels(pred, spec, k);
    let radius = cfg.touch_radius * wall.cell_px;
    let mut touched_holds = Vec::new();
    for &id in &route.holds {
        let (hx, hy) = wall.pixel(wall.hold(id)?, k);
        let mut run = 0usize;
        let mut best = 0usize;
        for frame in &px {
            let near = frame
                .iter()
                .flatten()
                .any(|(x, y)| (x - hx).hypot(y - hy) <= radius);
            run = if near { run + 1 } else { 0 };
            best = best.max(run);
        }
        if best >= cfg.touch_frames {
            touched_holds.push(id);
        }
    }
    let total = route.holds.len();
    Ok(Adherence {
        ratio: touched_holds.len() as f64 / total as f64,
        touched: touched_holds.len(),
        total,
        touched_holds,
    })
}

/// Mean pairwise MSE over normalized samples.
pub fn diversity_score(samples: &[Tensor<f64>]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(SabrError::Contract(
            "diversity needs at least two samples".into(),
        ));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            if samples[i].shape() != samples[j].shape() {
                return Err(SabrError::Contract("samples differ in shape".into()));
            }
            sum += mse(&samples[i], &samples[j]);
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

/// One normalized motion sample [frames×D] from `model` given conditioning
/// tokens.
pub fn sample_motion(
    model: &SabrDit<f32>,
    cond: &Tensor<f32>,
    frames: usize,
    chain: &RespacedSchedule,
    rng: &mut RngStream,
) -> Result<Tensor<f64>> {
    let d = model.config().motion_dim();
    let mut predict = |x: &Tensor<f64>, t: usize| -> Result<Tensor<f64>> {
        Ok(model.predict(&x.cast(), t as f64, cond)?.cast())
    };
    ddpm_sample(&mut predict, &[frames, d], chain, rng)
}

/// One draw per seed, scored by [`diversity_score`].
pub fn diversity_probe(
    model: &SabrDit<f32>,
    cond: &Tensor<f32>,
    frames: usize,
    chain: &RespacedSchedule,
    seeds: &[u64],
) -> Result<f64> {
    let draws: Vec<Tensor<f64>> = seeds
        .iter()
        .map(|&s| sample_motion(model, cond, frames, chain, &mut RngStream::new(s)))
        .collect::<Result<_>>()?;
    diversity_score(&draws)
}

/// Metrics of a normalized sample against record truth.
#[allow(clippy::too_many_arguments)]
pub fn score_sample(
    index: usize,
    sample: &Tensor<f64>,
    truth: &Tensor<f64>,
    stats: &NormStats,
    wall: &Wall,
    route: &Route,
    spec: &BodySpec,
    k: &CameraIntrinsics,
    cfg: &EvalConfig,
) -> Result<RecordMetrics> {
    let decoded = decode_motion(sample, stats, spec.n_joints, spec.shape_dim)?;
    let raw = stats.denormalize(sample)?;
    let d = stats.dim();
    let mut clamped_frames = Vec::new();
    for (i, row) in raw.data().chunks(d).enumerate() {
        let f = MotionFrame::from_raw(row, spec.n_joints, spec.shape_dim)?;
        if f.bbox.clamped() != f.bbox {
            clamped_frames.push(i);
        }
    }
    let movement_mse = movement_adherence_encoded(&encode_motion(&decoded.frames)?, truth, stats)?;
    let trajectory = trajectory_adherence(&decoded.frames, route, wall, spec, k, cfg)?;
    Ok(RecordMetrics {
        index,
        movement_mse,
        trajectory,
        repaired_frames: decoded.flagged,
        clamped_frames,
    })
}
