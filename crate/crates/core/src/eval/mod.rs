//! Movement and trajectory adherence, the diversity probe, scaling sweeps and
//! the SVG skeleton renderer.

mod metrics;
mod motion_file;
mod render;
mod sweep;

pub use metrics::{
    diversity_probe, diversity_score, effector_pixels, movement_adherence,
    movement_adherence_encoded, sample_motion, score_sample, trajectory_adherence, Adherence,
    MetricsReport, RecordMetrics,
};
pub use motion_file::{MotionFile, MotionHeader, MOTION_FILE, MOTION_MAGIC, MOTION_VERSION};
pub use render::{frame_file, frame_keypoints, mean_shape, render_frame, render_svg, RenderReport};
pub use sweep::{
    median, run_sweep, sweep_point, write_sweep_csv, Axis, SweepConfig, SweepPoint, SweepResult,
    SweepRow, SWEEP_FILE,
};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::respace;
use crate::error::{Result, SabrError};
use crate::model::{decode_motion, encode_motion};
use crate::tensor::RngStream;
use crate::train::Checkpoint;
use crate::world::{ContextMask, Dataset};

pub const METRICS_FILE: &str = "metrics.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Touch radius in wall cells.
    pub touch_radius: f64,
    /// Consecutive frames a touch must last.
    pub touch_frames: usize,
    pub sample_steps: usize,
    /// Draws for the diversity probe on the first evaluated record; 0 skips it.
    pub diversity_samples: usize,
    pub seed: u64,
    /// Re-render context frames with this fraction of route holds.
    pub context_fraction: Option<f64>,
    pub sweep: SweepConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            touch_radius: 0.6,
            touch_frames: 3,
            sample_steps: 250,
            diversity_samples: 0,
            seed: 0,
            context_fraction: None,
            sweep: SweepConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.touch_radius > 0.0) || self.touch_frames == 0 || self.sample_steps == 0 {
            return Err(SabrError::Config(
                "touch radius, touch frames and sample steps must be positive".into(),
            ));
        }
        if self.diversity_samples == 1 {
            return Err(SabrError::Config(
                "the diversity probe needs at least two samples".into(),
            ));
        }
        if let Some(f) = self.context_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(SabrError::Config(format!(
                    "context fraction {f} outside (0, 1]"
                )));
            }
        }
        self.sweep.validate()
    }
}

/// Samples every listed record with the checkpoint's EMA weights and scores
/// it against the record's ground truth.
pub fn evaluate(
    ck: &Checkpoint,
    ds: &Dataset,
    indices: &[usize],
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    cfg.validate()?;
    let model = ck.ema_model()?;
    let m = &ds.manifest;
    let chain = respace(&ck.train.schedule.build()?, cfg.sample_steps)?;
    let fz = ds.featurizer()?;
    let base = RngStream::new(cfg.seed);
    let mut records = Vec::with_capacity(indices.len());
    let mut diversity = None;
    for (n, &i) in indices.iter().enumerate() {
        let r = ds
            .records
            .get(i)
            .ok_or_else(|| SabrError::Index(format!("record {i} of {}", ds.records.len())))?;
        let video = match cfg.context_fraction {
            Some(fraction) => r.with_context(
                &m.config,
                &m.intrinsics,
                ContextMask {
                    fraction,
                    ..r.ctx_mask
                },
            )?,
            None => r.video.clone(),
        };
        let cond = fz.featurize(&video)?.tokens.cast();
        let sample = sample_motion(
            &model,
            &cond,
            r.frames(),
            &chain,
            &mut base.split_index("sample", r.index as u64),
        )?;
        records.push(score_sample(
            r.index,
            &sample,
            &r.motion,
            &m.stats,
            &r.wall,
            &r.route,
            &m.body,
            &m.intrinsics,
            cfg,
        )?);
        if n == 0 && cfg.diversity_samples >= 2 {
            let seeds: Vec<u64> = (0..cfg.diversity_samples as u64)
                .map(|s| base.split_index("diversity", s).seed())
                .collect();
            diversity = Some(diversity_probe(&model, &cond, r.frames(), &chain, &seeds)?);
        }
    }
    MetricsReport::aggregate(records, diversity, cfg.sample_steps)
}

/// One EMA sample for record `record`, decoded and repaired.
pub fn sample_record(
    ck: &Checkpoint,
    ds: &Dataset,
    record: usize,
    steps: usize,
    seed: u64,
    context_fraction: Option<f64>,
) -> Result<MotionFile> {
    let model = ck.ema_model()?;
    let m = &ds.manifest;
    let r = ds
        .records
        .get(record)
        .ok_or_else(|| SabrError::Index(format!("record {record} of {}", ds.records.len())))?;
    let video = match context_fraction {
        Some(fraction) => r.with_context(
            &m.config,
            &m.intrinsics,
            ContextMask {
                fraction,
                ..r.ctx_mask
            },
        )?,
        None => r.video.clone(),
    };
    let cond = ds.featurizer()?.featurize(&video)?.tokens.cast();
    let chain = respace(&ck.train.schedule.build()?, steps)?;
    let x = sample_motion(
        &model,
        &cond,
        r.frames(),
        &chain,
        &mut RngStream::new(seed).split_index("sample", r.index as u64),
    )?;
    let decoded = decode_motion(&x, &m.stats, m.body.n_joints, m.body.shape_dim)?;
    let motion = encode_motion(&decoded.frames)?;
    Ok(MotionFile {
        header: MotionHeader {
            version: MOTION_VERSION,
            record,
            frames: motion.shape()[0],
            dim: motion.shape()[1],
            sample_steps: chain.selected().len(),
            seed,
            checkpoint_step: ck.step,
            manifest_hash: ck.manifest_hash.clone(),
            context_fraction,
            flagged_frames: decoded.flagged,
            payload_sha256: String::new(),
        },
        motion,
    })
}

pub fn write_metrics(report: &MetricsReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SabrError::io(dir, e))?;
    let path = dir.join(METRICS_FILE);
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| SabrError::io(&path, e))
}
