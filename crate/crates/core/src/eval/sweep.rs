use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{evaluate, EvalConfig};
use crate::error::{Result, SabrError};
use crate::model::ModelConfig;
use crate::train::{samples_from_dataset, train_loop, TrainConfig, TrainRun};
use crate::world::{Dataset, Split};

pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub sample_steps: usize,
    pub fractions: Vec<f64>,
    pub models: Vec<String>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            epochs: 10,
            seeds: vec![0, 1, 2],
            sample_steps: 50,
            fractions: vec![0.25, 0.5, 1.0],
            models: vec!["desk-small".into(), "desk-base".into()],
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.sample_steps == 0 || self.seeds.is_empty() {
            return Err(SabrError::Config(
                "sweep needs positive epochs, sample steps and at least one seed".into(),
            ));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(SabrError::Config(format!(
                "data fraction {f} outside (0, 1]"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Data,
    Model,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Data => "data",
            Axis::Model => "model",
        })
    }
}

/// One sweep position: a share of the training split and a model size.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub label: String,
    pub fraction: f64,
    pub model: ModelConfig,
}

impl SweepPoint {
    /// Points along `axis`; the other coordinate stays at `base` and 100% data.
    pub fn along(axis: Axis, cfg: &SweepConfig, base: &ModelConfig) -> Result<Vec<SweepPoint>> {
        match axis {
            Axis::Data => Ok(cfg
                .fractions
                .iter()
                .map(|&f| SweepPoint {
                    label: format!("{}%", (f * 100.0).round()),
                    fraction: f,
                    model: base.clone(),
                })
                .collect()),
            Axis::Model => cfg
                .models
                .iter()
                .map(|name| {
                    let mut model =
                        ModelConfig::preset(name, base.group_dims.clone(), base.cond_width)?;
                    model.max_frames = base.max_frames;
                    Ok(SweepPoint {
                        label: name.clone(),
                        fraction: 1.0,
                        model,
                    })
                })
                .collect(),
        }
    }
}

/// Outcome of one (point, seed) run; failed runs keep their message.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: Axis,
    pub point: String,
    pub seed: u64,
    pub train_records: usize,
    pub steps: u64,
    pub final_loss: Option<f64>,
    pub movement_mse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: Axis,
    pub points: Vec<String>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Median held-out MSE per point over its successful seeds.
    pub fn medians(&self) -> Vec<(String, Option<f64>)> {
        self.points
            .iter()
            .map(|p| {
                let v: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| &r.point == p)
                    .filter_map(|r| r.movement_mse)
                    .collect();
                (p.clone(), median(&v))
            })
            .collect()
    }

    /// Whether the medians never increase along the point order.
    pub fn non_increasing(&self) -> bool {
        let m = self.medians();
        m.iter().all(|(_, v)| v.is_some()) && m.windows(2).all(|w| w[1].1 <= w[0].1)
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

/// Trains `point` for the sweep's epoch budget and measures EMA movement
/// adherence on the held-out split.
pub fn sweep_point(
    ds: &Dataset,
    axis: Axis,
    point: &SweepPoint,
    seed: u64,
    train: &TrainConfig,
    eval: &EvalConfig,
) -> SweepRow {
    let train_idx = ds.split(Split::Train);
    let n = ((point.fraction * train_idx.len() as f64).ceil() as usize)
        .clamp(1, train_idx.len().max(1));
    let mut row = SweepRow {
        axis,
        point: point.label.clone(),
        seed,
        train_records: n,
        steps: 0,
        final_loss: None,
        movement_mse: None,
        error: None,
    };
    let outcome = (|| -> Result<(u64, f64, f64)> {
        let heldout = ds.split(Split::Heldout);
        if train_idx.is_empty() || heldout.is_empty() {
            return Err(SabrError::Contract(
                "sweep needs both train and held-out records".into(),
            ));
        }
        let samples = samples_from_dataset(ds, &train_idx[..n])?;
        let cfg = TrainConfig {
            seed,
            epochs: eval.sweep.epochs,
            max_steps: None,
            ..train.clone()
        };
        let run = TrainRun {
            model: point.model.clone(),
            train: cfg,
            manifest_hash: ds.manifest.hash()?,
            out_dir: None,
            resume: None,
            halt_at: None,
        };
        let ck = train_loop(&samples, run, |_, _| {})?;
        let tail = &ck.losses[ck.losses.len().saturating_sub(100)..];
        let final_loss = tail.iter().sum::<f64>() / tail.len() as f64;
        let ecfg = EvalConfig {
            sample_steps: eval.sweep.sample_steps,
            diversity_samples: 0,
            seed,
            ..eval.clone()
        };
        let report = evaluate(&ck, ds, &heldout, &ecfg)?;
        Ok((ck.step, final_loss, report.movement_mse))
    })();
    match outcome {
        Ok((steps, loss, mse)) => {
            row.steps = steps;
            row.final_loss = Some(loss);
            row.movement_mse = Some(mse);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Every point under every seed. Failed runs become marked rows.
pub fn run_sweep(
    ds: &Dataset,
    axis: Axis,
    points: &[SweepPoint],
    train: &TrainConfig,
    eval: &EvalConfig,
    mut progress: impl FnMut(&SweepRow),
) -> Result<SweepResult> {
    if points.is_empty() {
        return Err(SabrError::Contract("sweep without points".into()));
    }
    eval.validate()?;
    let mut rows = Vec::new();
    for p in points {
        for &seed in &eval.sweep.seeds {
            let row = sweep_point(ds, axis, p, seed, train, eval);
            progress(&row);
            rows.push(row);
        }
    }
    Ok(SweepResult {
        axis,
        points: points.iter().map(|p| p.label.clone()).collect(),
        rows,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn write_sweep_csv(result: &SweepResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SabrError::io(dir, e))?;
    let mut out =
        String::from("axis,point,seed,train_records,steps,final_loss,movement_mse,status\n");
    for r in &result.rows {
        let status = match &r.error {
            Some(e) => format!("\"failed: {}\"", e.replace('"', "'")),
            None => "ok".into(),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.axis,
            r.point,
            r.seed,
            r.train_records,
            r.steps,
            opt(r.final_loss),
            opt(r.movement_mse),
            status
        ));
    }
    let path = dir.join(SWEEP_FILE);
    fs::write(&path, out).map_err(|e| SabrError::io(&path, e))
}
