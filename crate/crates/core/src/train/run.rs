use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use super::{
    adamw_step, clip_grad_norm, loss_simple, Checkpoint, EmaState, OptimState, Sample, TrainConfig,
};
use crate::error::{Result, SabrError};
use crate::model::{ModelConfig, SabrDit};
use crate::tensor::RngStream;
use crate::world::Dataset;

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const HALT_FILE: &str = "halt.ckpt";
pub const LOG_FILE: &str = "train_log.csv";

/// Everything a training run needs besides the samples.
#[derive(Clone, Debug)]
pub struct TrainRun<'a> {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub manifest_hash: String,
    pub out_dir: Option<&'a Path>,
    pub resume: Option<Checkpoint>,
    /// Stops before this step, as if the process had been interrupted.
    pub halt_at: Option<u64>,
}

/// Normalized motion and conditioning tokens for the given records.
pub fn samples_from_dataset(ds: &Dataset, indices: &[usize]) -> Result<Vec<Sample<f32>>> {
    let fz = ds.featurizer()?;
    indices
        .iter()
        .map(|&i| {
            Ok(Sample {
                x0: ds.normalized(i)?.cast(),
                cond: fz.featurize(&ds.records[i].video)?.tokens.cast(),
            })
        })
        .collect()
}

/// Number of optimizer steps in one pass over `n` samples.
pub fn steps_per_epoch(n: usize, batch: usize) -> u64 {
    n.div_ceil(batch) as u64
}

/// Seeded sample order of `epoch`.
pub fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    RngStream::new(seed)
        .split_index("epoch", epoch)
        .shuffle(&mut order);
    order
}

struct Log {
    file: Option<File>,
}

impl Log {
    fn open(dir: Option<&Path>, append: bool) -> Result<Self> {
        let Some(dir) = dir else {
            return Ok(Log { file: None });
        };
        fs::create_dir_all(dir).map_err(|e| SabrError::io(dir, e))?;
        let path = dir.join(LOG_FILE);
        let fresh = !append || !path.exists();
        let mut file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(!fresh)
            .truncate(fresh)
            .open(&path)
            .map_err(|e| SabrError::io(&path, e))?;
        if fresh {
            writeln!(file, "step,epoch,loss,wall_seconds").map_err(|e| SabrError::io(&path, e))?;
        }
        Ok(Log { file: Some(file) })
    }

    fn row(&mut self, step: u64, epoch: u64, loss: f64, wall: f64) -> Result<()> {
        if let Some(f) = &mut self.file {
            writeln!(f, "{step},{epoch},{loss},{wall:.3}")
                .map_err(|e| SabrError::io(LOG_FILE, e))?;
        }
        Ok(())
    }
}

/// L_simple training with AdamW and EMA over seeded shuffled mini-batches.
/// Returns the final state; `progress` sees every (step, loss).
pub fn train_loop(
    samples: &[Sample<f32>],
    run: TrainRun<'_>,
    mut progress: impl FnMut(u64, f64),
) -> Result<Checkpoint> {
    let cfg = &run.train;
    cfg.validate()?;
    run.model.validate()?;
    if samples.is_empty() {
        return Err(SabrError::Contract("no training samples".into()));
    }
    let sched = cfg.schedule.build()?;
    let base = RngStream::new(cfg.seed);
    let spe = steps_per_epoch(samples.len(), cfg.batch_size);
    let total = cfg.max_steps.unwrap_or(cfg.epochs as u64 * spe);

    let (mut model, mut ema, mut optim, mut step, mut losses) = match run.resume {
        Some(ck) => {
            if ck.model != run.model {
                return Err(SabrError::Contract(
                    "resumed checkpoint has a different model configuration".into(),
                ));
            }
            let model = ck.weights_model()?;
            let ema = EmaState {
                decay: cfg.ema_decay,
                shadow: ck.ema.clone().unwrap_or_else(|| ck.weights.clone()),
            };
            let optim = ck
                .optim
                .clone()
                .unwrap_or_else(|| OptimState::new(&ck.weights));
            (model, ema, optim, ck.step, ck.losses)
        }
        None => {
            let model = SabrDit::<f32>::new(run.model.clone(), &mut base.split("init"))?;
            let ema = EmaState::new(model.params().tensors(), cfg.ema_decay);
            let optim = OptimState::new(model.params().tensors());
            (model, ema, optim, 0, Vec::new())
        }
    };
    let snapshot = |model: &SabrDit<f32>,
                    ema: &EmaState<f32>,
                    optim: &OptimState<f32>,
                    step: u64,
                    losses: &[f64]| Checkpoint {
        model: run.model.clone(),
        train: cfg.clone(),
        step,
        epoch: (step / spe) as usize,
        losses: losses.to_vec(),
        manifest_hash: run.manifest_hash.clone(),
        names: model.params().names().to_vec(),
        weights: model.params().tensors().to_vec(),
        ema: Some(ema.shadow.clone()),
        optim: Some(optim.clone()),
    };

    let mut log = Log::open(run.out_dir, step > 0)?;
    let start = Instant::now();
    let mut order_epoch = u64::MAX;
    let mut order = Vec::new();
    while step < total {
        if run.halt_at == Some(step) {
            break;
        }
        let epoch = step / spe;
        if epoch != order_epoch {
            order = epoch_order(cfg.seed, epoch, samples.len());
            order_epoch = epoch;
        }
        let b = (step % spe) as usize;
        let batch: Vec<Sample<f32>> = order
            [b * cfg.batch_size..((b + 1) * cfg.batch_size).min(samples.len())]
            .iter()
            .map(|&i| samples[i].clone())
            .collect();
        let mut rng = base.split_index("step", step);
        let out = match loss_simple(&model, &batch, &sched, &mut rng) {
            Ok(o) => o,
            Err(e @ (SabrError::Numeric(_) | SabrError::NumericInput(_))) => {
                if let Some(dir) = run.out_dir {
                    snapshot(&model, &ema, &optim, step, &losses).save(&dir.join(HALT_FILE))?;
                }
                return Err(SabrError::Numeric(format!("step {step}: {e}")));
            }
            Err(e) => return Err(e),
        };
        let mut grads = out.grads;
        if let Some(c) = cfg.grad_clip {
            clip_grad_norm(&mut grads, c);
        }
        adamw_step(model.params_mut().tensors_mut(), &grads, &mut optim, cfg)?;
        ema.update(model.params().tensors())?;
        losses.push(out.loss);
        log.row(step, epoch, out.loss, start.elapsed().as_secs_f64())?;
        progress(step, out.loss);
        step += 1;
        if let Some(dir) = run.out_dir {
            if step % spe == 0 && (step / spe).is_multiple_of(cfg.checkpoint_every as u64) {
                snapshot(&model, &ema, &optim, step, &losses).save(&dir.join(CHECKPOINT_FILE))?;
            }
        }
    }
    let ck = snapshot(&model, &ema, &optim, step, &losses);
    if let Some(dir) = run.out_dir {
        ck.save(&dir.join(CHECKPOINT_FILE))?;
    }
    Ok(ck)
}

/// Steps whose loss exceeds `factor` times the median of all earlier losses.
pub fn loss_spikes(losses: &[f64], factor: f64) -> Vec<usize> {
    let mut seen: Vec<f64> = Vec::with_capacity(losses.len());
    let mut out = Vec::new();
    for (i, &l) in losses.iter().enumerate() {
        if !seen.is_empty() {
            let mid = seen.len() / 2;
            let median = if seen.len() % 2 == 1 {
                seen[mid]
            } else {
                0.5 * (seen[mid - 1] + seen[mid])
            };
            if !l.is_finite() || l > factor * median {
                out.push(i);
            }
        } else if !l.is_finite() {
            out.push(i);
        }
        let pos = seen.partition_point(|v| *v < l);
        seen.insert(pos, l);
    }
    out
}
