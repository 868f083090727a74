use serde::{Deserialize, Serialize};

use crate::diffusion::ScheduleConfig;
use crate::error::{Result, SabrError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops after this many optimizer steps when set, whatever `epochs` says.
    pub max_steps: Option<u64>,
    pub ema_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub schedule: ScheduleConfig,
    pub checkpoint_every: usize,
    /// Global gradient-norm clip; off unless a run needs rescuing.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 0.0,
            batch_size: 16,
            epochs: 10,
            max_steps: None,
            ema_decay: 0.9999,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            schedule: ScheduleConfig::default(),
            checkpoint_every: 1,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    /// Desk-scale defaults: batch 4.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SabrError::Config(format!("train: {m}")));
        if !(self.learning_rate > 0.0) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad(format!(
                "ema_decay must lie in [0, 1), got {}",
                self.ema_decay
            ));
        }
        if !(self.weight_decay >= 0.0) || self.batch_size == 0 || self.checkpoint_every == 0 {
            return bad("weight_decay, batch_size or checkpoint_every out of range".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || !(self.adam_eps > 0.0)
        {
            return bad("Adam coefficients out of range".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        self.schedule.build()?;
        Ok(())
    }
}
